use super::array::Array2;
use crate::error::{Error, Result};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2,
    pub grad: Array2,
}

/// Named parameters, each paired with a same-shaped gradient accumulator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let grad = Array2::zeros(value.rows(), value.cols());
        self.params.push(Param { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Array2 {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2 {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2 {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2 {
        &mut self.params[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn bump_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.as_slice().len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_match_shapes_and_reset() {
        let mut store = ParamStore::new();
        let a = store.add("a", Array2::zeros(3, 2)).unwrap();
        let b = store.add("b", Array2::zeros(1, 4)).unwrap();
        assert!(store.add("a", Array2::zeros(1, 1)).is_err());
        for p in store.iter() {
            assert_eq!(p.value.shape(), p.grad.shape());
        }
        store.grad_mut(a).fill(3.0);
        store.grad_mut(b).fill(-1.0);
        store.zero_grads();
        assert!(store.iter().all(|p| p.grad.as_slice().iter().all(|&g| g == 0.0)));
        assert_eq!(store.id("b"), Some(b));
    }
}
