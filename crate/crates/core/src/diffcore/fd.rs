//! Central finite differences, used as the reference for analytic gradients.

use super::array::norm;

/// Default step for central differences.
pub const STEP: f64 = 1e-5;

/// Numerical gradient of `f` at `x` by central differences.
pub fn numeric_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole vectors; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        return norm(&diff);
    }
    norm(&diff) / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = numeric_grad(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], STEP);
        assert!(relative_error(&[4.0, 3.0], &g) < 1e-9);
    }
}
