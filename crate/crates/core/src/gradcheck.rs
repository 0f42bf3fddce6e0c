//! Finite-difference checks of every hand-written backward pass and of the
//! full training objective.
//!
//! Each op check draws random inputs and a random upstream vector `r`, then
//! compares the analytic gradient of `<r, op(x)>` against central
//! differences. Inputs that land within `KINK_MARGIN` of a ReLU or max
//! tie are redrawn so the difference quotient never straddles a kink.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::corpus::{generate_corpus, Dataset, GenConfig, Product};
use crate::diffcore::fd::{numeric_grad, relative_error, STEP};
use crate::diffcore::{self as dc, Array2};
use crate::error::Result;
use crate::matching::{
    combine_gold_labels, combine_gold_labels_backward, label_prior_loss,
    label_prior_loss_backward, Pooling, Variant,
};
use crate::model::{InitSpec, Model, ModelSpec, Objective, SamplerKey};
use crate::predictor::{predict_logits, predict_logits_backward};
use crate::rng::{self, StreamRng};

pub const TOLERANCE: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;
const GRADCHECK_TAG: u64 = 0x4743_484b;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCheck {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

fn gauss(rng: &mut StreamRng, rows: usize, cols: usize) -> Array2 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Array2::from_fn(rows, cols, |_, _| n.sample(rng))
}

fn gvec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    gauss(rng, 1, n).into_vec()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    dc::dot(a, b)
}

struct Case {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
}

fn run_op(name: &str, cases: usize, seed: u64, op: u64, mut case: impl FnMut(&mut StreamRng) -> Case) -> OpCheck {
    let mut max_rel_err: f64 = 0.0;
    for i in 0..cases {
        let mut rng = rng::stream(seed, &[GRADCHECK_TAG, op, i as u64]);
        let c = case(&mut rng);
        max_rel_err = max_rel_err.max(relative_error(&c.analytic, &c.numeric));
    }
    OpCheck {
        name: name.to_string(),
        cases,
        max_rel_err,
    }
}

fn far_from_zero(xs: &[f64]) -> bool {
    xs.iter().all(|v| v.abs() > KINK_MARGIN)
}

/// Column maxima separated from the runner-up by more than the margin.
fn clear_max(x: &Array2) -> bool {
    (0..x.cols()).all(|c| {
        let mut col: Vec<f64> = (0..x.rows()).map(|r| x.get(r, c)).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        col.len() < 2 || col[0] - col[1] > KINK_MARGIN
    })
}

fn check_embed(rng: &mut StreamRng) -> Case {
    let (v, d) = (rng.random_range(2..7), rng.random_range(1..5));
    let len = rng.random_range(1..8);
    let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
    let table = gauss(rng, v, d);
    let r = gauss(rng, len, d);
    let mut g = Array2::zeros(v, d);
    dc::embed_lookup_backward(&mut g, &ids, &r);
    let numeric = numeric_grad(
        |t| {
            let t = Array2::from_vec(v, d, t.to_vec()).unwrap();
            inner(dc::embed_lookup(&t, &ids).unwrap().as_slice(), r.as_slice())
        },
        table.as_slice(),
        STEP,
    );
    Case {
        analytic: g.into_vec(),
        numeric,
    }
}

fn check_conv(rng: &mut StreamRng, relu: bool) -> Case {
    loop {
        let k = rng.random_range(1..5);
        let len = k + rng.random_range(0..5);
        let (d_in, d_out) = (rng.random_range(1..5), rng.random_range(1..5));
        let x = gauss(rng, len, d_in);
        let w = gauss(rng, d_out, k * d_in);
        let b = gvec(rng, d_out);
        let pre = dc::conv1d_seq(&x, &w, &b, k, false).unwrap();
        if relu && !far_from_zero(pre.as_slice()) {
            continue;
        }
        let out = dc::conv1d_seq(&x, &w, &b, k, relu).unwrap();
        let r = gauss(rng, out.rows(), d_out);
        let mut gw = Array2::zeros(d_out, k * d_in);
        let mut gb = vec![0.0; d_out];
        let dx = dc::conv1d_seq_backward(&x, &w, &out, k, relu, &r, &mut gw, &mut gb);
        let mut analytic = dx.into_vec();
        analytic.extend_from_slice(gw.as_slice());
        analytic.extend(gb);
        let nx = len * d_in;
        let nw = d_out * k * d_in;
        let mut flat = x.as_slice().to_vec();
        flat.extend_from_slice(w.as_slice());
        flat.extend_from_slice(&b);
        let numeric = numeric_grad(
            |p| {
                let x = Array2::from_vec(len, d_in, p[..nx].to_vec()).unwrap();
                let w = Array2::from_vec(d_out, k * d_in, p[nx..nx + nw].to_vec()).unwrap();
                let y = dc::conv1d_seq(&x, &w, &p[nx + nw..], k, relu).unwrap();
                inner(y.as_slice(), r.as_slice())
            },
            &flat,
            STEP,
        );
        return Case { analytic, numeric };
    }
}

fn check_mean_pool(rng: &mut StreamRng) -> Case {
    let (n, d) = (rng.random_range(1..7), rng.random_range(1..5));
    let mut valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    valid[rng.random_range(0..n)] = true;
    let x = gauss(rng, n, d);
    let r = gvec(rng, d);
    let mut dx = Array2::zeros(n, d);
    dc::mean_pool_rows_backward(&mut dx, &valid, &r);
    let numeric = numeric_grad(
        |p| {
            let x = Array2::from_vec(n, d, p.to_vec()).unwrap();
            inner(&dc::mean_pool_rows(&x, &valid).unwrap(), &r)
        },
        x.as_slice(),
        STEP,
    );
    Case {
        analytic: dx.into_vec(),
        numeric,
    }
}

fn check_max_pool(rng: &mut StreamRng) -> Case {
    loop {
        let (n, d) = (rng.random_range(1..7), rng.random_range(1..5));
        let x = gauss(rng, n, d);
        if !clear_max(&x) {
            continue;
        }
        let r = gvec(rng, d);
        let pool = dc::max_pool_rows(&x).unwrap();
        let mut dx = Array2::zeros(n, d);
        dc::max_pool_rows_backward(&mut dx, &pool, &r);
        let numeric = numeric_grad(
            |p| {
                let x = Array2::from_vec(n, d, p.to_vec()).unwrap();
                inner(&dc::max_pool_rows(&x).unwrap().values, &r)
            },
            x.as_slice(),
            STEP,
        );
        return Case {
            analytic: dx.into_vec(),
            numeric,
        };
    }
}

fn check_cosine(rng: &mut StreamRng) -> Case {
    let d = rng.random_range(1..8);
    let (u, v) = (gvec(rng, d), gvec(rng, d));
    let up = gvec(rng, 1)[0];
    let (du, dv) = dc::cosine_backward(&u, &v, up);
    let mut analytic = du;
    analytic.extend(dv);
    let mut flat = u.clone();
    flat.extend_from_slice(&v);
    let numeric = numeric_grad(|p| up * dc::cosine(&p[..d], &p[d..]), &flat, STEP);
    Case { analytic, numeric }
}

fn check_affine(rng: &mut StreamRng) -> Case {
    let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
    let x = gvec(rng, i);
    let w = gauss(rng, o, i);
    let b = gvec(rng, o);
    let r = gvec(rng, o);
    let mut gw = Array2::zeros(o, i);
    let mut gb = vec![0.0; o];
    let mut analytic = dc::affine_backward(&x, &w, &r, &mut gw, &mut gb);
    analytic.extend_from_slice(gw.as_slice());
    analytic.extend(gb);
    let mut flat = x.clone();
    flat.extend_from_slice(w.as_slice());
    flat.extend_from_slice(&b);
    let numeric = numeric_grad(
        |p| {
            let w = Array2::from_vec(o, i, p[i..i + o * i].to_vec()).unwrap();
            inner(&dc::affine(&p[..i], &w, &p[i + o * i..]), &r)
        },
        &flat,
        STEP,
    );
    Case { analytic, numeric }
}

fn check_relu(rng: &mut StreamRng) -> Case {
    loop {
        let n = rng.random_range(1..10);
        let x = gvec(rng, n);
        if !far_from_zero(&x) {
            continue;
        }
        let r = gvec(rng, n);
        let analytic = dc::relu_backward(&dc::relu(&x), &r);
        let numeric = numeric_grad(|p| inner(&dc::relu(p), &r), &x, STEP);
        return Case { analytic, numeric };
    }
}

fn check_softmax(rng: &mut StreamRng) -> Case {
    let n = rng.random_range(1..8);
    let z = gvec(rng, n);
    let r = gvec(rng, n);
    let analytic = dc::softmax_backward(&dc::softmax(&z), &r);
    let numeric = numeric_grad(|p| inner(&dc::softmax(p), &r), &z, STEP);
    Case { analytic, numeric }
}

fn check_bce(rng: &mut StreamRng) -> Case {
    let n = rng.random_range(1..8);
    let z: Vec<f64> = gvec(rng, n).iter().map(|v| 3.0 * v).collect();
    let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let up = gvec(rng, 1)[0];
    let analytic = dc::bce_backward(&z, &y, up);
    let numeric = numeric_grad(|p| up * dc::bce(p, &y), &z, STEP);
    Case { analytic, numeric }
}

fn check_combine(rng: &mut StreamRng, mode: Pooling) -> Case {
    loop {
        let (n, d) = (rng.random_range(1..5), rng.random_range(1..6));
        let x = gauss(rng, n, d);
        if mode == Pooling::Max && !clear_max(&x) {
            continue;
        }
        let r = gvec(rng, d);
        let c = combine_gold_labels(&x, mode).unwrap();
        let analytic = combine_gold_labels_backward(&c, n, &r).into_vec();
        let numeric = numeric_grad(
            |p| {
                let x = Array2::from_vec(n, d, p.to_vec()).unwrap();
                inner(combine_gold_labels(&x, mode).unwrap().values(), &r)
            },
            x.as_slice(),
            STEP,
        );
        return Case { analytic, numeric };
    }
}

fn check_prior(rng: &mut StreamRng) -> Case {
    let (n, d) = (rng.random_range(1..7), rng.random_range(1..5));
    let h = gauss(rng, n, d);
    let up = gvec(rng, 1)[0];
    let analytic = label_prior_loss_backward(&h, up).into_vec();
    let numeric = numeric_grad(
        |p| up * label_prior_loss(&Array2::from_vec(n, d, p.to_vec()).unwrap()),
        h.as_slice(),
        STEP,
    );
    Case { analytic, numeric }
}

fn check_attention(rng: &mut StreamRng) -> Case {
    let (c, d, n) = (rng.random_range(1..6), rng.random_range(1..5), rng.random_range(1..5));
    let mut valid: Vec<bool> = (0..c).map(|_| rng.random_bool(0.8)).collect();
    valid[rng.random_range(0..c)] = true;
    let t = gauss(rng, c, d);
    let h = gauss(rng, n, d);
    let w = gauss(rng, n, d);
    let b = gvec(rng, n);
    let r = gvec(rng, n);
    let att = predict_logits(&t, &valid, &h, &w, &b).unwrap();
    let g = predict_logits_backward(&t, &valid, &h, &w, &att, &r);
    let mut analytic = g.t_final.into_vec();
    analytic.extend(g.h_l.into_vec());
    analytic.extend(g.weight.into_vec());
    analytic.extend(g.bias);
    let mut flat = t.as_slice().to_vec();
    flat.extend_from_slice(h.as_slice());
    flat.extend_from_slice(w.as_slice());
    flat.extend_from_slice(&b);
    let (nt, nh) = (c * d, n * d);
    let numeric = numeric_grad(
        |p| {
            let t = Array2::from_vec(c, d, p[..nt].to_vec()).unwrap();
            let h = Array2::from_vec(n, d, p[nt..nt + nh].to_vec()).unwrap();
            let w = Array2::from_vec(n, d, p[nt + nh..nt + 2 * nh].to_vec()).unwrap();
            let z = predict_logits(&t, &valid, &h, &w, &p[nt + 2 * nh..]).unwrap().logits;
            inner(&z, &r)
        },
        &flat,
        STEP,
    );
    Case { analytic, numeric }
}

/// Checks every differentiable kernel op over `cases` random draws each.
pub fn op_suite(seed: u64, cases: usize) -> Vec<OpCheck> {
    vec![
        run_op("embed_lookup", cases, seed, 0, check_embed),
        run_op("conv1d", cases, seed, 1, |r| check_conv(r, false)),
        run_op("conv1d_relu", cases, seed, 2, |r| check_conv(r, true)),
        run_op("mean_pool_rows", cases, seed, 3, check_mean_pool),
        run_op("max_pool_rows", cases, seed, 4, check_max_pool),
        run_op("cosine", cases, seed, 5, check_cosine),
        run_op("affine", cases, seed, 6, check_affine),
        run_op("relu", cases, seed, 7, check_relu),
        run_op("softmax", cases, seed, 8, check_softmax),
        run_op("bce", cases, seed, 9, check_bce),
        run_op("combine_mean", cases, seed, 10, |r| check_combine(r, Pooling::Mean)),
        run_op("combine_max", cases, seed, 11, |r| check_combine(r, Pooling::Max)),
        run_op("label_prior", cases, seed, 12, check_prior),
        run_op("label_attention", cases, seed, 13, check_attention),
    ]
}

/// Tiny dataset with 6 labels used by the end-to-end check.
pub fn tiny_dataset(seed: u64) -> Result<Dataset> {
    let cfg = GenConfig {
        n_attributes: 2,
        values_per_attribute: 3,
        n_train: 6,
        n_val: 1,
        n_test: 1,
        avg_labels_per_product: 2.0,
        noise_token_count: 4,
        noise_vocab_size: 12,
        multi_value_rate: 0.5,
        ..GenConfig::default()
    };
    generate_corpus(&cfg, seed)
}

/// Gradient of the total batch loss with respect to `n_params` randomly
/// chosen scalar parameters, at `d = dim`, against central differences.
pub fn end_to_end(seed: u64, dim: usize, n_params: usize, variant: Variant, pooling: Pooling, f: f64) -> Result<OpCheck> {
    let ds = tiny_dataset(seed)?;
    let spec = ModelSpec {
        vocab_size: ds.vocab.len(),
        n_labels: ds.n_labels(),
        dim,
        kernel: 2,
        conv_relu: true,
        share_embeddings: false,
        label_table: true,
    };
    let init = InitSpec {
        text_embedding_std: 0.5,
        label_embedding_std: 0.5,
        output_bias: -0.5,
    };
    let mut model = Model::init(spec, init, seed)?;
    let batch: Vec<&Product> = ds.train.iter().collect();
    let objective = Objective { variant, pooling, f };
    let key = SamplerKey { seed, epoch: 0 };
    model.store.zero_grads();
    model.accumulate_gradients(&ds.schema, &batch, objective, key)?;

    let mut rng = rng::stream(seed, &[GRADCHECK_TAG, 0xe2e]);
    let sizes: Vec<usize> = model.store.iter().map(|p| p.value.as_slice().len()).collect();
    let mut params: Vec<(usize, usize)> = Vec::with_capacity(n_params);
    while params.len() < n_params.min(sizes.iter().sum()) {
        let pi = rng.random_range(0..sizes.len());
        let g = model.store.iter().nth(pi).expect("index in range").grad.as_slice();
        let live: Vec<usize> = (0..g.len()).filter(|&i| g[i] != 0.0).collect();
        let ei = if live.is_empty() {
            rng.random_range(0..sizes[pi])
        } else {
            live[rng.random_range(0..live.len())]
        };
        if !params.contains(&(pi, ei)) {
            params.push((pi, ei));
        }
    }
    let analytic: Vec<f64> = params
        .iter()
        .map(|&(pi, ei)| model.store.iter().nth(pi).expect("index").grad.as_slice()[ei])
        .collect();
    let x: Vec<f64> = params
        .iter()
        .map(|&(pi, ei)| model.store.iter().nth(pi).expect("index").value.as_slice()[ei])
        .collect();
    let mut probe = model.clone();
    let numeric = numeric_grad(
        |p| {
            for (&(pi, ei), &v) in params.iter().zip(p) {
                probe.store.iter_mut().nth(pi).expect("index").value.as_mut_slice()[ei] = v;
            }
            probe
                .batch_loss(&ds.schema, &batch, objective, key)
                .expect("loss evaluates")
                .total
        },
        &x,
        STEP,
    );
    Ok(OpCheck {
        name: format!("total_loss[{}/{}]", variant.name(), pooling.name()),
        cases: n_params,
        max_rel_err: relative_error(&analytic, &numeric),
    })
}

/// Op suite plus the end-to-end check for every variant and pooling mode.
pub fn full_suite(seed: u64, cases: usize) -> Result<Vec<OpCheck>> {
    let mut out = op_suite(seed, cases);
    for variant in [Variant::Full, Variant::NoNs, Variant::NoPrior, Variant::BceOnly] {
        for pooling in Pooling::ALL {
            out.push(end_to_end(seed, 8, 10, variant, pooling, 0.3)?);
        }
    }
    Ok(out)
}
