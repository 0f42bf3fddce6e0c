use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use avex_core::corpus::{
    generate_corpus, load_dataset, save_dataset, Attribute, AttributeSchema, GenConfig, Label, Product,
};
use avex_core::diffcore::{conv1d_seq, cosine, cosine_backward, softmax, Array2};
use avex_core::evaluation::{evaluate_model, MetricsReport};
use avex_core::matching::{
    combine_gold_labels, negative_sample_loss, sample_negative_labels, semantic_match_loss, total_loss, LossParts,
    Pooling, Variant,
};
use avex_core::model::{InitSpec, Model, ModelSpec, Objective, SamplerKey};
use avex_core::predictor::{decide, predict_logits};
use avex_core::rng::stream;
use avex_core::training::{init_model, train, Optimizer, OptimizerConfig, TrainConfig};

fn grid_schema(sizes: &[usize]) -> AttributeSchema {
    let attributes = (0..sizes.len())
        .map(|a| Attribute {
            attr_id: a,
            name_tokens: vec![2 + a],
        })
        .collect();
    let mut labels = Vec::new();
    for (a, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            let l = labels.len();
            labels.push(Label {
                label_id: l,
                attr_id: a,
                value_tokens: vec![100 + l],
            });
        }
    }
    AttributeSchema::new(attributes, labels).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Array2::from_vec(rows, cols, v).unwrap())
}

fn small_corpus(seed: u64) -> avex_core::corpus::Dataset {
    let cfg = GenConfig {
        n_attributes: 3,
        values_per_attribute: 3,
        n_train: 24,
        n_val: 6,
        n_test: 6,
        noise_token_count: 6,
        noise_vocab_size: 30,
        ..GenConfig::default()
    };
    generate_corpus(&cfg, seed).unwrap()
}

fn small_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        d_h: 8,
        d_l: 8,
        batch_size: 8,
        epochs: 2,
        seed,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampler_is_sound(
        sizes in prop::collection::vec(1usize..6, 1..6),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 1..8),
        seed in any::<u64>(),
    ) {
        let schema = grid_schema(&sizes);
        let n = schema.n_labels();
        let gold: BTreeSet<usize> = picks.iter().map(|i| i.index(n)).collect();
        let gold: Vec<usize> = gold.into_iter().collect();
        let by_attr = schema.gold_by_attribute(&gold);
        for draw in 0..50u64 {
            let r = sample_negative_labels(schema.a2l(), &by_attr, &mut stream(seed, &[draw]));
            let distinct: BTreeSet<_> = r.neg_label_ids.iter().collect();
            prop_assert_eq!(distinct.len(), r.neg_label_ids.len());
            for &l in &r.neg_label_ids {
                prop_assert!(!gold.contains(&l));
                prop_assert!(by_attr.contains_key(&schema.attr_of(l)));
            }
            for (a, g) in &by_attr {
                let candidates = schema.a2l()[a].len() - g.len();
                prop_assert_eq!(r.per_attribute_counts[a], g.len().min(candidates));
                let drawn = r.neg_label_ids.iter().filter(|&&l| schema.attr_of(l) == *a).count();
                prop_assert_eq!(drawn, g.len().min(candidates));
            }
        }
    }

    #[test]
    fn combine_ignores_gold_order(m in matrix(4, 5), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..4).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut stream(seed, &[]));
        let shuffled = m.select_rows(&order);
        for mode in Pooling::ALL {
            let a = combine_gold_labels(&m, mode).unwrap();
            let b = combine_gold_labels(&shuffled, mode).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one(z in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let s: f64 = softmax(&z).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn cosine_is_bounded(u in prop::collection::vec(-1e3f64..1e3, 6), v in prop::collection::vec(-1e3f64..1e3, 6)) {
        let c = cosine(&u, &v);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn conv_output_shape(len in 1usize..20, k in 1usize..6, d_in in 1usize..4, d_out in 1usize..4) {
        prop_assume!(len >= k);
        let x = Array2::zeros(len, d_in);
        let f = Array2::zeros(d_out, k * d_in);
        let y = conv1d_seq(&x, &f, &vec![0.0; d_out], k, true).unwrap();
        prop_assert_eq!(y.shape(), (len - k + 1, d_out));
    }

    #[test]
    fn matching_losses_are_bounded(
        t in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..6),
        l in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..6),
    ) {
        let n = t.len().min(l.len());
        let pairs: Vec<_> = t[..n].iter().zip(&l[..n]).map(|(a, b)| (a.clone(), b.clone())).collect();
        let sm = semantic_match_loss(&pairs).unwrap();
        let negs: Vec<_> = t[..n].iter().zip(&l[..n]).map(|(a, b)| (a.clone(), Some(Array2::from_rows(&[b])))).collect();
        let ns = negative_sample_loss(&negs).unwrap();
        prop_assert!((-1.0..=1.0).contains(&sm));
        prop_assert!((-1.0..=1.0).contains(&ns));
    }

    #[test]
    fn full_minus_no_ns_is_weighted_negative_loss(
        l_bce in 0.0f64..5.0, l_sm in -1.0f64..1.0, l_ns in -1.0f64..1.0, l_pr in 0.0f64..5.0, f in 0.0f64..=1.0,
    ) {
        let parts = LossParts { l_bce, l_sm, l_ns, l_pr };
        let full = total_loss(parts, Variant::Full, f).unwrap();
        let no_ns = total_loss(parts, Variant::NoNs, f).unwrap();
        prop_assert!((full - no_ns - (1.0 - f) * l_ns).abs() <= 1e-12);
    }

    #[test]
    fn semantic_matching_step_raises_cosine(
        t in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 1..5),
        l in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 5), 1..5),
    ) {
        let n = t.len().min(l.len());
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = t[..n].iter().cloned().zip(l[..n].iter().cloned()).collect();
        prop_assume!(pairs.iter().all(|(a, b)| {
            let c = cosine(a, b);
            c.abs() < 0.999 && a.iter().any(|x| x.abs() > 0.1) && b.iter().any(|x| x.abs() > 0.1)
        }));
        let before = semantic_match_loss(&pairs).unwrap();
        let eta = 1e-3;
        for (a, b) in pairs.iter_mut() {
            let (ga, gb) = cosine_backward(a, b, -1.0 / n as f64);
            a.iter_mut().zip(&ga).for_each(|(x, g)| *x -= eta * g);
            b.iter_mut().zip(&gb).for_each(|(x, g)| *x -= eta * g);
        }
        let after = semantic_match_loss(&pairs).unwrap();
        prop_assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn logits_are_permutation_equivariant(
        t in matrix(5, 3), h in matrix(4, 3), w in matrix(4, 3),
        b in prop::collection::vec(-1.0f64..1.0, 4), seed in any::<u64>(),
    ) {
        let mut perm: Vec<usize> = (0..4).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut stream(seed, &[]));
        let valid = vec![true; 5];
        let base = predict_logits(&t, &valid, &h, &w, &b).unwrap().logits;
        let pb: Vec<f64> = perm.iter().map(|&i| b[i]).collect();
        let permuted = predict_logits(&t, &valid, &h.select_rows(&perm), &w.select_rows(&perm), &pb).unwrap().logits;
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((permuted[j] - base[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn raising_threshold_only_removes_predictions(
        logits in prop::collection::vec(-6.0f64..6.0, 1..12), lo in 0.01f64..0.99, hi in 0.01f64..0.99,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let a: BTreeSet<usize> = decide(&logits, lo).into_iter().collect();
        let b: BTreeSet<usize> = decide(&logits, hi).into_iter().collect();
        prop_assert!(b.is_subset(&a));
    }

    #[test]
    fn micro_f1_is_harmonic_mean_of_pooled_p_and_r(
        gold in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..4), 1..10),
        pred in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..4), 1..10),
    ) {
        let n = gold.len().min(pred.len());
        let g: Vec<Vec<usize>> = gold[..n].iter().map(|s| s.iter().copied().collect()).collect();
        let p: Vec<Vec<usize>> = pred[..n].iter().map(|s| s.iter().copied().collect()).collect();
        let r = MetricsReport::from_sets(&grid_schema(&[3, 3]), &g, &p).unwrap();
        let expect = if r.precision + r.recall > 0.0 {
            2.0 * r.precision * r.recall / (r.precision + r.recall)
        } else {
            0.0
        };
        prop_assert!((r.micro_f1 - expect).abs() <= 1e-9);
        let tp: usize = g.iter().zip(&p).map(|(g, p)| p.iter().filter(|l| g.contains(l)).count()).sum();
        prop_assert_eq!(r.totals.tp as usize, tp);
    }
}

#[test]
fn sampler_is_uniform_over_candidates() {
    let schema = grid_schema(&[4]);
    let by_attr = schema.gold_by_attribute(&[0]);
    let draws = 30_000u64;
    let mut counts = [0u64; 4];
    for d in 0..draws {
        let r = sample_negative_labels(schema.a2l(), &by_attr, &mut stream(5, &[d]));
        counts[r.neg_label_ids[0]] += 1;
    }
    let sd = (draws as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    assert_eq!(counts[0], 0);
    for &c in &counts[1..] {
        assert!((c as f64 - draws as f64 / 3.0).abs() <= 4.0 * sd, "{counts:?}");
    }
}

#[test]
fn generated_products_contain_gold_values_and_hit_label_rate() {
    let cfg = GenConfig {
        n_train: 1000,
        ..GenConfig::default()
    };
    let ds = generate_corpus(&cfg, 21).unwrap();
    for p in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        assert!(p.contains_gold_values(&ds.schema), "product {}", p.product_id);
    }
    let mean = ds.train.iter().map(|p| p.gold_labels.len()).sum::<usize>() as f64 / ds.train.len() as f64;
    assert!((mean - cfg.avg_labels_per_product).abs() <= 0.1 * cfg.avg_labels_per_product, "{mean}");
}

#[test]
fn dataset_round_trips_through_disk() {
    let ds = small_corpus(4);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn label_encoder_is_permutation_consistent() {
    let base = grid_schema(&[3, 2]);
    let perm = [3usize, 0, 4, 1, 2];
    let labels = base
        .labels()
        .iter()
        .map(|l| Label {
            label_id: perm[l.label_id],
            ..l.clone()
        })
        .collect();
    let permuted = AttributeSchema::new(base.attributes().to_vec(), labels).unwrap();
    let spec = ModelSpec {
        vocab_size: 120,
        n_labels: 5,
        dim: 6,
        kernel: 2,
        conv_relu: true,
        share_embeddings: false,
        label_table: false,
    };
    let init = InitSpec {
        label_embedding_std: 0.5,
        ..InitSpec::default()
    };
    let model = Model::init(spec, init, 3).unwrap();
    let a = model.encode_labels(&base).unwrap().h_l;
    let b = model.encode_labels(&permuted).unwrap().h_l;
    for (old, &new) in perm.iter().enumerate() {
        assert_eq!(a.row(old), b.row(new));
    }
}

#[test]
fn optimizer_steps_decrease_loss_on_a_frozen_batch() {
    let ds = small_corpus(8);
    let cfg = small_train_config(1);
    let mut model = init_model(&ds, &cfg).unwrap();
    let mut opt = Optimizer::new(OptimizerConfig::default(), 1e-3, &model.store);
    let batch: Vec<&Product> = ds.train.iter().take(8).collect();
    let objective = Objective {
        variant: Variant::Full,
        pooling: Pooling::Max,
        f: 0.5,
    };
    let key = SamplerKey { seed: 1, epoch: 0 };
    let mut losses = Vec::new();
    for _ in 0..=50 {
        model.store.zero_grads();
        losses.push(model.accumulate_gradients(&ds.schema, &batch, objective, key).unwrap().total);
        opt.step(&mut model.store);
    }
    let violations = losses.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    assert!(violations <= 2, "{violations} increases in {losses:?}");
    assert!(losses[50] < losses[0]);
}

#[test]
fn training_is_bit_identical_for_a_seed() {
    let ds = small_corpus(2);
    let cfg = small_train_config(6);
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.log, b.log);
    let c = train(&ds, &TrainConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
}

#[test]
fn checkpoint_refuses_another_schema() {
    let ds = small_corpus(2);
    let other = generate_corpus(
        &GenConfig {
            n_attributes: 4,
            values_per_attribute: 2,
            n_train: 10,
            n_val: 2,
            n_test: 2,
            ..GenConfig::default()
        },
        2,
    )
    .unwrap();
    let out = train(&ds, &small_train_config(0)).unwrap();
    assert!(out.checkpoint.check_fingerprint(&ds).is_ok());
    assert!(out.checkpoint.check_fingerprint(&other).is_err());
    assert!(avex_core::evaluation::evaluate(&out.checkpoint, &other, avex_core::corpus::Split::Test, 0.5).is_err());
}

#[test]
fn raising_threshold_never_raises_recall() {
    let ds = small_corpus(3);
    let out = train(&ds, &TrainConfig { epochs: 4, learning_rate: 1e-2, ..small_train_config(0) }).unwrap();
    let model = out.checkpoint.model().unwrap();
    let mut last = f64::INFINITY;
    for t in [0.05, 0.2, 0.4, 0.5, 0.6, 0.8, 0.95] {
        let r = evaluate_model(&model, &ds.schema, &ds.test, t).unwrap();
        assert!(r.recall <= last + 1e-12);
        last = r.recall;
    }
}

#[test]
fn macro_f1_falls_far_below_micro_on_long_tail_labels() {
    let cfg = GenConfig {
        n_attributes: 10,
        values_per_attribute: 10,
        n_train: 50,
        n_val: 10,
        n_test: 1000,
        label_skew: 1.5,
        ..GenConfig::default()
    };
    let ds = generate_corpus(&cfg, 13).unwrap();
    let mut support: BTreeMap<usize, usize> = BTreeMap::new();
    for p in &ds.test {
        for &l in &p.gold_labels {
            *support.entry(l).or_default() += 1;
        }
    }
    // a predictor that only ever gets the head labels right
    let head: BTreeSet<usize> = support.iter().filter(|(_, &c)| c >= 40).map(|(&l, _)| l).collect();
    let gold: Vec<Vec<usize>> = ds.test.iter().map(|p| p.gold_labels.clone()).collect();
    let pred: Vec<Vec<usize>> = gold.iter().map(|g| g.iter().copied().filter(|l| head.contains(l)).collect()).collect();
    let r = MetricsReport::from_sets(&ds.schema, &gold, &pred).unwrap();
    assert!(r.micro_f1 > 70.0, "{}", r.micro_f1);
    assert!(r.macro_f1 < 0.5 * r.micro_f1, "{} vs {}", r.macro_f1, r.micro_f1);
}
