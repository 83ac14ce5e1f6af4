use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{check_gradients, GradCheckOptions};
use crate::oracles::{self, random_mat};

fn build(k: usize, query_dim: usize, seed: u64) -> (ParamStore, GmmAttention) {
    let mut cfg = GmmAttentionConfig::new(query_dim);
    cfg.num_mixtures = k;
    cfg.hidden_dim = 6;
    let mut store = ParamStore::new();
    let att = GmmAttention::new(
        &mut store,
        "att",
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    (store, att)
}

/// Sets the output layer to ignore the query and emit `raw` every step.
fn fix_output(store: &mut ParamStore, k: usize, raw: &[f64]) {
    store.zero_values_with_prefix("att.output.weight");
    let t = Tensor::row(raw.to_vec());
    assert_eq!(t.numel(), 3 * k);
    store.set("att.output.bias", &t).unwrap();
}

fn bin_mass(j: usize, mu: f64, sigma: f64) -> f64 {
    let cdf = |x: f64| 0.5 * (1.0 + libm::erf((x - mu) / (sigma * std::f64::consts::SQRT_2)));
    cdf(j as f64 + 0.5) - cdf(j as f64 - 0.5)
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

#[test]
fn very_negative_step_logit_leaves_means_in_place() {
    let (mut store, att) = build(2, 3, 0);
    fix_output(&mut store, 2, &[0.0, 0.0, -60.0, -60.0, 0.0, 0.0]);
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(6, 4, 1)).unwrap());
    let state = att.init_state(&mut g, memory).unwrap();
    let q = g.constant(Tensor::row(vec![0.3, -0.1, 2.0]));
    let step = att.step(&mut g, &store, state, q).unwrap();
    for m in step.state.mean_values(&g) {
        assert!(m.abs() < 1e-25);
    }
}

#[test]
fn narrow_single_mixture_peaks_at_its_mean() {
    let (mut store, att) = build(1, 2, 0);
    fix_output(&mut store, 1, &[0.0, -60.0, -12.0]);
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(5, 3, 2)).unwrap());
    let mut state = att.init_state(&mut g, memory).unwrap();
    state.means = g.constant(Tensor::row(vec![2.0]));
    let q = g.constant(Tensor::row(vec![1.0, 1.0]));
    let step = att.step(&mut g, &store, state, q).unwrap();
    let w = g.value(step.weights).data().to_vec();
    let argmax = (0..5).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    assert_eq!(argmax, 2);
    assert!((w[2] - 1.0).abs() < 1e-12);
}

#[test]
fn weights_approach_one_hot_as_scale_shrinks() {
    let mut previous_gap = f64::INFINITY;
    for sigma_logit in [1.0, -1.0, -3.0, -6.0] {
        let (mut store, att) = build(1, 2, 0);
        fix_output(&mut store, 1, &[0.0, -60.0, sigma_logit]);
        let mut g = Graph::new();
        let memory = g.constant(Tensor::zeros(&[7, 2]));
        let mut state = att.init_state(&mut g, memory).unwrap();
        state.means = g.constant(Tensor::row(vec![3.0]));
        let q = g.constant(Tensor::zeros(&[1, 2]));
        let weights = att.step(&mut g, &store, state, q).unwrap().weights;
        let w = g.value(weights).data().to_vec();
        let gap: f64 = w
            .iter()
            .enumerate()
            .map(|(j, v)| (v - if j == 3 { 1.0 } else { 0.0 }).abs())
            .sum();
        assert!(gap < previous_gap);
        previous_gap = gap;
    }
    assert!(previous_gap < 1e-6);
}

#[test]
fn three_step_rollout_matches_scalar_oracle() {
    let (k, qd, len, d) = (3, 4, 9, 2);
    let (store, att) = build(k, qd, 11);
    let mem_rows = random_mat(len, d, 12);
    let queries = random_mat(3, qd, 13);
    let w1 = oracles::param_rows(&store, "att.hidden.weight");
    let b1 = oracles::param_row(&store, "att.hidden.bias");
    let w2 = oracles::param_rows(&store, "att.output.weight");
    let b2 = oracles::param_row(&store, "att.output.bias");

    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&mem_rows).unwrap());
    let mut state = att.init_state(&mut g, memory).unwrap();
    let mut mu = vec![0.0; k];
    for q in &queries {
        let qv = g.constant(Tensor::row(q.clone()));
        let step = att.step(&mut g, &store, state, qv).unwrap();
        state = step.state;

        let h: Vec<f64> = oracles::affine(&[q.clone()], &w1, &b1)[0]
            .iter()
            .map(|v| v.tanh())
            .collect();
        let raw = &oracles::affine(&[h], &w2, &b2)[0];
        let zmax = raw[..k].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = raw[..k].iter().map(|v| (v - zmax).exp()).sum();
        let prev = mu.clone();
        for c in 0..k {
            mu[c] += softplus(raw[k + c]);
        }
        let mut alpha = vec![0.0; len];
        for (j, a) in alpha.iter_mut().enumerate() {
            for c in 0..k {
                let wk = (raw[c] - zmax).exp() / z;
                *a += wk * bin_mass(j, mu[c], softplus(raw[2 * k + c]) + SIGMA_FLOOR);
            }
        }
        let ctx = oracles::matmul(&[alpha.clone()], &mem_rows);

        let got_mu = state.mean_values(&g);
        for c in 0..k {
            assert!(got_mu[c] >= prev[c]);
            assert!((got_mu[c] - mu[c]).abs() < 1e-12);
        }
        oracles::assert_close(&g.value(step.weights).to_rows(), &[alpha], 1e-12);
        oracles::assert_close(&g.value(step.context).to_rows(), &ctx, 1e-12);
    }
}

#[test]
fn init_state_starts_every_mean_at_zero() {
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(4, 3, 0)).unwrap());
    let state = init_state(&mut g, memory, 5).unwrap();
    assert_eq!(state.mean_values(&g), vec![0.0; 5]);
    assert!(matches!(
        init_state(&mut g, memory, 0),
        Err(Error::Config(_))
    ));
    let empty = g.constant(Tensor::zeros(&[0, 3]));
    assert!(init_state(&mut g, empty, 5).is_err());
}

#[test]
fn state_round_trips_through_bytes() {
    let (store, att) = build(5, 3, 4);
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(6, 3, 5)).unwrap());
    let mut state = att.init_state(&mut g, memory).unwrap();
    for q in random_mat(4, 3, 6) {
        let qv = g.constant(Tensor::row(q));
        state = att.step(&mut g, &store, state, qv).unwrap().state;
    }
    let bytes = state.to_bytes(&g);
    let mut h = Graph::new();
    let back = GmmAttentionState::from_bytes(&mut h, &bytes).unwrap();
    assert_eq!(back.num_mixtures, 5);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.mean_values(&h)), bits(&state.mean_values(&g)));
    assert_eq!(h.value(back.memory), g.value(state.memory));
    assert_eq!(back.to_bytes(&h), bytes);

    assert!(GmmAttentionState::from_bytes(&mut h, &bytes[..bytes.len() - 1]).is_err());
    assert!(GmmAttentionState::from_bytes(&mut h, b"nope").is_err());
}

#[test]
fn query_of_wrong_width_is_rejected() {
    let (store, att) = build(2, 3, 0);
    let mut g = Graph::new();
    let memory = g.constant(Tensor::zeros(&[4, 2]));
    let state = att.init_state(&mut g, memory).unwrap();
    let q = g.constant(Tensor::zeros(&[1, 4]));
    assert!(matches!(
        att.step(&mut g, &store, state, q),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn non_finite_query_is_a_numeric_error() {
    let (store, att) = build(2, 3, 0);
    let mut g = Graph::new();
    let memory = g.constant(Tensor::zeros(&[4, 2]));
    let state = att.init_state(&mut g, memory).unwrap();
    let q = g.constant(Tensor::row(vec![f64::NAN, 0.0, 0.0]));
    let err = att.step(&mut g, &store, state, q).unwrap_err();
    assert_eq!(err.category(), "numeric");
}

#[test]
fn attention_step_gradients_match_finite_differences() {
    let (mut store, att) = build(3, 4, 21);
    let mem = Tensor::from_rows(&random_mat(7, 3, 22)).unwrap();
    let queries = random_mat(2, 4, 23);
    let probe = Tensor::from_rows(&random_mat(1, 3, 24)).unwrap();
    let report = check_gradients(
        &mut store,
        |g, s| {
            let memory = g.constant(mem.clone());
            let mut state = att.init_state(g, memory)?;
            let mut total = None;
            for q in &queries {
                let qv = g.constant(Tensor::row(q.clone()));
                let step = att.step(g, s, state, qv)?;
                state = step.state;
                let p = g.constant(probe.clone());
                let m = g.mul(step.context, p)?;
                let term = g.sum(m)?;
                total = Some(match total {
                    None => term,
                    Some(t) => g.add(t, term)?,
                });
            }
            Ok(total.unwrap())
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn means_are_monotone_and_weights_bounded(seed in 0u64..10_000, len in 1usize..15, steps in 1usize..8) {
        let (mut store, att) = build(5, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for p in store.iter_mut() {
            for v in p.tensor.data_mut() {
                *v = rand::Rng::random_range(&mut rng, -4.0..4.0);
            }
        }
        let mut g = Graph::new();
        let memory = g.constant(Tensor::from_rows(&random_mat(len, 2, seed)).unwrap());
        let mut state = att.init_state(&mut g, memory).unwrap();
        let mut prev = state.mean_values(&g);
        for q in random_mat(steps, 3, seed + 1) {
            let qv = g.constant(Tensor::row(q.iter().map(|v| 3.0 * v).collect()));
            let step = att.step(&mut g, &store, state, qv).unwrap();
            state = step.state;
            let now = state.mean_values(&g);
            for (a, b) in prev.iter().zip(&now) {
                prop_assert!(b >= a);
            }
            prev = now;
            let w = g.value(step.weights).data();
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!(w.iter().sum::<f64>() <= 1.0 + 1e-6);
        }
    }
}
