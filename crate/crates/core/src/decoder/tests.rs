use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{check_gradients, GradCheckOptions};
use crate::oracles::{self, random_mat, Mat};

fn tiny_config(r: usize) -> DecoderConfig {
    let mut attention = GmmAttentionConfig::new(4);
    attention.num_mixtures = 2;
    attention.hidden_dim = 3;
    DecoderConfig {
        memory_dim: 2,
        prenet_dims: [3, 3],
        prenet_dropout: 0.0,
        recurrent_dims: [4, 4],
        num_mels: 3,
        reduction_factor: r,
        postnet_layers: 2,
        postnet_channels: 4,
        postnet_kernel: 3,
        stop_threshold: 0.5,
        max_steps: 10,
        attention,
    }
}

fn build(cfg: &DecoderConfig, seed: u64) -> (ParamStore, Decoder) {
    let mut store = ParamStore::new();
    let dec = Decoder::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, dec)
}

fn mel(rows: &[Vec<f64>]) -> MelSpectrogram {
    MelSpectrogram::new(Tensor::from_rows(rows).unwrap(), 12.5, 50.0, 22050).unwrap()
}

#[test]
fn teacher_forced_output_matches_target_length() {
    for r in [1, 2, 3] {
        let (store, dec) = build(&tiny_config(r), 0);
        for t in [1, 4, 7] {
            let mut g = Graph::new();
            let memory = g.constant(Tensor::from_rows(&random_mat(5, 2, 1)).unwrap());
            let out = dec
                .teacher_forced_forward(&mut g, &store, memory, &mel(&random_mat(t, 3, 2)))
                .unwrap();
            assert_eq!(g.shape(out.pre_mel), &[t, 3]);
            assert_eq!(g.shape(out.post_mel), &[t, 3]);
            assert_eq!(g.shape(out.stop_logits), &[1, t]);
            assert_eq!(out.alignments.len(), t.div_ceil(r));
        }
    }
}

#[test]
fn zero_postnet_is_an_identity_residual() {
    let (mut store, dec) = build(&tiny_config(1), 3);
    store.zero_values_with_prefix("decoder.postnet");
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(4, 2, 4)).unwrap());
    let out = dec
        .teacher_forced_forward(&mut g, &store, memory, &mel(&random_mat(5, 3, 5)))
        .unwrap();
    assert_eq!(g.value(out.pre_mel), g.value(out.post_mel));
}

#[test]
fn empty_inputs_are_rejected() {
    let (store, dec) = build(&tiny_config(1), 0);
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(4, 2, 4)).unwrap());
    let empty = MelSpectrogram::new(Tensor::zeros(&[0, 3]), 12.5, 50.0, 22050).unwrap();
    assert!(dec
        .teacher_forced_forward(&mut g, &store, memory, &empty)
        .is_err());
    let no_memory = g.constant(Tensor::zeros(&[0, 2]));
    assert!(dec
        .teacher_forced_forward(&mut g, &store, no_memory, &mel(&random_mat(2, 3, 0)))
        .is_err());
    assert!(dec.infer(&mut g, &store, no_memory).is_err());
}

#[test]
fn mismatched_attention_query_width_is_a_config_error() {
    let mut cfg = tiny_config(1);
    cfg.recurrent_dims = [5, 4];
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

// ── plain-vector oracle of one decoder pass ──────────────────────────

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn lin(store: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = oracles::param_rows(store, &format!("{name}.weight"));
    let b = oracles::param_row(store, &format!("{name}.bias"));
    oracles::affine(&[x.to_vec()], &w, &b).remove(0)
}

fn lstm(store: &ParamStore, name: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let xh: Vec<f64> = x.iter().chain(h).copied().collect();
    let z = lin(store, &format!("{name}.gates"), &xh);
    let mut h_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for i in 0..n {
        c_new[i] = sigmoid(z[n + i]) * c[i] + sigmoid(z[i]) * z[2 * n + i].tanh();
        h_new[i] = sigmoid(z[3 * n + i]) * c_new[i].tanh();
    }
    (h_new, c_new)
}

fn bin_mass(j: usize, mu: f64, sigma: f64) -> f64 {
    let cdf = |x: f64| 0.5 * libm::erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2));
    cdf(j as f64 + 0.5) - cdf(j as f64 - 0.5)
}

/// Returns pre-postnet frames, post-postnet frames and stop logits.
fn manual_rollout(
    store: &ParamStore,
    memory: &Mat,
    target: &Mat,
    k: usize,
) -> (Mat, Mat, Vec<f64>) {
    let d = memory[0].len();
    let (mut h1, mut c1, mut h2, mut c2) = (vec![0.0; 4], vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]);
    let mut ctx = vec![0.0; d];
    let mut mu = vec![0.0; k];
    let mut pre = Vec::new();
    let mut stops = Vec::new();
    for t in 0..target.len() {
        let prev = if t == 0 {
            vec![0.0; target[0].len()]
        } else {
            target[t - 1].clone()
        };
        let p: Vec<f64> = lin(store, "decoder.prenet0", &prev)
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let p: Vec<f64> = lin(store, "decoder.prenet1", &p)
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let x1: Vec<f64> = p.iter().chain(&ctx).copied().collect();
        (h1, c1) = lstm(store, "decoder.lstm0", &x1, &h1, &c1);

        let hid: Vec<f64> = lin(store, "decoder.attention.hidden", &h1)
            .iter()
            .map(|v| v.tanh())
            .collect();
        let raw = lin(store, "decoder.attention.output", &hid);
        let z: f64 = raw[..k].iter().map(|v| v.exp()).sum();
        let mut alpha = vec![0.0; memory.len()];
        for c in 0..k {
            mu[c] += softplus(raw[k + c]);
            let sigma = softplus(raw[2 * k + c]) + crate::attention::SIGMA_FLOOR;
            for (j, a) in alpha.iter_mut().enumerate() {
                *a += raw[c].exp() / z * bin_mass(j, mu[c], sigma);
            }
        }
        ctx = oracles::matmul(&[alpha], memory).remove(0);

        let x2: Vec<f64> = h1.iter().chain(&ctx).copied().collect();
        (h2, c2) = lstm(store, "decoder.lstm1", &x2, &h2, &c2);
        let out: Vec<f64> = h2.iter().chain(&ctx).copied().collect();
        pre.push(lin(store, "decoder.frame", &out));
        stops.push(lin(store, "decoder.stop", &out)[0]);
    }
    let b0 = oracles::param_row(store, "decoder.postnet0.bias");
    let b1 = oracles::param_row(store, "decoder.postnet1.bias");
    let hidden: Mat = oracles::conv1d(
        &pre,
        &oracles::conv_taps(store, "decoder.postnet0.weight"),
        &b0,
    )
    .into_iter()
    .map(|r| r.into_iter().map(f64::tanh).collect())
    .collect();
    let residual = oracles::conv1d(
        &hidden,
        &oracles::conv_taps(store, "decoder.postnet1.weight"),
        &b1,
    );
    let post = oracles::add(&pre, &residual);
    (pre, post, stops)
}

#[test]
fn teacher_forcing_matches_manual_rollout() {
    let cfg = tiny_config(1);
    let (mut store, dec) = build(&cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v = rand::Rng::random_range(&mut rng, -0.7..0.7);
        }
    }
    let memory = random_mat(5, 2, 8);
    let target = random_mat(3, 3, 9);
    let mut g = Graph::new();
    let mv = g.constant(Tensor::from_rows(&memory).unwrap());
    let out = dec
        .teacher_forced_forward(&mut g, &store, mv, &mel(&target))
        .unwrap();
    let (pre, post, stops) = manual_rollout(&store, &memory, &target, 2);
    oracles::assert_close(&g.value(out.pre_mel).to_rows(), &pre, 1e-12);
    oracles::assert_close(&g.value(out.post_mel).to_rows(), &post, 1e-12);
    oracles::assert_close(&g.value(out.stop_logits).to_rows(), &[stops], 1e-12);
}

#[test]
fn biased_stop_head_halts_after_one_step() {
    for r in [1, 2] {
        let (mut store, dec) = build(&tiny_config(r), 10);
        store.zero_values_with_prefix("decoder.stop.weight");
        store
            .set("decoder.stop.bias", &Tensor::filled(&[1, r], 20.0))
            .unwrap();
        let mut g = Graph::new();
        let memory = g.constant(Tensor::from_rows(&random_mat(4, 2, 11)).unwrap());
        let inf = dec.infer(&mut g, &store, memory).unwrap();
        assert!(inf.stopped);
        assert_eq!(inf.steps, 1);
        assert_eq!(inf.mel.shape(), &[r, 3]);
    }
}

#[test]
fn inference_is_capped_at_max_steps() {
    let mut cfg = tiny_config(2);
    cfg.max_steps = 10;
    let (mut store, dec) = build(&cfg, 12);
    store.zero_values_with_prefix("decoder.stop.weight");
    store
        .set("decoder.stop.bias", &Tensor::filled(&[1, 2], -40.0))
        .unwrap();
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&random_mat(4, 2, 13)).unwrap());
    let inf = dec.infer(&mut g, &store, memory).unwrap();
    assert!(!inf.stopped);
    assert_eq!(inf.steps, 10);
    assert_eq!(inf.mel.shape(), &[20, 3]);
    assert!(inf.stop_probabilities.iter().all(|&p| p > 0.0 && p < 1.0));
    for pair in inf.means.windows(2) {
        assert!(pair[0].iter().zip(&pair[1]).all(|(a, b)| b >= a));
    }
}

#[test]
fn inference_is_deterministic() {
    let (store, dec) = build(&tiny_config(2), 14);
    let run = || {
        let mut g = Graph::new();
        let memory = g.constant(Tensor::from_rows(&random_mat(4, 2, 15)).unwrap());
        dec.infer(&mut g, &store, memory).unwrap().mel
    };
    assert_eq!(run(), run());
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let (mut store, dec) = build(&tiny_config(2), 16);
    // Zero biases and the all-zero first input frame would sit every prenet
    // unit exactly on the ReLU kink.
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rand::Rng::random_range(&mut rng, -0.3..0.3);
        }
    }
    let memory = Tensor::from_rows(&random_mat(4, 2, 17)).unwrap();
    let target = mel(&random_mat(5, 3, 18));
    let report = check_gradients(
        &mut store,
        |g, s| {
            let mv = g.constant(memory.clone());
            let out = dec.teacher_forced_forward(g, s, mv, &target)?;
            dec.loss(g, &out, &target)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:#?}");
}
