use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::{check_gradients, GradCheckOptions};
use crate::oracles::{self, random_mat, Mat};

fn config(blocks: usize, dim: usize, heads: usize, mode: AggregationMode) -> ContextConfig {
    ContextConfig {
        num_blocks: blocks,
        model_dim: dim,
        num_heads: heads,
        ffn_inner_dim: 2 * dim,
        extractor_kernel: 3,
        mode,
    }
}

fn build(cfg: &ContextConfig, seed: u64) -> (ParamStore, ContextModule) {
    let mut store = ParamStore::new();
    let m = ContextModule::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, m)
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v = rand::Rng::random_range(&mut rng, -0.8..0.8);
        }
    }
}

fn leaf_contexts(g: &mut Graph, rows: &[Vec<f64>]) -> LayerContextSet {
    LayerContextSet {
        contexts: rows
            .iter()
            .map(|r| g.constant(Tensor::row(r.clone())))
            .collect(),
    }
}

/// Affine layer norm computed from stored parameters.
fn oracle_ln(store: &ParamStore, prefix: &str, row: &[f64]) -> Vec<f64> {
    let gain = oracles::param_row(store, &format!("{prefix}.gain"));
    let bias = oracles::param_row(store, &format!("{prefix}.bias"));
    oracles::layer_norm(row)
        .iter()
        .zip(gain.iter().zip(&bias))
        .map(|(n, (g, b))| n * g + b)
        .collect()
}

fn oracle_final_stage(store: &ParamStore, prefix: &str, c: &[f64]) -> Vec<f64> {
    let w1 = oracles::param_rows(store, &format!("{prefix}.ffn.inner.weight"));
    let b1 = oracles::param_row(store, &format!("{prefix}.ffn.inner.bias"));
    let w2 = oracles::param_rows(store, &format!("{prefix}.ffn.outer.weight"));
    let b2 = oracles::param_row(store, &format!("{prefix}.ffn.outer.bias"));
    let h = oracles::relu(&oracles::affine(&[c.to_vec()], &w1, &b1));
    let f = oracles::affine(&h, &w2, &b2);
    let sum = oracles::add(&f, &[c.to_vec()]);
    oracle_ln(store, &format!("{prefix}.ffn_norm"), &sum[0])
}

#[test]
fn mode_names_round_trip() {
    for m in AggregationMode::ALL {
        assert_eq!(m.as_str().parse::<AggregationMode>().unwrap(), m);
    }
    assert!("concat".parse::<AggregationMode>().is_err());
    assert_eq!(AggregationMode::Weighted.system_name(), "SA-WA");
}

#[test]
fn single_frame_context_is_centre_tap_output() {
    let (store, m) = build(&config(1, 4, 2, AggregationMode::Direct), 1);
    let x = random_mat(1, 4, 3);
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&x).unwrap());
    let ctx = m.extract_layer_context(&mut g, &store, h, 0).unwrap();
    let taps = oracles::conv_taps(&store, "context.extract0.weight");
    let bias = oracles::param_row(&store, "context.extract0.bias");
    let expected = oracles::affine(&x, &taps[1], &bias);
    oracles::assert_close(&g.value(ctx).to_rows(), &expected, 1e-12);
}

#[test]
fn identity_extractor_on_identical_rows_returns_the_row() {
    let (mut store, m) = build(&config(1, 4, 2, AggregationMode::Direct), 1);
    let mut w = Tensor::zeros(&[3, 4, 4]);
    for c in 0..4 {
        w.data_mut()[(4 + c) * 4 + c] = 1.0;
    }
    store.set("context.extract1.weight", &w).unwrap();
    let row = vec![0.5, -2.0, 1.25, 3.0];
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&vec![row.clone(); 6]).unwrap());
    let ctx = m.extract_layer_context(&mut g, &store, h, 1).unwrap();
    assert_eq!(g.value(ctx).data(), row.as_slice());
}

#[test]
fn layer_context_matches_direct_convolution_and_mean() {
    let (mut store, m) = build(&config(2, 8, 2, AggregationMode::Weighted), 2);
    randomize(&mut store, 5);
    let x = random_mat(5, 8, 9);
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&x).unwrap());
    let ctx = m.extract_layer_context(&mut g, &store, h, 2).unwrap();
    let taps = oracles::conv_taps(&store, "context.extract2.weight");
    let bias = oracles::param_row(&store, "context.extract2.bias");
    let expected = oracles::mean_rows(&oracles::conv1d(&x, &taps, &bias));
    oracles::assert_close(&g.value(ctx).to_rows(), &[expected], 1e-10);
}

#[test]
fn extractor_order_sensitivity_depends_on_kernel_width() {
    let x = random_mat(6, 4, 21);
    let mut reversed = x.clone();
    reversed.reverse();
    for (width, invariant) in [(1, true), (3, false)] {
        let mut cfg = config(0, 4, 2, AggregationMode::Direct);
        cfg.extractor_kernel = width;
        let (mut store, m) = build(&cfg, 3);
        randomize(&mut store, 4);
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&x).unwrap());
        let b = g.constant(Tensor::from_rows(&reversed).unwrap());
        let ga = m.extract_layer_context(&mut g, &store, a, 0).unwrap();
        let gb = m.extract_layer_context(&mut g, &store, b, 0).unwrap();
        let diff = g.value(ga).max_abs_diff(g.value(gb));
        if invariant {
            assert!(diff < 1e-12, "width 1 should be order-free, diff {diff}");
        } else {
            assert!(diff > 1e-6, "width 3 should see order");
        }
    }
}

#[test]
fn empty_sequence_is_rejected() {
    let (store, m) = build(&config(0, 4, 2, AggregationMode::Direct), 1);
    let mut g = Graph::new();
    let h = g.constant(Tensor::zeros(&[0, 4]));
    assert!(m.extract_layer_context(&mut g, &store, h, 0).is_err());
}

#[test]
fn paper_scale_direct_concatenation_is_3584_wide() {
    let (store, _) = build(&config(6, 512, 8, AggregationMode::Direct), 0);
    assert_eq!(
        store
            .by_name("context.direct.proj.weight")
            .unwrap()
            .tensor
            .shape(),
        &[3584, 512]
    );
}

#[test]
fn averaging_projection_of_equal_contexts_gives_ln_of_double() {
    let (l, d) = (3, 4);
    let (mut store, m) = build(&config(l, d, 2, AggregationMode::Direct), 7);
    let mut w = Tensor::zeros(&[(l + 1) * d, d]);
    for block in 0..=l {
        for c in 0..d {
            w.data_mut()[(block * d + c) * d + c] = 1.0 / (l + 1) as f64;
        }
    }
    store.set("context.direct.proj.weight", &w).unwrap();
    let v = vec![0.3, -1.2, 2.0, 0.7];
    let mut g = Graph::new();
    let set = leaf_contexts(&mut g, &vec![v.clone(); l + 1]);
    let ctx = m.direct_aggregate(&mut g, &store, &set).unwrap();
    let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
    let expected = oracles::layer_norm(&doubled);
    oracles::assert_close(
        &g.value(ctx.combined.unwrap()).to_rows(),
        &[expected],
        1e-12,
    );
}

/// Concat → project → residual → LN → FFN → residual → LN, from stored parameters.
fn direct_oracle(store: &ParamStore, contexts: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let joined: Vec<f64> = contexts.iter().flatten().copied().collect();
    let w = oracles::param_rows(store, "context.direct.proj.weight");
    let b = oracles::param_row(store, "context.direct.proj.bias");
    let projected = oracles::affine(&[joined], &w, &b);
    let sum = oracles::add(&projected, &[contexts.last().unwrap().clone()]);
    let c = oracle_ln(store, "context.direct.norm", &sum[0]);
    let g = oracle_final_stage(store, "context.direct", &c);
    (c, g)
}

fn weighted_oracle(
    store: &ParamStore,
    contexts: &[Vec<f64>],
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<Mat>) {
    let top = contexts.last().unwrap().clone();
    let mut memory = contexts.to_vec();
    memory.push(top.clone());
    let names = ["query", "key", "value", "out"];
    let ws: Vec<Mat> = names
        .iter()
        .map(|n| oracles::param_rows(store, &format!("context.weighted.attn.{n}.weight")))
        .collect();
    let bs: Vec<Vec<f64>> = names
        .iter()
        .map(|n| oracles::param_row(store, &format!("context.weighted.attn.{n}.bias")))
        .collect();
    let (att, weights) = oracles::multi_head_attention(
        &[top.clone()],
        &memory,
        [&ws[0], &ws[1], &ws[2], &ws[3]],
        [&bs[0], &bs[1], &bs[2], &bs[3]],
        heads,
    );
    let sum = oracles::add(&att, &[top]);
    let c = oracle_ln(store, "context.weighted.norm", &sum[0]);
    let g = oracle_final_stage(store, "context.weighted", &c);
    (c, g, weights)
}

#[test]
fn direct_aggregation_matches_hand_composition() {
    let (mut store, m) = build(&config(2, 4, 2, AggregationMode::Direct), 8);
    randomize(&mut store, 80);
    let rows = random_mat(3, 4, 81);
    let mut g = Graph::new();
    let set = leaf_contexts(&mut g, &rows);
    let ctx = m.direct_aggregate(&mut g, &store, &set).unwrap();
    assert_eq!(ctx.mode, AggregationMode::Direct);
    let (c, expected) = direct_oracle(&store, &rows);
    oracles::assert_close(&g.value(ctx.combined.unwrap()).to_rows(), &[c], 1e-10);
    oracles::assert_close(&g.value(ctx.vector.unwrap()).to_rows(), &[expected], 1e-10);
}

#[test]
fn weighted_aggregation_matches_naive_attention() {
    let (mut store, m) = build(&config(2, 4, 2, AggregationMode::Weighted), 9);
    randomize(&mut store, 90);
    let rows = random_mat(3, 4, 91);
    let mut g = Graph::new();
    let set = leaf_contexts(&mut g, &rows);
    let ctx = m.weighted_aggregate(&mut g, &store, &set).unwrap();
    assert_eq!(ctx.mode, AggregationMode::Weighted);
    let (c, expected, weights) = weighted_oracle(&store, &rows, 2);
    oracles::assert_close(&g.value(ctx.combined.unwrap()).to_rows(), &[c], 1e-10);
    oracles::assert_close(&g.value(ctx.vector.unwrap()).to_rows(), &[expected], 1e-10);
    let flat: Mat = weights.into_iter().flatten().collect();
    oracles::assert_close(&ctx.layer_weights.unwrap().to_rows(), &flat, 1e-10);
}

#[test]
fn six_blocks_give_eight_memory_slots() {
    let cfg = config(6, 16, 8, AggregationMode::Weighted);
    assert_eq!(cfg.memory_slots(), 8);
    let (store, m) = build(&cfg, 10);
    let rows = random_mat(7, 16, 11);
    let mut g = Graph::new();
    let set = leaf_contexts(&mut g, &rows);
    let ctx = m.weighted_aggregate(&mut g, &store, &set).unwrap();
    let w = ctx.layer_weights.unwrap();
    assert_eq!(w.shape(), &[8, 8]);
    for h in 0..8 {
        let row = w.row_slice(h);
        assert!(row.iter().all(|v| *v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn identical_memory_slots_make_attention_weights_irrelevant() {
    let d = 4;
    let (mut store, m) = build(&config(2, d, 2, AggregationMode::Weighted), 12);
    randomize(&mut store, 13);
    let mut eye = Tensor::zeros(&[d, d]);
    for i in 0..d {
        eye.data_mut()[i * d + i] = 1.0;
    }
    for n in ["value", "out"] {
        store
            .set(&format!("context.weighted.attn.{n}.weight"), &eye)
            .unwrap();
        store
            .set(
                &format!("context.weighted.attn.{n}.bias"),
                &Tensor::zeros(&[1, d]),
            )
            .unwrap();
    }
    let v = vec![1.5, -0.5, 0.25, 2.0];
    let mut g = Graph::new();
    let memory = g.constant(Tensor::from_rows(&vec![v.clone(); 4]).unwrap());
    let query = g.constant(Tensor::row(vec![0.1, 0.9, -3.0, 0.4]));
    let Some(Aggregator::Weighted(agg)) = &m.aggregator else {
        panic!()
    };
    let out = agg
        .attention
        .forward(&mut g, &store, query, memory)
        .unwrap();
    oracles::assert_close(&g.value(out.output).to_rows(), &[v], 1e-12);
}

#[test]
fn wrong_context_count_is_a_shape_error() {
    let (store, m) = build(&config(2, 4, 2, AggregationMode::Direct), 1);
    let mut g = Graph::new();
    let set = leaf_contexts(&mut g, &random_mat(2, 4, 1));
    assert!(matches!(
        m.direct_aggregate(&mut g, &store, &set),
        Err(Error::Shape { .. })
    ));
    assert!(m.weighted_aggregate(&mut g, &store, &set).is_err());
}

#[test]
fn fusion_without_context_is_identity() {
    let (store, m) = build(&config(2, 4, 2, AggregationMode::None), 1);
    assert_eq!(store.len(), 0);
    let mut g = Graph::new();
    let top = g.constant(Tensor::from_rows(&random_mat(3, 4, 2)).unwrap());
    let fused = m
        .fuse_context(&mut g, &store, top, &SentenceContext::none())
        .unwrap();
    assert_eq!(fused, top);
}

#[test]
fn zero_context_with_identity_fusion_passes_encoder_through() {
    let (mut store, m) = build(&config(1, 4, 2, AggregationMode::Weighted), 3);
    store
        .set("context.fuse.bias", &Tensor::zeros(&[1, 4]))
        .unwrap();
    let enc = random_mat(5, 4, 7);
    let mut g = Graph::new();
    let top = g.constant(Tensor::from_rows(&enc).unwrap());
    let ctx = SentenceContext {
        vector: Some(g.constant(Tensor::zeros(&[1, 4]))),
        mode: AggregationMode::Weighted,
        combined: None,
        layer_weights: None,
    };
    let fused = m.fuse_context(&mut g, &store, top, &ctx).unwrap();
    assert_eq!(g.value(fused).to_rows(), enc);
}

#[test]
fn fusion_matches_concat_and_project() {
    let (mut store, m) = build(&config(1, 4, 2, AggregationMode::Direct), 4);
    randomize(&mut store, 40);
    let enc = random_mat(3, 4, 41);
    let vec_g = random_mat(1, 4, 42);
    let mut g = Graph::new();
    let top = g.constant(Tensor::from_rows(&enc).unwrap());
    let ctx = SentenceContext {
        vector: Some(g.constant(Tensor::from_rows(&vec_g).unwrap())),
        mode: AggregationMode::Direct,
        combined: None,
        layer_weights: None,
    };
    let fused = m.fuse_context(&mut g, &store, top, &ctx).unwrap();
    let joined: Mat = enc
        .iter()
        .map(|r| r.iter().chain(&vec_g[0]).copied().collect())
        .collect();
    let expected = oracles::affine(
        &joined,
        &oracles::param_rows(&store, "context.fuse.weight"),
        &oracles::param_row(&store, "context.fuse.bias"),
    );
    oracles::assert_close(&g.value(fused).to_rows(), &expected, 1e-12);

    let bad = g.constant(Tensor::zeros(&[3, 5]));
    assert!(m.fuse_context(&mut g, &store, bad, &ctx).is_err());
}

#[test]
fn every_layer_extractor_receives_gradient() {
    for mode in [AggregationMode::Direct, AggregationMode::Weighted] {
        let (mut store, m) = build(&config(3, 8, 2, mode), 14);
        let layers: Vec<Tensor> = (0..4)
            .map(|l| Tensor::from_rows(&random_mat(5, 8, 100 + l)).unwrap())
            .collect();
        let mut g = Graph::new();
        let stack = crate::encoder::EncoderStackOutput {
            layer_outputs: layers.iter().map(|t| g.constant(t.clone())).collect(),
            attention: Vec::new(),
        };
        let ctx = m.sentence_context(&mut g, &store, &stack).unwrap();
        let probe = g.constant(Tensor::from_rows(&random_mat(1, 8, 5)).unwrap());
        let prod = g.mul(ctx.vector.unwrap(), probe).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward(loss, &mut store).unwrap();
        for l in 0..4 {
            let grad = store
                .by_name(&format!("context.extract{l}.weight"))
                .unwrap()
                .tensor
                .grad()
                .unwrap();
            assert!(
                grad.iter().any(|v| v.abs() > 1e-8),
                "{mode}: layer {l} got no gradient"
            );
        }
    }
}

#[test]
fn aggregation_is_deterministic() {
    for mode in [AggregationMode::Direct, AggregationMode::Weighted] {
        let (store, m) = build(&config(2, 4, 2, mode), 15);
        let run = || {
            let mut g = Graph::new();
            let set = leaf_contexts(&mut g, &random_mat(3, 4, 16));
            let ctx = match mode {
                AggregationMode::Direct => m.direct_aggregate(&mut g, &store, &set),
                _ => m.weighted_aggregate(&mut g, &store, &set),
            }
            .unwrap();
            g.value(ctx.vector.unwrap()).clone()
        };
        assert_eq!(run(), run());
    }
}

fn aggregation_gradcheck(mode: AggregationMode) {
    let (mut store, m) = build(&config(2, 4, 2, mode), 17);
    randomize(&mut store, 18);
    let layers: Vec<Tensor> = (0..3)
        .map(|l| Tensor::from_rows(&random_mat(4, 4, 200 + l)).unwrap())
        .collect();
    let probe = Tensor::from_rows(&random_mat(4, 4, 300)).unwrap();
    let report = check_gradients(
        &mut store,
        |g, s| {
            let stack = crate::encoder::EncoderStackOutput {
                layer_outputs: layers.iter().map(|t| g.constant(t.clone())).collect(),
                attention: Vec::new(),
            };
            let (_, fused) = m.forward(g, s, &stack)?;
            let p = g.constant(probe.clone());
            let prod = g.mul(fused, p)?;
            g.sum(prod)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{mode}: {report:#?}");
}

#[test]
fn direct_aggregation_gradients_match_finite_differences() {
    aggregation_gradcheck(AggregationMode::Direct);
}

#[test]
fn weighted_aggregation_gradients_match_finite_differences() {
    aggregation_gradcheck(AggregationMode::Weighted);
}
