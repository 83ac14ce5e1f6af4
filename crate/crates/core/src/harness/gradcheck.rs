//! Finite-difference checks of every parameterised module at toy scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{GmmAttention, GmmAttentionConfig};
use crate::context::{AggregationMode, ContextConfig, ContextModule};
use crate::decoder::{Decoder, DecoderConfig};
use crate::encoder::{EncoderConfig, EncoderStackOutput, SanBlock};
use crate::error::Result;
use crate::features::MelSpectrogram;
use crate::numcore::{
    check_gradients, normal, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor, Var,
};

#[derive(Clone, Debug)]
pub struct ModuleCheck {
    pub module: &'static str,
    pub report: GradCheckReport,
}

/// Moves every parameter off its initial value so no unit sits exactly on
/// a ReLU kink or a symmetric point.
fn perturb(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn probe_sum(g: &mut Graph, out: Var, probe: &Tensor) -> Result<Var> {
    let p = g.constant(probe.clone());
    let m = g.mul(out, p)?;
    g.sum(m)
}

fn encoder_block(opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let cfg = EncoderConfig {
        num_blocks: 1,
        num_heads: 2,
        model_dim: 8,
        ffn_inner_dim: 16,
        prenet_layers: 1,
        prenet_kernel: 3,
        vocab_size: 4,
        dropout: 0.0,
    };
    let mut store = ParamStore::new();
    let block = SanBlock::new(&mut store, "encoder.block1", &cfg, rng)?;
    perturb(&mut store, rng);
    let x = normal(&[5, 8], 1.0, rng);
    let probe = normal(&[5, 8], 1.0, rng);
    check_gradients(
        &mut store,
        |g, s| {
            let xv = g.constant(x.clone());
            let out = block.forward(g, s, xv)?;
            probe_sum(g, out.hidden, &probe)
        },
        opts,
    )
}

fn aggregation(
    mode: AggregationMode,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport> {
    let cfg = ContextConfig {
        num_blocks: 2,
        model_dim: 4,
        num_heads: 2,
        ffn_inner_dim: 8,
        extractor_kernel: 3,
        mode,
    };
    let mut store = ParamStore::new();
    let module = ContextModule::new(&mut store, &cfg, rng)?;
    perturb(&mut store, rng);
    let layers: Vec<Tensor> = (0..cfg.num_contexts())
        .map(|_| normal(&[5, 4], 1.0, rng))
        .collect();
    let probe = normal(&[5, 4], 1.0, rng);
    check_gradients(
        &mut store,
        |g, s| {
            let stack = EncoderStackOutput {
                layer_outputs: layers.iter().map(|t| g.constant(t.clone())).collect(),
                attention: Vec::new(),
            };
            let (_, fused) = module.forward(g, s, &stack)?;
            probe_sum(g, fused, &probe)
        },
        opts,
    )
}

fn attention_step(opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut cfg = GmmAttentionConfig::new(4);
    cfg.num_mixtures = 3;
    cfg.hidden_dim = 6;
    let mut store = ParamStore::new();
    let att = GmmAttention::new(&mut store, "attention", &cfg, rng)?;
    perturb(&mut store, rng);
    let memory = normal(&[7, 3], 1.0, rng);
    let queries: Vec<Tensor> = (0..3).map(|_| normal(&[1, 4], 1.0, rng)).collect();
    let probe = normal(&[1, 3], 1.0, rng);
    check_gradients(
        &mut store,
        |g, s| {
            let mem = g.constant(memory.clone());
            let mut state = att.init_state(g, mem)?;
            let mut total: Option<Var> = None;
            for q in &queries {
                let qv = g.constant(q.clone());
                let step = att.step(g, s, state, qv)?;
                state = step.state;
                let term = probe_sum(g, step.context, &probe)?;
                total = Some(match total {
                    Some(t) => g.add(t, term)?,
                    None => term,
                });
            }
            Ok(total.expect("at least one query"))
        },
        opts,
    )
}

fn decoder_step(opts: &GradCheckOptions, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut attention = GmmAttentionConfig::new(4);
    attention.num_mixtures = 2;
    attention.hidden_dim = 3;
    let cfg = DecoderConfig {
        memory_dim: 3,
        prenet_dims: [4, 3],
        prenet_dropout: 0.0,
        recurrent_dims: [4, 4],
        num_mels: 3,
        reduction_factor: 2,
        postnet_layers: 2,
        postnet_channels: 4,
        postnet_kernel: 3,
        stop_threshold: 0.5,
        max_steps: 10,
        attention,
    };
    let mut store = ParamStore::new();
    let decoder = Decoder::new(&mut store, &cfg, rng)?;
    perturb(&mut store, rng);
    let memory = normal(&[4, 3], 1.0, rng);
    let target = MelSpectrogram::new(normal(&[5, 3], 1.0, rng), 12.5, 50.0, 16000)?;
    check_gradients(
        &mut store,
        |g, s| {
            let mem = g.constant(memory.clone());
            let out = decoder.teacher_forced_forward(g, s, mem, &target)?;
            decoder.loss(g, &out, &target)
        },
        opts,
    )
}

/// Runs the check for the encoder block, both aggregation modules, the GMM
/// attention step and the decoder, each on a fresh random instance.
pub fn module_gradient_checks(seed: u64, opts: &GradCheckOptions) -> Result<Vec<ModuleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        ModuleCheck {
            module: "encoder block",
            report: encoder_block(opts, &mut rng)?,
        },
        ModuleCheck {
            module: "direct aggregation",
            report: aggregation(AggregationMode::Direct, opts, &mut rng)?,
        },
        ModuleCheck {
            module: "weighted aggregation",
            report: aggregation(AggregationMode::Weighted, opts, &mut rng)?,
        },
        ModuleCheck {
            module: "gmm attention step",
            report: attention_step(opts, &mut rng)?,
        },
        ModuleCheck {
            module: "decoder step",
            report: decoder_step(opts, &mut rng)?,
        },
    ])
}
