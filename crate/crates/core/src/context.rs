//! Sentential context extraction and aggregation.
//!
//! Each encoder layer output `H^l` (including the prenet output `H⁰`) is
//! summarised as `g^l = MeanPool(Conv1d(H^l))`. The `L+1` summaries are then
//! aggregated into one sentence vector `g`:
//!
//! * **direct**: `C_g = LN(W·[g⁰;…;g^L] + b + g^L)`, where the linear map
//!   brings the `(L+1)·d` concatenation back to `d` so the residual is defined;
//! * **weighted**: `C_g = LN(MultiHead(q = g^L, memory = [g⁰,…,g^L,g^L]) + g^L)`,
//!   with `g^L` entered twice in the memory;
//!
//! and in both cases `g = LN(FFN(C_g) + C_g)`. Finally `g` is broadcast over
//! time, concatenated to the top encoder output and projected back to `d`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::encoder::EncoderStackOutput;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::numcore::{Graph, ParamStore, Tensor, Var};

/// How per-layer contexts are combined. `None` is the plain self-attention system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggregationMode {
    None,
    Direct,
    Weighted,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 3] = [Self::None, Self::Direct, Self::Weighted];

    /// Column label used in metric tables.
    pub fn system_name(self) -> &'static str {
        match self {
            Self::None => "SA",
            Self::Direct => "SA-DA",
            Self::Weighted => "SA-WA",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Direct => "direct",
            Self::Weighted => "weighted",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "direct" => Ok(Self::Direct),
            "weighted" => Ok(Self::Weighted),
            other => Err(Error::Config(format!(
                "aggregation mode `{other}` is not one of none, direct, weighted"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextConfig {
    /// Number of encoder blocks `L`; `L+1` contexts are extracted.
    pub num_blocks: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_inner_dim: usize,
    pub extractor_kernel: usize,
    pub mode: AggregationMode,
}

impl ContextConfig {
    pub fn num_contexts(&self) -> usize {
        self.num_blocks + 1
    }

    /// Attention memory size for weighted aggregation: every context plus a second `g^L`.
    pub fn memory_slots(&self) -> usize {
        self.num_blocks + 2
    }
}

/// The per-layer contexts `g⁰ … g^L`, each `[1, d]`.
#[derive(Clone, Debug)]
pub struct LayerContextSet {
    pub contexts: Vec<Var>,
}

impl LayerContextSet {
    pub fn top(&self) -> Var {
        *self.contexts.last().expect("non-empty context set")
    }

    fn validate(&self, g: &Graph, expected: usize, dim: usize) -> Result<()> {
        if self.contexts.len() != expected {
            return Err(Error::shape(
                "context_set",
                format!(
                    "expected {expected} layer contexts, got {}",
                    self.contexts.len()
                ),
            ));
        }
        if let Some(v) = self.contexts.iter().find(|&&v| g.shape(v) != [1, dim]) {
            return Err(Error::shape(
                "context_set",
                format!(
                    "layer context has shape {:?}, expected [1, {dim}]",
                    g.shape(*v)
                ),
            ));
        }
        Ok(())
    }
}

/// The aggregated sentence vector `g` (absent in mode `None`).
#[derive(Clone, Debug)]
pub struct SentenceContext {
    pub vector: Option<Var>,
    pub mode: AggregationMode,
    /// `C_g`, the residual-normalised aggregate before the final feed-forward stage.
    pub combined: Option<Var>,
    /// Weighted mode only: `[heads, memory_slots]` attention of `g^L` over the memory.
    pub layer_weights: Option<Tensor>,
}

impl SentenceContext {
    pub fn none() -> Self {
        SentenceContext {
            vector: None,
            mode: AggregationMode::None,
            combined: None,
            layer_weights: None,
        }
    }
}

/// `g = LN(FFN(C_g) + C_g)`.
#[derive(Clone, Debug)]
struct FinalStage {
    ffn: FeedForward,
    norm: LayerNorm,
}

impl FinalStage {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &ContextConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(FinalStage {
            ffn: FeedForward::new(
                store,
                &format!("{name}.ffn"),
                cfg.model_dim,
                cfg.ffn_inner_dim,
                rng,
            )?,
            norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), cfg.model_dim)?,
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, c: Var) -> Result<Var> {
        let f = self.ffn.forward(g, store, c)?;
        let sum = g.add(f, c)?;
        self.norm.forward(g, store, sum)
    }
}

#[derive(Clone, Debug)]
pub struct DirectAggregator {
    pub projection: Linear,
    pub norm: LayerNorm,
    stage: FinalStage,
}

#[derive(Clone, Debug)]
pub struct WeightedAggregator {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
    stage: FinalStage,
}

#[derive(Clone, Debug)]
enum Aggregator {
    Direct(DirectAggregator),
    Weighted(WeightedAggregator),
}

/// Extractor, aggregator and fusion parameters for one aggregation mode.
#[derive(Clone, Debug)]
pub struct ContextModule {
    config: ContextConfig,
    extractors: Vec<Conv1d>,
    aggregator: Option<Aggregator>,
    fusion: Option<Linear>,
}

impl ContextModule {
    /// Registers parameters under `context.*`. Mode `None` registers nothing.
    pub fn new(store: &mut ParamStore, config: &ContextConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = config.model_dim;
        if config.mode == AggregationMode::None {
            return Ok(ContextModule {
                config: config.clone(),
                extractors: Vec::new(),
                aggregator: None,
                fusion: None,
            });
        }
        let extractors = (0..config.num_contexts())
            .map(|l| {
                Conv1d::new(
                    store,
                    &format!("context.extract{l}"),
                    config.extractor_kernel,
                    d,
                    d,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregator = match config.mode {
            AggregationMode::Direct => Aggregator::Direct(DirectAggregator {
                projection: Linear::new(
                    store,
                    "context.direct.proj",
                    config.num_contexts() * d,
                    d,
                    rng,
                )?,
                norm: LayerNorm::new(store, "context.direct.norm", d)?,
                stage: FinalStage::new(store, "context.direct", config, rng)?,
            }),
            AggregationMode::Weighted => Aggregator::Weighted(WeightedAggregator {
                attention: MultiHeadAttention::new(
                    store,
                    "context.weighted.attn",
                    d,
                    config.num_heads,
                    rng,
                )?,
                norm: LayerNorm::new(store, "context.weighted.norm", d)?,
                stage: FinalStage::new(store, "context.weighted", config, rng)?,
            }),
            AggregationMode::None => unreachable!(),
        };
        let fusion = Linear::new(store, "context.fuse", 2 * d, d, rng)?;
        // Start the fusion as a pass-through of the encoder half.
        let mut w = store.get(fusion.weight).tensor.clone();
        let data = w.data_mut();
        for r in 0..d {
            for c in 0..d {
                data[r * d + c] = if r == c { 1.0 } else { 0.0 };
            }
        }
        store.set("context.fuse.weight", &w)?;
        Ok(ContextModule {
            config: config.clone(),
            extractors,
            aggregator: Some(aggregator),
            fusion: Some(fusion),
        })
    }

    pub fn config(&self) -> &ContextConfig {
        &self.config
    }

    pub fn mode(&self) -> AggregationMode {
        self.config.mode
    }

    /// `g^l = MeanPool(Conv1d_l(H^l))`.
    pub fn extract_layer_context(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        layer: Var,
        layer_index: usize,
    ) -> Result<Var> {
        let conv = self.extractors.get(layer_index).ok_or_else(|| {
            Error::Config(format!(
                "no context extractor for layer {layer_index} in mode {}",
                self.config.mode
            ))
        })?;
        if g.shape(layer).first() == Some(&0) {
            return Err(Error::Input(
                "cannot extract a context from an empty sequence".into(),
            ));
        }
        let y = conv.forward(g, store, layer)?;
        g.mean_pool(y)
    }

    pub fn extract_all(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stack: &EncoderStackOutput,
    ) -> Result<LayerContextSet> {
        let contexts = stack
            .layer_outputs
            .iter()
            .enumerate()
            .map(|(l, &h)| self.extract_layer_context(g, store, h, l))
            .collect::<Result<_>>()?;
        Ok(LayerContextSet { contexts })
    }

    pub fn direct_aggregate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        set: &LayerContextSet,
    ) -> Result<SentenceContext> {
        let Some(Aggregator::Direct(agg)) = &self.aggregator else {
            return Err(Error::Config(format!(
                "direct aggregation requested from a `{}` context module",
                self.config.mode
            )));
        };
        set.validate(g, self.config.num_contexts(), self.config.model_dim)?;
        let joined = g.concat(&set.contexts, 1)?;
        let projected = agg.projection.forward(g, store, joined)?;
        let sum = g.add(projected, set.top())?;
        let c = agg.norm.forward(g, store, sum)?;
        let vector = agg.stage.forward(g, store, c)?;
        Ok(SentenceContext {
            vector: Some(vector),
            mode: AggregationMode::Direct,
            combined: Some(c),
            layer_weights: None,
        })
    }

    pub fn weighted_aggregate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        set: &LayerContextSet,
    ) -> Result<SentenceContext> {
        let Some(Aggregator::Weighted(agg)) = &self.aggregator else {
            return Err(Error::Config(format!(
                "weighted aggregation requested from a `{}` context module",
                self.config.mode
            )));
        };
        set.validate(g, self.config.num_contexts(), self.config.model_dim)?;
        let mut slots = set.contexts.clone();
        slots.push(set.top());
        let memory = g.concat(&slots, 0)?;
        let att = agg.attention.forward(g, store, set.top(), memory)?;
        let sum = g.add(att.output, set.top())?;
        let c = agg.norm.forward(g, store, sum)?;
        let vector = agg.stage.forward(g, store, c)?;
        let rows: Vec<&Tensor> = att.weights.iter().collect();
        let layer_weights = Tensor::concat(&rows, 0)?;
        Ok(SentenceContext {
            vector: Some(vector),
            mode: AggregationMode::Weighted,
            combined: Some(c),
            layer_weights: Some(layer_weights),
        })
    }

    /// Extracts and aggregates according to the configured mode.
    pub fn sentence_context(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stack: &EncoderStackOutput,
    ) -> Result<SentenceContext> {
        match self.config.mode {
            AggregationMode::None => Ok(SentenceContext::none()),
            AggregationMode::Direct => {
                let set = self.extract_all(g, store, stack)?;
                self.direct_aggregate(g, store, &set)
            }
            AggregationMode::Weighted => {
                let set = self.extract_all(g, store, stack)?;
                self.weighted_aggregate(g, store, &set)
            }
        }
    }

    /// `W·[H^L ; g broadcast over time] + b`; identity when there is no sentence vector.
    pub fn fuse_context(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        encoder_top: Var,
        ctx: &SentenceContext,
    ) -> Result<Var> {
        let Some(vector) = ctx.vector else {
            if ctx.mode != AggregationMode::None {
                return Err(Error::Input(format!(
                    "mode {} without a sentence vector",
                    ctx.mode
                )));
            }
            return Ok(encoder_top);
        };
        let fusion = self.fusion.as_ref().ok_or_else(|| {
            Error::Config("context module has no fusion layer in mode none".into())
        })?;
        let (len, d) = (g.shape(encoder_top)[0], g.shape(encoder_top)[1]);
        if d != self.config.model_dim || g.shape(vector) != [1, d] {
            return Err(Error::shape(
                "fuse_context",
                format!(
                    "encoder {:?} with sentence vector {:?}",
                    g.shape(encoder_top),
                    g.shape(vector)
                ),
            ));
        }
        let tiled = g.broadcast_rows(vector, len)?;
        let joined = g.concat(&[encoder_top, tiled], 1)?;
        fusion.forward(g, store, joined)
    }

    /// Sentence context and the fused decoder memory for one encoder pass.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        stack: &EncoderStackOutput,
    ) -> Result<(SentenceContext, Var)> {
        let ctx = self.sentence_context(g, store, stack)?;
        let fused = self.fuse_context(g, store, stack.top(), &ctx)?;
        Ok((ctx, fused))
    }
}

#[cfg(test)]
mod tests;
