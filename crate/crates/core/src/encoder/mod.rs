//! Self-attention text encoder.
//!
//! Symbols are embedded, passed through a three-layer convolutional prenet,
//! offset by sinusoidal positions, and then through `L` blocks of
//!
//! ```text
//! C = LN(MultiHead(H) + H)
//! H' = LN(FFN(C) + C)
//! ```
//!
//! Every intermediate `H⁰ … H^L` is returned, since the context aggregator
//! summarises each of them.

mod text;

use rand::Rng;

pub use text::{TextSequence, Vocabulary};

use crate::error::{Error, Result};
use crate::nn::{Conv1d, FeedForward, LayerNorm, MultiHeadAttention};
use crate::numcore::{normal, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_inner_dim: usize,
    pub prenet_layers: usize,
    pub prenet_kernel: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Six 8-head blocks, model width 512, feed-forward width 2048.
    pub fn paper(vocab_size: usize) -> Self {
        EncoderConfig {
            num_blocks: 6,
            num_heads: 8,
            model_dim: 512,
            ffn_inner_dim: 2048,
            prenet_layers: 3,
            prenet_kernel: 5,
            vocab_size,
            dropout: 0.0,
        }
    }

    pub fn toy(vocab_size: usize) -> Self {
        EncoderConfig {
            num_blocks: 2,
            num_heads: 4,
            model_dim: 64,
            ffn_inner_dim: 128,
            prenet_layers: 3,
            prenet_kernel: 5,
            vocab_size,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "model_dim {} must be divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.vocab_size == 0 || self.model_dim == 0 || self.ffn_inner_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.prenet_kernel == 0 {
            return Err(Error::Config("prenet kernel width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Every block output of one encoder pass: entry 0 is the prenet output `H⁰`,
/// entry `l` is `H^l`. All are `[length, model_dim]`.
#[derive(Clone, Debug)]
pub struct EncoderStackOutput {
    pub layer_outputs: Vec<Var>,
    /// Self-attention weights per block, per head, each `[length, length]`.
    pub attention: Vec<Vec<Tensor>>,
}

impl EncoderStackOutput {
    pub fn top(&self) -> Var {
        *self
            .layer_outputs
            .last()
            .expect("at least the prenet output")
    }

    pub fn values(&self, g: &Graph) -> Vec<Tensor> {
        self.layer_outputs
            .iter()
            .map(|&v| g.value(v).clone())
            .collect()
    }
}

#[derive(Clone, Debug)]
struct PrenetLayer {
    conv: Conv1d,
    norm: LayerNorm,
}

/// One self-attention block: attention and feed-forward sub-layers, each with
/// a residual connection and layer normalisation.
#[derive(Clone, Debug)]
pub struct SanBlock {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
    dropout: f64,
}

/// Outputs of a [`SanBlock`]: `C^l` after the attention sub-layer, `H^l` after the block.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub context: Var,
    pub hidden: Var,
    pub attention: Vec<Tensor>,
}

impl SanBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = config.model_dim;
        Ok(SanBlock {
            attention: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                d,
                config.num_heads,
                rng,
            )?,
            attention_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, config.ffn_inner_dim, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d)?,
            dropout: config.dropout,
        })
    }

    /// `C = LN(MultiHead(H) + H)`, also returning per-head weights.
    pub fn self_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prev: Var,
    ) -> Result<(Var, Vec<Tensor>)> {
        let att = self.attention.forward(g, store, prev, prev)?;
        let branch = g.dropout(att.output, self.dropout)?;
        let sum = g.add(branch, prev)?;
        Ok((self.attention_norm.forward(g, store, sum)?, att.weights))
    }

    /// `H' = LN(FFN(C) + C)`.
    pub fn feed_forward(&self, g: &mut Graph, store: &ParamStore, context: Var) -> Result<Var> {
        let f = self.ffn.forward(g, store, context)?;
        let f = g.dropout(f, self.dropout)?;
        let sum = g.add(f, context)?;
        self.ffn_norm.forward(g, store, sum)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, prev: Var) -> Result<BlockOutput> {
        let (context, attention) = self.self_attention(g, store, prev)?;
        let hidden = self.feed_forward(g, store, context)?;
        Ok(BlockOutput {
            context,
            hidden,
            attention,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    embedding: ParamId,
    prenet: Vec<PrenetLayer>,
    blocks: Vec<SanBlock>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let embedding = store.add(
            "encoder.embedding",
            normal(&[config.vocab_size, d], (1.0 / d as f64).sqrt(), rng),
        )?;
        let prenet = (0..config.prenet_layers)
            .map(|i| {
                Ok(PrenetLayer {
                    conv: Conv1d::new(
                        store,
                        &format!("encoder.prenet{i}.conv"),
                        config.prenet_kernel,
                        d,
                        d,
                        rng,
                    )?,
                    norm: LayerNorm::new(store, &format!("encoder.prenet{i}.norm"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        let blocks = (0..config.num_blocks)
            .map(|l| SanBlock::new(store, &format!("encoder.block{}", l + 1), config, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            config: config.clone(),
            embedding,
            prenet,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[SanBlock] {
        &self.blocks
    }

    /// Embedding, convolutional prenet and positional encoding: `H⁰`, `[length, d]`.
    pub fn embed_and_prenet(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        text: &TextSequence,
    ) -> Result<Var> {
        if let Some((t, id)) = text.positions().iter().enumerate().find_map(|(t, ids)| {
            ids.iter()
                .find(|&&id| id >= self.config.vocab_size)
                .map(|&id| (t, id))
        }) {
            return Err(Error::Vocabulary(format!(
                "symbol id {id} at position {t} is outside the vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let table = g.param(store, self.embedding);
        let mut x = g.embed(table, text.positions())?;
        for layer in &self.prenet {
            x = layer.conv.forward(g, store, x)?;
            x = layer.norm.forward(g, store, x)?;
            x = g.relu(x)?;
            x = g.dropout(x, self.config.dropout)?;
        }
        let pe = g.constant(sinusoidal_positions(text.len(), self.config.model_dim));
        g.add(x, pe)
    }

    pub fn encode(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        text: &TextSequence,
    ) -> Result<EncoderStackOutput> {
        let mut h = self.embed_and_prenet(g, store, text)?;
        let mut layer_outputs = vec![h];
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let out = block.forward(g, store, h)?;
            h = out.hidden;
            layer_outputs.push(h);
            attention.push(out.attention);
        }
        Ok(EncoderStackOutput {
            layer_outputs,
            attention,
        })
    }
}

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, dim]);
    let data = t.data_mut();
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}
