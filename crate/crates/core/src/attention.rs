//! Monotonic Gaussian-mixture attention.
//!
//! A small perceptron reads the decoder query and predicts, per mixture,
//! a weight logit, a step size and a width. Means only ever move forward:
//!
//! ```text
//! w = softmax(ŵ)   Δ = softplus(Δ̂)   σ = softplus(σ̂) + 1e-4   μ' = μ + Δ
//! α_j = Σ_k w_k · mass of N(μ'_k, σ_k) on [j − ½, j + ½]
//! ```
//!
//! Each position receives the mixture mass of its unit bin, so the weights
//! never sum past one and collapse to a one-hot as σ shrinks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::numcore::{Graph, ParamStore, Tensor, Var};

pub const DEFAULT_MIXTURES: usize = 5;
pub const SIGMA_FLOOR: f64 = 1e-4;

const STATE_MAGIC: &[u8; 4] = b"GMMS";
const STATE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmAttentionConfig {
    pub num_mixtures: usize,
    pub query_dim: usize,
    pub hidden_dim: usize,
    /// Initial mean step per decoder step, before any training.
    pub initial_step: f64,
    /// Initial mixture width.
    pub initial_scale: f64,
}

impl GmmAttentionConfig {
    pub fn new(query_dim: usize) -> Self {
        GmmAttentionConfig {
            num_mixtures: DEFAULT_MIXTURES,
            query_dim,
            hidden_dim: 128,
            initial_step: 0.5,
            initial_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_mixtures < 1 {
            return Err(Error::Config(
                "GMM attention needs at least one mixture".into(),
            ));
        }
        if self.query_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "GMM attention widths must be positive".into(),
            ));
        }
        if self.initial_step <= 0.0 || self.initial_scale <= SIGMA_FLOOR {
            return Err(Error::Config(
                "GMM initial step and scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-utterance attention state. `means` is `[1, K]`, `memory` `[length, d]`.
#[derive(Clone, Copy, Debug)]
pub struct GmmAttentionState {
    pub means: Var,
    pub num_mixtures: usize,
    pub memory: Var,
}

/// Result of one [`GmmAttention::step`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionStep {
    /// `[1, d]`.
    pub context: Var,
    /// `[1, length]`.
    pub weights: Var,
    pub state: GmmAttentionState,
}

#[derive(Clone, Debug)]
pub struct GmmAttention {
    config: GmmAttentionConfig,
    hidden: Linear,
    output: Linear,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl GmmAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: &GmmAttentionConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.num_mixtures;
        let hidden = Linear::new(
            store,
            &format!("{name}.hidden"),
            config.query_dim,
            config.hidden_dim,
            rng,
        )?;
        let output = Linear::new(
            store,
            &format!("{name}.output"),
            config.hidden_dim,
            3 * k,
            rng,
        )?;
        let mut bias = Tensor::zeros(&[1, 3 * k]);
        bias.data_mut()[k..2 * k].fill(inverse_softplus(config.initial_step));
        bias.data_mut()[2 * k..].fill(inverse_softplus(config.initial_scale - SIGMA_FLOOR));
        store.set(&format!("{name}.output.bias"), &bias)?;
        Ok(GmmAttention {
            config: config.clone(),
            hidden,
            output,
        })
    }

    pub fn config(&self) -> &GmmAttentionConfig {
        &self.config
    }

    pub fn init_state(&self, g: &mut Graph, memory: Var) -> Result<GmmAttentionState> {
        init_state(g, memory, self.config.num_mixtures)
    }

    /// One decoder step: advances the means and reads a context from memory.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: GmmAttentionState,
        query: Var,
    ) -> Result<AttentionStep> {
        if g.shape(query) != [1, self.config.query_dim] {
            return Err(Error::shape(
                "gmm_attention",
                format!(
                    "query {:?}, expected [1, {}]",
                    g.shape(query),
                    self.config.query_dim
                ),
            ));
        }
        if state.num_mixtures != self.config.num_mixtures {
            return Err(Error::Config(format!(
                "state has {} mixtures, attention expects {}",
                state.num_mixtures, self.config.num_mixtures
            )));
        }
        let k = self.config.num_mixtures;
        let h = self.hidden.forward(g, store, query)?;
        let h = g.tanh(h)?;
        let raw = self.output.forward(g, store, h)?;
        let w = g.slice_cols(raw, 0, k)?;
        let w = g.softmax(w)?;
        let delta = g.slice_cols(raw, k, 2 * k)?;
        let delta = g.softplus(delta)?;
        let sigma = g.slice_cols(raw, 2 * k, 3 * k)?;
        let sigma = g.softplus(sigma)?;
        let sigma = g.offset(sigma, SIGMA_FLOOR)?;
        let means = g.add(state.means, delta)?;
        let len = g.shape(state.memory)[0];
        let weights = g.gmm_bins(w, means, sigma, len)?;
        let context = g.matmul(weights, state.memory)?;
        Ok(AttentionStep {
            context,
            weights,
            state: GmmAttentionState { means, ..state },
        })
    }
}

/// Fresh state with every mean at position 0.
pub fn init_state(g: &mut Graph, memory: Var, num_mixtures: usize) -> Result<GmmAttentionState> {
    if num_mixtures < 1 {
        return Err(Error::Config(
            "GMM attention needs at least one mixture".into(),
        ));
    }
    let shape = g.shape(memory);
    if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
        return Err(Error::Input(format!(
            "attention memory must be non-empty, got {shape:?}"
        )));
    }
    Ok(GmmAttentionState {
        means: g.constant(Tensor::zeros(&[1, num_mixtures])),
        num_mixtures,
        memory,
    })
}

impl GmmAttentionState {
    pub fn mean_values(&self, g: &Graph) -> Vec<f64> {
        g.value(self.means).data().to_vec()
    }

    /// Little-endian snapshot of the means and memory values.
    pub fn to_bytes(&self, g: &Graph) -> Vec<u8> {
        let mem = g.value(self.memory);
        let mut out = Vec::with_capacity(20 + 8 * (self.num_mixtures + mem.numel()));
        out.extend_from_slice(STATE_MAGIC);
        for v in [
            STATE_VERSION,
            self.num_mixtures as u32,
            mem.rows() as u32,
            mem.cols() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in g.value(self.means).data().iter().chain(mem.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Restores a snapshot as constants on `g`.
    pub fn from_bytes(g: &mut Graph, bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            kind: "attention state",
            detail,
        };
        if bytes.len() < 20 || &bytes[..4] != STATE_MAGIC {
            return Err(bad("missing header".into()));
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != STATE_VERSION as usize {
            return Err(bad(format!("unsupported version {}", word(0))));
        }
        let (k, rows, cols) = (word(1), word(2), word(3));
        let body = &bytes[20..];
        if body.len() != 8 * (k + rows * cols) {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                8 * (k + rows * cols),
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let means = g.constant(Tensor::new(vec![1, k], values[..k].to_vec())?);
        let memory = g.constant(Tensor::new(vec![rows, cols], values[k..].to_vec())?);
        init_state(g, memory, k)?;
        Ok(GmmAttentionState {
            means,
            num_mixtures: k,
            memory,
        })
    }
}

#[cfg(test)]
mod tests;
