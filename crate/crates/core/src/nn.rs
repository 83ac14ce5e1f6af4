//! Parameterised layers shared by the encoder, context aggregator and decoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{glorot, Graph, ParamId, ParamStore, Tensor, Var};

/// `y = x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.add(
                format!("{name}.weight"),
                glorot(&[in_dim, out_dim], in_dim, out_dim, rng),
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]))?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }
}

/// Row-wise layer normalisation followed by a learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[1, dim], 1.0))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Same-length convolution over the time axis.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config(format!(
                "{name}: kernel width must be positive"
            )));
        }
        Ok(Conv1d {
            weight: store.add(
                format!("{name}.weight"),
                glorot(
                    &[width, in_dim, out_dim],
                    width * in_dim,
                    width * out_dim,
                    rng,
                ),
            )?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]))?,
            width,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b)
    }
}

/// Two linear maps with a ReLU between them.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        inner_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), dim, inner_dim, rng)?,
            outer: Linear::new(store, &format!("{name}.outer"), inner_dim, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, store, x)?;
        let h = g.relu(h)?;
        self.outer.forward(g, store, h)
    }
}

/// Output of [`MultiHeadAttention::forward`].
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Projected head concatenation, `[queries, dim]`, before any residual.
    pub output: Var,
    /// Per-head attention weights, each `[queries, keys]`.
    pub weights: Vec<Tensor>,
}

/// Scaled dot-product attention split over `heads` heads of width `dim / heads`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng)?,
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng)?,
            heads,
            dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `queries` is `[Tq, dim]`, `memory` is `[Tk, dim]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: Var,
        memory: Var,
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(g, store, queries)?;
        let k = self.key.forward(g, store, memory)?;
        let v = self.value.forward(g, store, memory)?;
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let alpha = g.softmax(scores)?;
            weights.push(g.value(alpha).clone());
            heads.push(g.matmul(alpha, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat(&heads, 1)?
        };
        let output = self.out.forward(g, store, joined)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Gated recurrent memory cell with input, forget and output gates.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub gates: Linear,
    pub hidden: usize,
}

/// Hidden and cell state of an [`LstmCell`], each `[1, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let gates = Linear::new(
            store,
            &format!("{name}.gates"),
            input + hidden,
            4 * hidden,
            rng,
        )?;
        // forget-gate bias starts at 1
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        store.set(&format!("{name}.gates.bias"), &bias)?;
        Ok(LstmCell { gates, hidden })
    }

    pub fn zero_state(&self, g: &mut Graph) -> LstmState {
        LstmState {
            h: g.constant(Tensor::zeros(&[1, self.hidden])),
            c: g.constant(Tensor::zeros(&[1, self.hidden])),
        }
    }

    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let n = self.hidden;
        let xh = g.concat(&[x, state.h], 1)?;
        let z = self.gates.forward(g, store, xh)?;
        let i = g.slice_cols(z, 0, n)?;
        let f = g.slice_cols(z, n, 2 * n)?;
        let cand = g.slice_cols(z, 2 * n, 3 * n)?;
        let o = g.slice_cols(z, 3 * n, 4 * n)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
