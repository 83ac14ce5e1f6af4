//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends a node holding its output value; `backward` replays the
//! tape in reverse and accumulates gradients into the [`ParamStore`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, View};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Normalisation floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    BroadcastRows(Var),
    Reshape(Var),
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MeanPool(Var),
    Softmax(Var),
    LayerNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Square(Var),
    Embed {
        table: Var,
        positions: Vec<Vec<usize>>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    GmmBins {
        weights: Var,
        means: Var,
        scales: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was on a differentiable path.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A single forward/backward tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose [`Graph::dropout`] calls are active, drawing masks from `seed`.
    pub fn with_dropout(seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        if self.nodes[v.0].value.is_matrix() {
            Ok(self.dims(v))
        } else {
            Err(Error::shape(
                op,
                format!("expected a matrix, got {:?}", self.shape(v)),
            ))
        }
    }

    // ── leaves ─────────────────────────────────────────────────────────

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// The tape node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let t = &store.get(id).tensor;
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid parameter");
        self.nodes.push(Node {
            value,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    // ── linear algebra ────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            View::new(self.data(a), k),
            View::new(self.data(b), n),
            0.0,
            &mut out,
        );
        self.push(
            "matmul",
            Tensor::new(vec![m, n], out)?,
            Op::MatMul(a, b),
            &[a, b],
        )
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul_t", a)?;
        let (n, k2) = self.matrix("matmul_t", b)?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} x {:?}ᵀ", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            View::new(self.data(a), k),
            View::transposed(self.data(b), k),
            0.0,
            &mut out,
        );
        self.push(
            "matmul_t",
            Tensor::new(vec![m, n], out)?,
            Op::MatMulT(a, b),
            &[a, b],
        )
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.matrix("transpose", a)?;
        let t = self.value(a).transpose();
        self.push("transpose", t, Op::Transpose(a), &[a])
    }

    /// `x · w + b` with `b` a `[1, n]` row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    // ── elementwise ───────────────────────────────────────────────────

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let t = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    fn row_broadcast(
        &self,
        op: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (m, n) = self.matrix(op, a)?;
        if self.shape(row) != [1, n] {
            return Err(Error::shape(
                op,
                format!("row {:?} against {:?}", self.shape(row), self.shape(a)),
            ));
        }
        let r = self.data(row);
        let data = self
            .data(a)
            .chunks(n.max(1))
            .flat_map(|chunk| chunk.iter().zip(r).map(|(&x, &y)| f(x, y)))
            .collect();
        Tensor::new(vec![m, n], data)
    }

    /// Adds a `[1, n]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        self.push("add_row", t, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `[1, n]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let t = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        self.push("mul_row", t, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.map(a, |x| x * factor);
        self.push("scale", t, Op::Scale(a, factor), &[a])
    }

    pub fn offset(&mut self, a: Var, delta: f64) -> Result<Var> {
        let t = self.map(a, |x| x + delta);
        self.push("offset", t, Op::Offset(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x.max(0.0));
        self.push("relu", t, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::tanh);
        self.push("tanh", t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, kernels::sigmoid);
        self.push("sigmoid", t, Op::Sigmoid(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, kernels::softplus);
        self.push("softplus", t, Op::Softplus(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, f64::exp);
        self.push("exp", t, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let t = self.map(a, |x| x * x);
        self.push("square", t, Op::Square(a), &[a])
    }

    /// Inverted dropout. Identity unless the graph was built with [`Graph::with_dropout`].
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(a);
        };
        if rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be < 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[a.0].value.numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let data = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("dropout", t, Op::Dropout { input: a, mask }, &[a])
    }

    // ── structure ─────────────────────────────────────────────────────

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let t = Tensor::concat(&values, axis)?;
        self.push("concat", t, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a).slice(0, start, end)?;
        self.push(
            "slice",
            t,
            Op::Slice {
                input: a,
                axis: 0,
                start,
            },
            &[a],
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a).slice(1, start, end)?;
        self.push(
            "slice",
            t,
            Op::Slice {
                input: a,
                axis: 1,
                start,
            },
            &[a],
        )
    }

    /// Repeats a `[1, n]` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (m, n) = self.matrix("broadcast_rows", a)?;
        if m != 1 {
            return Err(Error::shape(
                "broadcast_rows",
                format!("expected a row vector, got {:?}", self.shape(a)),
            ));
        }
        let data = self.data(a).repeat(rows);
        self.push(
            "broadcast_rows",
            Tensor::new(vec![rows, n], data)?,
            Op::BroadcastRows(a),
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = Tensor::new(shape, self.data(a).to_vec())?;
        self.push("reshape", t, Op::Reshape(a), &[a])
    }

    // ── sequence ops ──────────────────────────────────────────────────

    /// Same-length 1-D convolution along the row (time) axis.
    ///
    /// `x` is `[T, cin]`, `weight` is `[width, cin, cout]`, `bias` is `[1, cout]`.
    /// Stride 1 with `(width-1)/2` zeros of left padding and the rest on the right.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (steps, cin) = self.matrix("conv1d", x)?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 3 || ws[1] != cin || ws[0] == 0 || self.shape(bias) != [1, ws[2]] {
            return Err(Error::shape(
                "conv1d",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    ws,
                    self.shape(bias)
                ),
            ));
        }
        let (width, cout) = (ws[0], ws[2]);
        let mut out = vec![0.0; steps * cout];
        kernels::conv1d_forward(
            self.data(x),
            steps,
            cin,
            self.data(weight),
            width,
            cout,
            self.data(bias),
            &mut out,
        );
        self.push(
            "conv1d",
            Tensor::new(vec![steps, cout], out)?,
            Op::Conv1d {
                input: x,
                weight,
                bias,
            },
            &[x, weight, bias],
        )
    }

    /// Mean over rows: `[T, d] -> [1, d]`.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix("mean_pool", a)?;
        if m == 0 {
            return Err(Error::shape("mean_pool", "empty sequence"));
        }
        let mut out = vec![0.0; n];
        for row in self.data(a).chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        self.push("mean_pool", Tensor::row(out), Op::MeanPool(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (_, n) = self.matrix("softmax", a)?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push("softmax", t, Op::Softmax(a), &[a])
    }

    /// Row-wise normalisation to zero mean and unit variance, without gain or bias.
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix("layer_norm", a)?;
        let mut out = self.data(a).to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in out.chunks_mut(n.max(1)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push("layer_norm", t, Op::LayerNorm { input: a, inv_std }, &[a])
    }

    /// Sums embedding rows: output row `t` is the sum of `table[id]` over `positions[t]`.
    pub fn embed(&mut self, table: Var, positions: &[Vec<usize>]) -> Result<Var> {
        let (vocab, d) = self.matrix("embed_lookup", table)?;
        let mut out = vec![0.0; positions.len() * d];
        let tab = self.data(table);
        for (t, ids) in positions.iter().enumerate() {
            for &id in ids {
                if id >= vocab {
                    return Err(Error::shape(
                        "embed_lookup",
                        format!("id {id} at position {t} outside table of {vocab} rows"),
                    ));
                }
                for (o, w) in out[t * d..(t + 1) * d]
                    .iter_mut()
                    .zip(&tab[id * d..(id + 1) * d])
                {
                    *o += w;
                }
            }
        }
        let t = Tensor::new(vec![positions.len(), d], out)?;
        self.push(
            "embed_lookup",
            t,
            Op::Embed {
                table,
                positions: positions.to_vec(),
            },
            &[table],
        )
    }

    /// Gaussian mixture mass on unit bins centred at integer positions `0..len`.
    ///
    /// `weights`, `means` and `scales` are `[1, K]`; the output row is
    /// `Σ_k w_k (Φ((j+½−μ_k)/σ_k) − Φ((j−½−μ_k)/σ_k))`.
    pub fn gmm_bins(&mut self, weights: Var, means: Var, scales: Var, len: usize) -> Result<Var> {
        let k = self.matrix("gmm_bins", weights)?.1;
        for v in [means, scales] {
            if self.shape(v) != [1, k] || self.shape(weights) != [1, k] {
                return Err(Error::shape(
                    "gmm_bins",
                    format!(
                        "mixture parameters {:?}, {:?}",
                        self.shape(weights),
                        self.shape(v)
                    ),
                ));
            }
        }
        let (w, mu, sigma) = (self.data(weights), self.data(means), self.data(scales));
        if sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::Input("gmm_bins: scales must be positive".into()));
        }
        let mut out = vec![0.0; len];
        for (j, o) in out.iter_mut().enumerate() {
            let pos = j as f64;
            for c in 0..k {
                let hi = kernels::norm_cdf((pos + 0.5 - mu[c]) / sigma[c]);
                let lo = kernels::norm_cdf((pos - 0.5 - mu[c]) / sigma[c]);
                *o += w[c] * (hi - lo);
            }
        }
        self.push(
            "gmm_bins",
            Tensor::row(out),
            Op::GmmBins {
                weights,
                means,
                scales,
            },
            &[weights, means, scales],
        )
    }

    // ── reductions and losses ─────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.numel();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.data(a).iter().sum::<f64>() / n as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let t = self.constant(target.clone());
        let diff = self.sub(pred, t)?;
        let sq = self.square(diff)?;
        self.mean(sq)
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against constant 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.data(logits);
        if z.len() != targets.len() || z.is_empty() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits vs {} targets", z.len(), targets.len()),
            ));
        }
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        self.push(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    // ── reverse pass ──────────────────────────────────────────────────

    /// Back-propagates from a scalar `loss`, adding each parameter's gradient
    /// into `store`. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads, store);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                if let Some(pg) = p.tensor.grad_mut() {
                    for (a, b) in pg.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    kernels::gemm(
                        m,
                        n,
                        k,
                        View::new(g, n),
                        View::transposed(self.data(*b), n),
                        1.0,
                        ga,
                    );
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    kernels::gemm(
                        k,
                        m,
                        n,
                        View::transposed(self.data(*a), k),
                        View::new(g, n),
                        1.0,
                        gb,
                    );
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    kernels::gemm(
                        m,
                        n,
                        k,
                        View::new(g, n),
                        View::new(self.data(*b), k),
                        1.0,
                        ga,
                    );
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    kernels::gemm(
                        n,
                        m,
                        k,
                        View::transposed(g, n),
                        View::new(self.data(*a), k),
                        1.0,
                        gb,
                    );
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                if let Some(ga) = acc(nodes, grads, *a) {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = acc(nodes, grads, v) {
                        add_into(gv, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for (x, y) in gb.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(db) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(da) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let n = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gr) = acc(nodes, grads, *row) {
                    for chunk in g.chunks(n.max(1)) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let n = out.cols();
                let (da, dr) = (self.data(*a), self.data(*row));
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (gc, xc) in ga.chunks_mut(n.max(1)).zip(g.chunks(n.max(1))) {
                        for ((x, gi), r) in gc.iter_mut().zip(xc).zip(dr) {
                            *x += gi * r;
                        }
                    }
                }
                if let Some(gr) = acc(nodes, grads, *row) {
                    for (gc, ac) in g.chunks(n.max(1)).zip(da.chunks(n.max(1))) {
                        for ((x, gi), ai) in gr.iter_mut().zip(gc).zip(ac) {
                            *x += gi * ai;
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for (x, gi) in ga.iter_mut().zip(g) {
                        *x += gi * f;
                    }
                }
            }
            Op::Offset(a) | Op::Reshape(a) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
            }
            Op::Concat(parts, axis) => {
                let total_cols = out.cols();
                let mut start = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    if let Some(gp) = acc(nodes, grads, p) {
                        if *axis == 0 {
                            add_into(gp, &g[start * total_cols..(start + pr) * total_cols]);
                        } else {
                            for r in 0..pr {
                                let src = &g[r * total_cols + start..r * total_cols + start + pc];
                                add_into(&mut gp[r * pc..(r + 1) * pc], src);
                            }
                        }
                    }
                    start += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { input, axis, start } => {
                let (_, in_cols) = self.dims(*input);
                let (rows, cols) = (out.rows(), out.cols());
                if let Some(gi) = acc(nodes, grads, *input) {
                    if *axis == 0 {
                        add_into(&mut gi[start * in_cols..(start + rows) * in_cols], g);
                    } else {
                        for r in 0..rows {
                            let dst = &mut gi[r * in_cols + start..r * in_cols + start + cols];
                            add_into(dst, &g[r * cols..(r + 1) * cols]);
                        }
                    }
                }
            }
            Op::BroadcastRows(a) => {
                let n = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for chunk in g.chunks(n.max(1)) {
                        add_into(ga, chunk);
                    }
                }
            }
            Op::Conv1d {
                input,
                weight,
                bias,
            } => {
                let (steps, cin) = self.dims(*input);
                let ws = self.shape(*weight);
                let (width, cout) = (ws[0], ws[2]);
                let pad = (width - 1) / 2;
                let (x, w) = (self.data(*input), self.data(*weight));
                if let Some(gx) = acc(nodes, grads, *input) {
                    for k in 0..width {
                        if let Some((dst, src, len)) = kernels::tap_range(steps, k, pad) {
                            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
                            kernels::gemm(
                                len,
                                cout,
                                cin,
                                View::new(&g[dst * cout..], cout),
                                View::transposed(wk, cout),
                                1.0,
                                &mut gx[src * cin..],
                            );
                        }
                    }
                }
                if let Some(gw) = acc(nodes, grads, *weight) {
                    for k in 0..width {
                        if let Some((dst, src, len)) = kernels::tap_range(steps, k, pad) {
                            kernels::gemm(
                                cin,
                                len,
                                cout,
                                View::transposed(&x[src * cin..], cin),
                                View::new(&g[dst * cout..], cout),
                                1.0,
                                &mut gw[k * cin * cout..(k + 1) * cin * cout],
                            );
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, *bias) {
                    for chunk in g.chunks(cout) {
                        add_into(gb, chunk);
                    }
                }
            }
            Op::MeanPool(a) => {
                let (m, n) = self.dims(*a);
                if let Some(ga) = acc(nodes, grads, *a) {
                    for chunk in ga.chunks_mut(n) {
                        for (x, gi) in chunk.iter_mut().zip(g) {
                            *x += gi / m as f64;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let n = out.cols();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((gx, gy), y) in ga.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n))
                    {
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for ((x, gi), yi) in gx.iter_mut().zip(gy).zip(y) {
                            *x += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { input, inv_std } => {
                let n = out.cols();
                if let Some(ga) = acc(nodes, grads, *input) {
                    for (r, ((gx, gy), y)) in ga
                        .chunks_mut(n)
                        .zip(g.chunks(n))
                        .zip(out.data().chunks(n))
                        .enumerate()
                    {
                        let mean_g = gy.iter().sum::<f64>() / n as f64;
                        let mean_gy = gy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for ((x, gi), yi) in gx.iter_mut().zip(gy).zip(y) {
                            *x += inv_std[r] * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.data(*a);
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((d, gi), xi) in ga.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Tanh(a) => elementwise_grad(acc(nodes, grads, *a), g, out.data(), |y| 1.0 - y * y),
            Op::Sigmoid(a) => {
                elementwise_grad(acc(nodes, grads, *a), g, out.data(), |y| y * (1.0 - y))
            }
            Op::Exp(a) => elementwise_grad(acc(nodes, grads, *a), g, out.data(), |y| y),
            Op::Softplus(a) => {
                elementwise_grad(acc(nodes, grads, *a), g, self.data(*a), kernels::sigmoid)
            }
            Op::Square(a) => elementwise_grad(acc(nodes, grads, *a), g, self.data(*a), |x| 2.0 * x),
            Op::Dropout { input, mask } => {
                elementwise_grad(acc(nodes, grads, *input), g, mask, |m| m)
            }
            Op::Embed { table, positions } => {
                let d = self.dims(*table).1;
                if let Some(gt) = acc(nodes, grads, *table) {
                    for (t, ids) in positions.iter().enumerate() {
                        for &id in ids {
                            add_into(&mut gt[id * d..(id + 1) * d], &g[t * d..(t + 1) * d]);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    let n = ga.len() as f64;
                    for x in ga.iter_mut() {
                        *x += g[0] / n;
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.data(*logits);
                if let Some(gz) = acc(nodes, grads, *logits) {
                    let n = z.len() as f64;
                    for ((x, zi), ti) in gz.iter_mut().zip(z).zip(targets) {
                        *x += g[0] * (kernels::sigmoid(*zi) - ti) / n;
                    }
                }
            }
            Op::GmmBins {
                weights,
                means,
                scales,
            } => {
                let k = self.dims(*weights).1;
                let (w, mu, sigma) = (self.data(*weights), self.data(*means), self.data(*scales));
                let mut dw = vec![0.0; k];
                let mut dmu = vec![0.0; k];
                let mut dsigma = vec![0.0; k];
                for (j, gj) in g.iter().enumerate() {
                    let pos = j as f64;
                    for c in 0..k {
                        let hi = (pos + 0.5 - mu[c]) / sigma[c];
                        let lo = (pos - 0.5 - mu[c]) / sigma[c];
                        let (phi_hi, phi_lo) = (kernels::norm_pdf(hi), kernels::norm_pdf(lo));
                        dw[c] += gj * (kernels::norm_cdf(hi) - kernels::norm_cdf(lo));
                        dmu[c] += gj * w[c] * (phi_lo - phi_hi) / sigma[c];
                        dsigma[c] += gj * w[c] * (phi_lo * lo - phi_hi * hi) / sigma[c];
                    }
                }
                for (v, d) in [(*weights, dw), (*means, dmu), (*scales, dsigma)] {
                    if let Some(gv) = acc(nodes, grads, v) {
                        add_into(gv, &d);
                    }
                }
            }
        }
    }
}

/// Accumulator for an input's gradient; `None` when the input needs none.
fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn elementwise_grad(
    dst: Option<&mut Vec<f64>>,
    g: &[f64],
    saved: &[f64],
    deriv: impl Fn(f64) -> f64,
) {
    if let Some(dst) = dst {
        for ((d, gi), s) in dst.iter_mut().zip(g).zip(saved) {
            *d += gi * deriv(*s);
        }
    }
}
