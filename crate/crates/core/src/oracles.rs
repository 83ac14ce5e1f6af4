//! Unvectorised reference implementations used by unit tests. Nothing here
//! touches the tape or the gemm kernels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numcore::{normal, ParamStore, Tensor};

pub type Mat = Vec<Vec<f64>>;

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    normal(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).to_rows()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn affine(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Mat {
    let mut y = matmul(x, w);
    for row in &mut y {
        for (v, bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
    y
}

/// Layer normalisation of one row with unit gain and zero bias.
pub fn layer_norm(row: &[f64]) -> Vec<f64> {
    let n = row.len() as f64;
    let m = row.iter().sum::<f64>() / n;
    let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    row.iter()
        .map(|x| (x - m) / (v + crate::numcore::LAYER_NORM_EPS).sqrt())
        .collect()
}

pub fn relu(x: &[Vec<f64>]) -> Mat {
    x.iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).collect())
        .collect()
}

pub fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Direct convolution, `w` indexed `[tap][in][out]`, zero padding `(width-1)/2` on the left.
pub fn conv1d(x: &[Vec<f64>], w: &[Mat], b: &[f64]) -> Mat {
    let steps = x.len();
    let width = w.len();
    let pad = (width - 1) / 2;
    let cout = b.len();
    let mut out = vec![b.to_vec(); steps];
    for t in 0..steps {
        for (k, wk) in w.iter().enumerate() {
            let src = t as isize + k as isize - pad as isize;
            if src < 0 || src >= steps as isize {
                continue;
            }
            for (c, xv) in x[src as usize].iter().enumerate() {
                for o in 0..cout {
                    out[t][o] += xv * wk[c][o];
                }
            }
        }
    }
    out
}

pub fn mean_rows(x: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; x[0].len()];
    for row in x {
        for (a, v) in m.iter_mut().zip(row) {
            *a += v;
        }
    }
    m.iter().map(|v| v / x.len() as f64).collect()
}

/// Multi-head attention with explicit loops over heads, queries and keys.
/// Returns the projected output and per-head `[queries][keys]` weights.
pub fn multi_head_attention(
    queries: &[Vec<f64>],
    memory: &[Vec<f64>],
    w: [&[Vec<f64>]; 4],
    b: [&[f64]; 4],
    heads: usize,
) -> (Mat, Vec<Mat>) {
    let q = affine(queries, w[0], b[0]);
    let k = affine(memory, w[1], b[1]);
    let v = affine(memory, w[2], b[2]);
    let d = q[0].len();
    let dh = d / heads;
    let mut concat = vec![vec![0.0; d]; queries.len()];
    let mut all_weights = Vec::new();
    for h in 0..heads {
        let mut weights = vec![vec![0.0; memory.len()]; queries.len()];
        for i in 0..queries.len() {
            let mut scores = Vec::new();
            for j in 0..memory.len() {
                let mut s = 0.0;
                for c in h * dh..(h + 1) * dh {
                    s += q[i][c] * k[j][c];
                }
                scores.push(s / (dh as f64).sqrt());
            }
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for j in 0..memory.len() {
                weights[i][j] = (scores[j] - max).exp() / z;
                for c in h * dh..(h + 1) * dh {
                    concat[i][c] += weights[i][j] * v[j][c];
                }
            }
        }
        all_weights.push(weights);
    }
    (affine(&concat, w[3], b[3]), all_weights)
}

/// Overwrites `prefix.{query,key,value,out}` with seeded random values and returns them.
pub fn set_attention_params(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    seed: u64,
) -> ([Mat; 4], [Vec<f64>; 4]) {
    let names = ["query", "key", "value", "out"];
    let ws: [Mat; 4] = std::array::from_fn(|i| random_mat(d, d, seed + i as u64));
    let bs: [Vec<f64>; 4] =
        std::array::from_fn(|i| random_mat(1, d, seed + 10 + i as u64).remove(0));
    for i in 0..4 {
        store
            .set(
                &format!("{prefix}.{}.weight", names[i]),
                &Tensor::from_rows(&ws[i]).unwrap(),
            )
            .unwrap();
        store
            .set(
                &format!("{prefix}.{}.bias", names[i]),
                &Tensor::row(bs[i].clone()),
            )
            .unwrap();
    }
    (ws, bs)
}

/// Reads a stored parameter back as rows.
pub fn param_rows(store: &ParamStore, name: &str) -> Mat {
    store.by_name(name).unwrap().tensor.to_rows()
}

pub fn param_row(store: &ParamStore, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap().tensor.data().to_vec()
}

/// A `[width, in, out]` conv weight as nested taps.
pub fn conv_taps(store: &ParamStore, name: &str) -> Vec<Mat> {
    let t = &store.by_name(name).unwrap().tensor;
    let (width, cin, cout) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    (0..width)
        .map(|k| {
            (0..cin)
                .map(|c| {
                    (0..cout)
                        .map(|o| t.data()[(k * cin + c) * cout + o])
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn assert_close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) {
    assert_eq!(a.len(), b.len(), "row count");
    for (ra, rb) in a.iter().zip(b) {
        assert_eq!(ra.len(), rb.len(), "column count");
        for (x, y) in ra.iter().zip(rb) {
            assert!((x - y).abs() <= tol, "{x} vs {y} (tol {tol})");
        }
    }
}
