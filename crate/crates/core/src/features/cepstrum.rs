use super::MelSpectrogram;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// `(10 / ln 10) · √2`, the usual dB scaling of cepstral distance.
pub const MCD_SCALE: f64 = 10.0 / std::f64::consts::LN_10 * std::f64::consts::SQRT_2;

/// Mel-cepstral coefficients `[T, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelCepstrum {
    pub coeffs: Tensor,
    pub includes_c0: bool,
}

impl MelCepstrum {
    pub fn new(coeffs: Tensor, includes_c0: bool) -> Result<Self> {
        if !coeffs.is_matrix() || coeffs.cols() < 2 {
            return Err(Error::shape(
                "mel_cepstrum",
                format!("need [T, C] with C >= 2, got {:?}", coeffs.shape()),
            ));
        }
        Ok(MelCepstrum {
            coeffs,
            includes_c0,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.coeffs.rows()
    }

    fn distance_coeffs(&self, t: usize) -> &[f64] {
        let row = self.coeffs.row_slice(t);
        if self.includes_c0 {
            &row[1..]
        } else {
            row
        }
    }
}

/// Orthonormal DCT-II of each log-mel frame, keeping the first `num_coeffs`
/// (c0 included).
pub fn mel_cepstrum(mel: &MelSpectrogram, num_coeffs: usize) -> Result<MelCepstrum> {
    let m = mel.num_mels();
    if num_coeffs < 2 || num_coeffs > m {
        return Err(Error::Config(format!(
            "cannot take {num_coeffs} cepstral coefficients from {m} bands"
        )));
    }
    let basis: Vec<Vec<f64>> = (0..num_coeffs)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / m as f64).sqrt()
            } else {
                (2.0 / m as f64).sqrt()
            };
            (0..m)
                .map(|n| {
                    scale * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / m as f64).cos()
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(mel.num_frames() * num_coeffs);
    for t in 0..mel.num_frames() {
        let row = mel.frames.row_slice(t);
        data.extend(
            basis
                .iter()
                .map(|b| b.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()),
        );
    }
    MelCepstrum::new(Tensor::new(vec![mel.num_frames(), num_coeffs], data)?, true)
}

/// Minimum-total-cost monotone alignment with unit steps (diagonal,
/// vertical, horizontal). Returns the aligned index pairs and the total cost.
pub fn dtw_path(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let (n, m) = (cost.len(), cost[0].len());
    let mut acc = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[i - 1][j - 1]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i][j] = best + cost[i][j];
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        // prefer the diagonal on ties
        let diag = if i > 0 && j > 0 {
            acc[i - 1][j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    (path, acc[n - 1][m - 1])
}

/// DTW-aligned mel-cepstral distortion in dB, c0 excluded.
pub fn mcd(reference: &MelCepstrum, hypothesis: &MelCepstrum) -> Result<f64> {
    if reference.num_frames() == 0 || hypothesis.num_frames() == 0 {
        return Err(Error::Input("mcd: empty cepstrum".into()));
    }
    if reference.coeffs.cols() != hypothesis.coeffs.cols()
        || reference.includes_c0 != hypothesis.includes_c0
    {
        return Err(Error::shape(
            "mcd",
            format!(
                "{:?} vs {:?}",
                reference.coeffs.shape(),
                hypothesis.coeffs.shape()
            ),
        ));
    }
    let cost: Vec<Vec<f64>> = (0..reference.num_frames())
        .map(|i| {
            let a = reference.distance_coeffs(i);
            (0..hypothesis.num_frames())
                .map(|j| {
                    let b = hypothesis.distance_coeffs(j);
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let (path, total) = dtw_path(&cost);
    Ok(MCD_SCALE * total / path.len() as f64)
}
