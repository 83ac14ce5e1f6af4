use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::AnalysisConfig;

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// One-sided spectra, `frames[t][k]` for bins `0..=n_fft/2`.
#[derive(Clone, Debug)]
pub struct Stft {
    pub frames: Vec<Vec<Complex64>>,
}

impl Stft {
    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }
}

/// Frames start at multiples of the hop with no centring padding. Samples
/// past the end of the signal read as zero.
pub fn stft(samples: &[f64], config: &AnalysisConfig) -> Stft {
    let (win, hop, n_fft) = (config.win_length(), config.hop_length(), config.n_fft());
    let window = hann_window(win);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let frames = (0..config.num_frames(samples.len()))
        .map(|t| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
            let start = t * hop;
            for (n, w) in window.iter().enumerate() {
                if let Some(&x) = samples.get(start + n) {
                    buf[n].re = x * w;
                }
            }
            fft.process(&mut buf);
            buf.truncate(n_fft / 2 + 1);
            buf
        })
        .collect();
    Stft { frames }
}

/// Least-squares inverse: the signal whose windowed frames are closest to
/// the inverse transforms of `spec`, with the overlap normaliser floored at
/// 1e-3 of its steady-state value. Output length is `(T − 1)·hop + window`.
pub fn istft(spec: &Stft, config: &AnalysisConfig) -> Vec<f64> {
    let (win, hop, n_fft) = (config.win_length(), config.hop_length(), config.n_fft());
    let window = hann_window(win);
    let ifft = FftPlanner::new().plan_fft_inverse(n_fft);
    let len = spec.frames.len().saturating_sub(1) * hop + win;
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (t, frame) in spec.frames.iter().enumerate() {
        buf[..frame.len()].copy_from_slice(frame);
        for k in 1..n_fft - frame.len() + 1 {
            buf[n_fft - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for n in 0..win {
            out[start + n] += window[n] * buf[n].re / n_fft as f64;
            norm[start + n] += window[n] * window[n];
        }
    }
    // The first and last few samples are seen only through the window
    // tails; dividing by their near-zero overlap would amplify noise.
    let floor = 1e-3 * window.iter().map(|w| w * w).sum::<f64>() / hop as f64;
    for (o, w) in out.iter_mut().zip(&norm) {
        *o /= w.max(floor);
    }
    out
}
