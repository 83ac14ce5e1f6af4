use super::{stft, AnalysisConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with peak 1, centres equally spaced on the mel scale
/// between 0 Hz and Nyquist. `weights` is `[num_mels][num_bins]`.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub weights: Vec<Vec<f64>>,
    /// Centre frequency of each filter in Hz.
    pub centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn num_mels(&self) -> usize {
        self.weights.len()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `spectrum · Wᵀ` for one frame.
    pub fn apply(&self, spectrum: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|row| row.iter().zip(spectrum).map(|(w, s)| w * s).sum())
            .collect()
    }
}

pub fn mel_filterbank(config: &AnalysisConfig) -> MelFilterbank {
    let (n_fft, m) = (config.n_fft(), config.num_mels);
    let sr = config.sample_rate as f64;
    let top = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..m + 2)
        .map(|i| mel_to_hz(top * i as f64 / (m + 1) as f64))
        .collect();
    let weights = (0..m)
        .map(|i| {
            let (lo, mid, hi) = (edges[i], edges[i + 1], edges[i + 2]);
            (0..config.num_bins())
                .map(|k| {
                    let f = k as f64 * sr / n_fft as f64;
                    ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0)
                })
                .collect()
        })
        .collect();
    MelFilterbank {
        weights,
        centers: edges[1..=m].to_vec(),
    }
}

/// Magnitude STFT → mel filterbank → `ln(max(x, floor))`.
pub fn mel_spectrogram(wav: &Waveform, config: &AnalysisConfig) -> Result<MelSpectrogram> {
    if wav.is_empty() {
        return Err(Error::Input("mel_spectrogram: empty waveform".into()));
    }
    if wav.sample_rate != config.sample_rate {
        return Err(Error::Input(format!(
            "waveform at {} Hz analysed with {} Hz settings",
            wav.sample_rate, config.sample_rate
        )));
    }
    config.validate()?;
    let fb = mel_filterbank(config);
    let spec = stft(&wav.samples, config);
    let mut data = Vec::with_capacity(spec.frames.len() * config.num_mels);
    for mags in spec.magnitudes() {
        data.extend(
            fb.apply(&mags)
                .into_iter()
                .map(|e| e.max(config.log_floor).ln()),
        );
    }
    let frames = Tensor::new(vec![spec.frames.len(), config.num_mels], data)?;
    MelSpectrogram::with_config(frames, config)
}
