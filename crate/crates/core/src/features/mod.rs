//! Acoustic features: STFT, mel filterbank, mel-cepstrum, DTW-aligned MCD
//! and Griffin-Lim reconstruction, plus WAV and mel-matrix file formats.

mod cepstrum;
mod griffin_lim;
mod io;
mod mel;
mod stft;

pub use cepstrum::{dtw_path, mcd, mel_cepstrum, MelCepstrum, MCD_SCALE};
pub use griffin_lim::{griffin_lim, mel_spectral_convergence, GriffinLimOutput};
pub use io::{mel_from_bytes, mel_to_bytes, read_mel, read_wav, write_mel, write_wav};
pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, MelFilterbank};
pub use stft::{hann_window, istft, stft, Stft};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const NUM_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-5;
pub const SUPPORTED_SAMPLE_RATES: [u32; 2] = [22050, 16000];

/// Mono samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if !SUPPORTED_SAMPLE_RATES.contains(&sample_rate) {
            return Err(Error::Input(format!(
                "sample rate {sample_rate} Hz not supported (expected 22050 or 16000)"
            )));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { op: "waveform" });
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Short-time analysis settings. Window and hop are rounded to whole samples;
/// the FFT size is the next power of two at or above the window.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub num_mels: usize,
    pub log_floor: f64,
}

impl AnalysisConfig {
    /// 50 ms Hann window, 12.5 ms hop, 80 bands, floor 1e-5.
    pub fn new(sample_rate: u32) -> Self {
        AnalysisConfig {
            sample_rate,
            frame_length_ms: 50.0,
            frame_shift_ms: 12.5,
            num_mels: NUM_MELS,
            log_floor: LOG_FLOOR,
        }
    }

    /// Settings that produced `mel`.
    pub fn for_mel(mel: &MelSpectrogram) -> Self {
        AnalysisConfig {
            sample_rate: mel.sample_rate,
            frame_length_ms: mel.frame_length_ms,
            frame_shift_ms: mel.frame_shift_ms,
            num_mels: mel.num_mels(),
            log_floor: LOG_FLOOR,
        }
    }

    pub fn win_length(&self) -> usize {
        (self.sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn hop_length(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.win_length().next_power_of_two()
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft() / 2 + 1
    }

    /// `1 + ⌊(N − window) / hop⌋`; a signal shorter than one window still yields one frame.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        let win = self.win_length();
        if num_samples <= win {
            1
        } else {
            1 + (num_samples - win) / self.hop_length()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.win_length() == 0 || self.hop_length() == 0 {
            return Err(Error::Config(
                "analysis window and hop must be at least one sample".into(),
            ));
        }
        if self.num_mels == 0 || self.log_floor <= 0.0 {
            return Err(Error::Config(
                "need at least one mel band and a positive log floor".into(),
            ));
        }
        Ok(())
    }
}

/// Log-mel frames `[T, num_mels]` with the analysis settings that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
    pub sample_rate: u32,
}

impl MelSpectrogram {
    pub fn new(
        frames: Tensor,
        frame_shift_ms: f64,
        frame_length_ms: f64,
        sample_rate: u32,
    ) -> Result<Self> {
        if !frames.is_matrix() {
            return Err(Error::shape(
                "mel_spectrogram",
                format!("frames {:?}", frames.shape()),
            ));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite {
                op: "mel_spectrogram",
            });
        }
        if frame_shift_ms <= 0.0 || frame_length_ms <= 0.0 || sample_rate == 0 {
            return Err(Error::Input("mel metadata must be positive".into()));
        }
        Ok(MelSpectrogram {
            frames,
            frame_shift_ms,
            frame_length_ms,
            sample_rate,
        })
    }

    /// Wraps frames with the metadata of `config`. Shift and length are
    /// stored as the whole-sample hop and window they round to, so the
    /// metadata survives the mel file format unchanged.
    pub fn with_config(frames: Tensor, config: &AnalysisConfig) -> Result<Self> {
        let ms = |samples: usize| samples as f64 * 1000.0 / config.sample_rate as f64;
        Self::new(
            frames,
            ms(config.hop_length()),
            ms(config.win_length()),
            config.sample_rate,
        )
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn num_mels(&self) -> usize {
        self.frames.cols()
    }
}

#[cfg(test)]
mod tests;
