use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::{
    istft, mel_filterbank, mel_spectrogram, stft, AnalysisConfig, MelSpectrogram, Stft, Waveform,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GriffinLimOutput {
    pub waveform: Waveform,
    /// `‖|STFT(x)| − S‖ / ‖S‖` against the target linear magnitude `S`,
    /// measured after each iteration. Non-increasing.
    pub spectral_convergence: Vec<f64>,
}

fn linear_magnitudes(mel: &MelSpectrogram, config: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let fb = mel_filterbank(config);
    let w = DMatrix::from_fn(fb.num_mels(), fb.num_bins(), |i, j| fb.weights[i][j]);
    let pinv = w
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Input(format!("mel filterbank pseudo-inverse failed: {e}")))?;
    Ok((0..mel.num_frames())
        .map(|t| {
            let energies = nalgebra::DVector::from_iterator(
                fb.num_mels(),
                mel.frames.row_slice(t).iter().map(|v| v.exp()),
            );
            (&pinv * energies).iter().map(|v| v.max(0.0)).collect()
        })
        .collect())
}

fn convergence(estimate: &Stft, target: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (frame, mags) in estimate.frames.iter().zip(target) {
        for (c, s) in frame.iter().zip(mags) {
            num += (c.norm() - s).powi(2);
            den += s * s;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Reconstructs a waveform from log-mel frames. Linear magnitudes come from
/// the filterbank pseudo-inverse (negatives clipped); phases start from a
/// seeded uniform draw and are refined by alternating projections.
pub fn griffin_lim(mel: &MelSpectrogram, iterations: usize, seed: u64) -> Result<GriffinLimOutput> {
    if iterations == 0 {
        return Err(Error::Config(
            "griffin_lim needs at least one iteration".into(),
        ));
    }
    if mel.num_frames() == 0 {
        return Err(Error::Input("griffin_lim: empty spectrogram".into()));
    }
    let config = AnalysisConfig::for_mel(mel);
    config.validate()?;
    let target = linear_magnitudes(mel, &config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Stft {
        frames: target
            .iter()
            .map(|mags| {
                mags.iter()
                    .map(|&s| {
                        Complex64::from_polar(
                            s,
                            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                        )
                    })
                    .collect()
            })
            .collect(),
    };
    let mut samples = Vec::new();
    let mut spectral_convergence = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        samples = istft(&spec, &config);
        let analysed = stft(&samples, &config);
        spectral_convergence.push(convergence(&analysed, &target));
        spec.frames = analysed
            .frames
            .iter()
            .zip(&target)
            .map(|(frame, mags)| {
                frame
                    .iter()
                    .zip(mags)
                    .map(|(c, &s)| {
                        let n = c.norm();
                        if n > 0.0 {
                            c * (s / n)
                        } else {
                            Complex64::new(s, 0.0)
                        }
                    })
                    .collect()
            })
            .collect();
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(GriffinLimOutput {
        waveform: Waveform::new(samples, mel.sample_rate)?,
        spectral_convergence,
    })
}

/// Relative Frobenius error between the mel energies of `wav` and `target`.
pub fn mel_spectral_convergence(target: &MelSpectrogram, wav: &Waveform) -> Result<f64> {
    let config = AnalysisConfig::for_mel(target);
    let analysed = mel_spectrogram(wav, &config)?;
    let frames = analysed.num_frames().min(target.num_frames());
    let (mut num, mut den) = (0.0, 0.0);
    for t in 0..frames {
        for (a, b) in analysed
            .frames
            .row_slice(t)
            .iter()
            .zip(target.frames.row_slice(t))
        {
            num += (a.exp() - b.exp()).powi(2);
            den += b.exp().powi(2);
        }
    }
    Ok((num / den).sqrt())
}
