use crate::features::{AnalysisConfig, Waveform};

#[derive(Clone, Debug, PartialEq)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum normalised autocorrelation at the chosen lag for a voiced frame.
    pub voicing_threshold: f64,
    /// Frames whose mean square is below this are unvoiced without analysis.
    pub silence_power: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            min_hz: 50.0,
            max_hz: 600.0,
            voicing_threshold: 0.6,
            silence_power: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchFrame {
    /// Hz; 0 when unvoiced.
    pub f0: f64,
    pub voiced: bool,
}

const UNVOICED: PitchFrame = PitchFrame {
    f0: 0.0,
    voiced: false,
};

/// Normalised autocorrelation pitch track on the analysis frame grid: frame
/// `t` correlates the window starting at `t·hop` with its lagged copy.
///
/// The first lag reaching 90% of the best peak is taken, which avoids
/// picking a multiple of the period, and refined by a parabola through its
/// neighbours.
pub fn estimate_f0(wav: &Waveform, grid: &AnalysisConfig, config: &PitchConfig) -> Vec<PitchFrame> {
    let x = &wav.samples;
    if x.is_empty() {
        return Vec::new();
    }
    let sr = wav.sample_rate as f64;
    let (win, hop) = (grid.win_length(), grid.hop_length());
    let min_lag = (sr / config.max_hz).floor().max(1.0) as usize;
    let max_lag = (sr / config.min_hz).ceil() as usize;
    let at = |i: usize| x.get(i).copied().unwrap_or(0.0);
    (0..grid.num_frames(x.len()))
        .map(|t| {
            let start = t * hop;
            let energy0: f64 = (0..win).map(|n| at(start + n).powi(2)).sum();
            if energy0 / (win as f64) < config.silence_power {
                return UNVOICED;
            }
            let mut lagged: f64 = (0..win).map(|n| at(start + n + min_lag - 1).powi(2)).sum();
            let mut r = vec![0.0; max_lag + 2];
            for lag in min_lag - 1..=max_lag + 1 {
                if lag >= min_lag {
                    let leaving = at(start + lag - 1);
                    let entering = at(start + lag - 1 + win);
                    lagged += entering * entering - leaving * leaving;
                }
                let cross: f64 = (0..win).map(|n| at(start + n) * at(start + n + lag)).sum();
                let denom = (energy0 * lagged.max(0.0)).sqrt();
                r[lag] = if denom > 0.0 { cross / denom } else { 0.0 };
            }
            let best = (min_lag..=max_lag)
                .map(|l| r[l])
                .fold(f64::NEG_INFINITY, f64::max);
            if best < config.voicing_threshold {
                return UNVOICED;
            }
            let lag = (min_lag..=max_lag)
                .find(|&l| r[l] >= 0.9 * best && r[l] >= r[l - 1] && r[l] >= r[l + 1])
                .unwrap_or_else(|| {
                    (min_lag..=max_lag)
                        .max_by(|&a, &b| r[a].total_cmp(&r[b]))
                        .unwrap()
                });
            let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
            let curve = a - 2.0 * b + c;
            let shift = if curve < 0.0 {
                (0.5 * (a - c) / curve).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            let f0 = sr / (lag as f64 + shift);
            if f0 < config.min_hz || f0 > config.max_hz {
                return UNVOICED;
            }
            PitchFrame { f0, voiced: true }
        })
        .collect()
}
