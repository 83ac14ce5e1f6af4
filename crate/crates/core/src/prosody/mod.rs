//! Phoneme-level prosody: relative energy, duration and mean F0, with the
//! correlation and diversity statistics computed over them.

mod alignment;
mod pitch;

use std::fmt;
use std::str::FromStr;

pub use alignment::{AlignmentEntry, PhonemeAlignment};
pub use pitch::{estimate_f0, PitchConfig, PitchFrame};

use crate::error::{Error, Result};
use crate::features::{AnalysisConfig, Waveform};

#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeProsody {
    pub label: String,
    /// Mean |x| in the phoneme over mean |x| in the utterance.
    pub relative_energy: f64,
    /// Frames.
    pub duration: usize,
    /// Mean of the voiced F0 estimates inside the phoneme, in Hz.
    pub mean_f0: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProsodyAttributes {
    pub phonemes: Vec<PhonemeProsody>,
    /// Frame shift used to convert durations to milliseconds.
    pub frame_shift_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Attribute {
    Energy,
    Duration,
    F0,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Energy, Attribute::Duration, Attribute::F0];

    /// Column heading used in the report tables.
    pub fn heading(self) -> &'static str {
        match self {
            Attribute::Energy => "E",
            Attribute::Duration => "Dur.",
            Attribute::F0 => "F0",
        }
    }
}

impl ProsodyAttributes {
    /// Per-phoneme values of one attribute; durations in milliseconds,
    /// unvoiced phonemes `None` for F0.
    pub fn values(&self, attribute: Attribute) -> Vec<Option<f64>> {
        self.phonemes
            .iter()
            .map(|p| match attribute {
                Attribute::Energy => Some(p.relative_energy),
                Attribute::Duration => Some(p.duration as f64 * self.frame_shift_ms),
                Attribute::F0 => p.mean_f0,
            })
            .collect()
    }
}

/// Sample span of frames `[start, end)`. Frame `t` is centred on sample
/// `t·hop + window/2`, so its share of the signal is the hop-wide strip
/// around that centre. The first span starts at sample 0 and the span ending
/// on the last frame runs to the end of the signal.
pub fn frame_span(
    start: usize,
    end: usize,
    num_frames: usize,
    grid: &AnalysisConfig,
    len: usize,
) -> (usize, usize) {
    let (hop, win) = (grid.hop_length(), grid.win_length());
    let offset = win.saturating_sub(hop) / 2;
    let edge = |frame: usize| {
        if frame == 0 {
            0
        } else {
            (frame * hop + offset).min(len)
        }
    };
    let hi = if end >= num_frames { len } else { edge(end) };
    (edge(start).min(hi), hi)
}

fn mean_magnitude(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.abs()).sum::<f64>() / samples.len() as f64
}

pub fn extract_prosody_attributes(
    wav: &Waveform,
    alignment: &PhonemeAlignment,
    grid: &AnalysisConfig,
    pitch: &PitchConfig,
) -> Result<ProsodyAttributes> {
    if wav.is_empty() {
        return Err(Error::Input("prosody: empty waveform".into()));
    }
    let num_frames = grid.num_frames(wav.len());
    alignment.check_bounds(num_frames)?;
    let (lo, hi) = frame_span(0, num_frames, num_frames, grid, wav.len());
    let utterance = mean_magnitude(&wav.samples[lo..hi]);
    if utterance == 0.0 {
        return Err(Error::Input(
            "prosody: relative energy undefined for a silent utterance".into(),
        ));
    }
    let track = estimate_f0(wav, grid, pitch);
    let phonemes = alignment
        .entries
        .iter()
        .map(|e| {
            let (lo, hi) = frame_span(e.start, e.end, num_frames, grid, wav.len());
            let voiced: Vec<f64> = track[e.start..e.end]
                .iter()
                .filter(|p| p.voiced)
                .map(|p| p.f0)
                .collect();
            PhonemeProsody {
                label: e.label.clone(),
                relative_energy: mean_magnitude(&wav.samples[lo..hi]) / utterance,
                duration: e.frames(),
                mean_f0: (!voiced.is_empty())
                    .then(|| voiced.iter().sum::<f64>() / voiced.len() as f64),
            }
        })
        .collect();
    Ok(ProsodyAttributes {
        phonemes,
        frame_shift_ms: grid.hop_length() as f64 * 1000.0 / grid.sample_rate as f64,
    })
}

/// Product-moment correlation, two-pass.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Input(format!(
            "pearson needs two equal-length sequences of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a sequence has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// How phoneme pairs from several utterances are combined into one coefficient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorrelationMode {
    /// One coefficient over all phonemes of all utterances.
    #[default]
    Pooled,
    /// Mean of per-utterance coefficients; undefined ones are skipped.
    PerUtterance,
}

impl FromStr for CorrelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(CorrelationMode::Pooled),
            "per-utterance" | "per_utterance" => Ok(CorrelationMode::PerUtterance),
            other => Err(Error::Config(format!(
                "unknown correlation mode {other:?} (pooled, per-utterance)"
            ))),
        }
    }
}

impl fmt::Display for CorrelationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationMode::Pooled => "pooled",
            CorrelationMode::PerUtterance => "per-utterance",
        })
    }
}

fn paired(
    reference: &ProsodyAttributes,
    system: &ProsodyAttributes,
    attribute: Attribute,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if reference.phonemes.len() != system.phonemes.len() {
        return Err(Error::Input(format!(
            "cannot pair {} reference phonemes with {} system phonemes",
            reference.phonemes.len(),
            system.phonemes.len()
        )));
    }
    // Unvoiced phonemes on either side drop out of F0 pairs.
    Ok(reference
        .values(attribute)
        .into_iter()
        .zip(system.values(attribute))
        .filter_map(|(a, b)| Some((a?, b?)))
        .unzip())
}

/// Correlation of one attribute between reference and system utterances,
/// paired phoneme by phoneme.
pub fn attribute_correlation(
    reference: &[ProsodyAttributes],
    system: &[ProsodyAttributes],
    attribute: Attribute,
    mode: CorrelationMode,
) -> Result<f64> {
    if reference.len() != system.len() || reference.is_empty() {
        return Err(Error::Input(format!(
            "{} reference vs {} system utterances",
            reference.len(),
            system.len()
        )));
    }
    match mode {
        CorrelationMode::Pooled => {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (r, s) in reference.iter().zip(system) {
                let (x, y) = paired(r, s, attribute)?;
                xs.extend(x);
                ys.extend(y);
            }
            pearson_correlation(&xs, &ys)
        }
        CorrelationMode::PerUtterance => {
            let mut coeffs = Vec::new();
            for (i, (r, s)) in reference.iter().zip(system).enumerate() {
                let (x, y) = paired(r, s, attribute)?;
                match pearson_correlation(&x, &y) {
                    Ok(c) => coeffs.push(c),
                    Err(e) => {
                        tracing::warn!(utterance = i, "skipping {}: {e}", attribute.heading())
                    }
                }
            }
            if coeffs.is_empty() {
                return Err(Error::UndefinedCorrelation(format!(
                    "no utterance has a defined {} correlation",
                    attribute.heading()
                )));
            }
            Ok(coeffs.iter().sum::<f64>() / coeffs.len() as f64)
        }
    }
}

/// Population standard deviation within each utterance, averaged over
/// utterances. Utterances with fewer than two values are skipped.
pub fn diversity_stddev(per_utterance: &[Vec<f64>]) -> Result<f64> {
    let mut stds = Vec::with_capacity(per_utterance.len());
    for (i, values) in per_utterance.iter().enumerate() {
        if values.len() < 2 {
            tracing::warn!(
                utterance = i,
                count = values.len(),
                "diversity: skipping utterance with < 2 values"
            );
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        stds.push((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt());
    }
    if stds.is_empty() {
        return Err(Error::Input(
            "diversity: no utterance has two or more values".into(),
        ));
    }
    Ok(stds.iter().sum::<f64>() / stds.len() as f64)
}

/// Diversity of one attribute over a set of utterances (unvoiced F0 omitted).
pub fn attribute_diversity(utterances: &[ProsodyAttributes], attribute: Attribute) -> Result<f64> {
    let lists: Vec<Vec<f64>> = utterances
        .iter()
        .map(|u| u.values(attribute).into_iter().flatten().collect())
        .collect();
    diversity_stddev(&lists)
}
