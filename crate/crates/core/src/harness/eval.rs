//! Synthesis and metric reports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::corpus::Utterance;
use super::model::Model;
use crate::decoder::Inference;
use crate::error::{Error, Result};
use crate::features::{
    griffin_lim, mcd, mel_cepstrum, write_mel, write_wav, AnalysisConfig, MelSpectrogram, Waveform,
};
use crate::numcore::Tensor;
use crate::prosody::{
    attribute_correlation, attribute_diversity, extract_prosody_attributes, AlignmentEntry,
    Attribute, CorrelationMode, PhonemeAlignment, PhonemeProsody, PitchConfig, ProsodyAttributes,
};

pub const MCD_TABLE: &str = "mcd.tsv";
pub const CORRELATION_TABLE: &str = "correlation.tsv";
pub const DIVERSITY_TABLE: &str = "diversity.tsv";
/// Mel-cepstral coefficients per frame, c0 included (MCD skips it).
pub const CEPSTRUM_ORDER: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Mcd,
    ProsodyCorr,
    Diversity,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Mcd, Metric::ProsodyCorr, Metric::Diversity];

    fn needs_prosody(self) -> bool {
        self != Metric::Mcd
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcd" => Ok(Metric::Mcd),
            "prosody_corr" => Ok(Metric::ProsodyCorr),
            "diversity" => Ok(Metric::Diversity),
            other => Err(Error::Config(format!(
                "unknown metric `{other}` (mcd, prosody_corr, diversity)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub correlation: CorrelationMode,
    pub griffin_lim_iterations: usize,
    pub seed: u64,
    /// Use each reference mel, alignment and recording as the system output.
    pub inject_references: bool,
    /// Row label of the MCD table.
    pub corpus_name: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: Metric::ALL.to_vec(),
            correlation: CorrelationMode::default(),
            griffin_lim_iterations: 32,
            seed: 0,
            inject_references: false,
            corpus_name: "toy".into(),
        }
    }
}

/// One system's output for one utterance.
#[derive(Clone, Debug)]
pub struct SystemOutput {
    pub mel: MelSpectrogram,
    /// Phoneme spans read off the attention; `None` when injected.
    pub durations: Option<Vec<usize>>,
    pub steps: usize,
    pub stopped: bool,
    /// Attention mixture means per decoder step.
    pub means: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct SystemScores {
    pub name: String,
    pub mcd: Option<f64>,
    /// Pearson coefficients for E, Dur., F0.
    pub correlation: Option<[f64; 3]>,
    /// Diversity for E, Dur., F0.
    pub diversity: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub corpus_name: String,
    pub systems: Vec<SystemScores>,
    /// Reference diversity, present when diversity was requested.
    pub ground_truth_diversity: Option<[f64; 3]>,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.3}")
}

impl EvalReport {
    pub fn mcd_table(&self) -> Option<String> {
        if self.systems.iter().any(|s| s.mcd.is_none()) {
            return None;
        }
        let mut out = String::from("Corpus");
        for s in &self.systems {
            write!(out, "\t{}", s.name).unwrap();
        }
        write!(out, "\n{}", self.corpus_name).unwrap();
        for s in &self.systems {
            write!(out, "\t{}", fmt_value(s.mcd.unwrap())).unwrap();
        }
        out.push('\n');
        Some(out)
    }

    fn attribute_table(
        &self,
        pick: impl Fn(&SystemScores) -> Option<[f64; 3]>,
        gt: Option<[f64; 3]>,
    ) -> Option<String> {
        let rows: Vec<[f64; 3]> = self.systems.iter().map(&pick).collect::<Option<_>>()?;
        let mut out = String::new();
        for s in &self.systems {
            write!(out, "\t{}", s.name).unwrap();
        }
        if gt.is_some() {
            out.push_str("\tGT");
        }
        out.push('\n');
        for (a, attr) in Attribute::ALL.iter().enumerate() {
            out.push_str(attr.heading());
            for r in &rows {
                write!(out, "\t{}", fmt_value(r[a])).unwrap();
            }
            if let Some(g) = gt {
                write!(out, "\t{}", fmt_value(g[a])).unwrap();
            }
            out.push('\n');
        }
        Some(out)
    }

    pub fn correlation_table(&self) -> Option<String> {
        self.attribute_table(|s| s.correlation, None)
    }

    pub fn diversity_table(&self) -> Option<String> {
        self.attribute_table(|s| s.diversity, Some(self.ground_truth_diversity?))
    }

    /// Writes whichever of the three tables were computed; returns their paths.
    pub fn write_tables(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, table) in [
            (MCD_TABLE, self.mcd_table()),
            (CORRELATION_TABLE, self.correlation_table()),
            (DIVERSITY_TABLE, self.diversity_table()),
        ] {
            if let Some(t) = table {
                let path = dir.join(name);
                fs::write(&path, t).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// Frames per input position from a free-running decoding: each step is
/// assigned to the arg-max of its attention, made monotone.
pub fn attention_durations(
    inference: &Inference,
    num_positions: usize,
    reduction: usize,
) -> Vec<usize> {
    let mut durations = vec![0; num_positions];
    let mut current = 0;
    let frames = inference.mel.rows();
    for (s, a) in inference.alignments.iter().enumerate() {
        let w = a.data();
        let best = (0..w.len().min(num_positions)).fold(0, |b, j| if w[j] > w[b] { j } else { b });
        current = current.max(best);
        let covered = reduction.min(frames.saturating_sub(s * reduction));
        durations[current] += covered;
    }
    durations
}

/// Decodes `utterance` with the analysis metadata of its reference mel.
pub fn synthesize_utterance(model: &Model, utterance: &Utterance) -> Result<SystemOutput> {
    let inference = model.synthesize(&utterance.text)?;
    let mel = mel_like(inference.mel.clone(), &utterance.mel)?;
    let durations = attention_durations(
        &inference,
        utterance.text.len(),
        model.config.decoder.reduction_factor,
    );
    Ok(SystemOutput {
        mel,
        durations: Some(durations),
        steps: inference.steps,
        stopped: inference.stopped,
        means: inference.means,
    })
}

/// DTW mel-cepstral distortion between two log-mel spectrograms.
pub fn mel_mcd(reference: &MelSpectrogram, hypothesis: &MelSpectrogram) -> Result<f64> {
    mcd(
        &mel_cepstrum(reference, CEPSTRUM_ORDER)?,
        &mel_cepstrum(hypothesis, CEPSTRUM_ORDER)?,
    )
}

fn vocode(mel: &MelSpectrogram, options: &EvalOptions, index: usize) -> Result<Waveform> {
    Ok(griffin_lim(
        mel,
        options.griffin_lim_iterations,
        options.seed.wrapping_add(index as u64),
    )?
    .waveform)
}

/// Attributes where positions with zero frames get zero energy, zero
/// duration and no F0.
fn attributes_with_durations(
    wav: &Waveform,
    labels: &[String],
    durations: &[usize],
    grid: &AnalysisConfig,
) -> Result<ProsodyAttributes> {
    let mut entries = Vec::new();
    let mut start = 0;
    for (label, &d) in labels.iter().zip(durations) {
        if d > 0 {
            entries.push(AlignmentEntry {
                label: label.clone(),
                start,
                end: start + d,
            });
        }
        start += d;
    }
    let present = extract_prosody_attributes(
        wav,
        &PhonemeAlignment::new(entries)?,
        grid,
        &PitchConfig::default(),
    )?;
    let mut found = present.phonemes.into_iter();
    let phonemes = labels
        .iter()
        .zip(durations)
        .map(|(label, &d)| {
            if d > 0 {
                found.next().expect("one attribute per non-empty span")
            } else {
                PhonemeProsody {
                    label: label.clone(),
                    relative_energy: 0.0,
                    duration: 0,
                    mean_f0: None,
                }
            }
        })
        .collect();
    Ok(ProsodyAttributes {
        phonemes,
        frame_shift_ms: present.frame_shift_ms,
    })
}

fn reference_attributes(
    u: &Utterance,
    options: &EvalOptions,
    index: usize,
) -> Result<ProsodyAttributes> {
    let alignment = u.alignment.as_ref().expect("checked before evaluation");
    let grid = AnalysisConfig::for_mel(&u.mel);
    let wav = match &u.wav {
        Some(w) => w.clone(),
        None => vocode(&u.mel, options, index)?,
    };
    extract_prosody_attributes(&wav, alignment, &grid, &PitchConfig::default())
}

fn system_attributes(
    u: &Utterance,
    out: &SystemOutput,
    options: &EvalOptions,
    index: usize,
) -> Result<ProsodyAttributes> {
    match &out.durations {
        None => reference_attributes(u, options, index),
        Some(durations) => {
            let alignment = u.alignment.as_ref().expect("checked before evaluation");
            if alignment.len() != u.tokens.len() {
                return Err(Error::Input(format!(
                    "utterance `{}`: {} alignment entries for {} input tokens",
                    u.id,
                    alignment.len(),
                    u.tokens.len()
                )));
            }
            let wav = vocode(&out.mel, options, index)?;
            let labels: Vec<String> = alignment.entries.iter().map(|e| e.label.clone()).collect();
            attributes_with_durations(&wav, &labels, durations, &AnalysisConfig::for_mel(&out.mel))
        }
    }
}

/// Maps `f` over `items` on all available cores, keeping order.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(usize, &T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let f = &f;
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, x)| f(c * chunk + i, x))
                        .collect::<Result<Vec<R>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Synthesizes every utterance with every system and scores the requested
/// metrics. Systems become table columns in the given order.
pub fn evaluate(
    systems: &[(&str, &Model)],
    utterances: &[Utterance],
    options: &EvalOptions,
) -> Result<EvalReport> {
    if options.metrics.is_empty() {
        return Err(Error::Config("no metrics requested".into()));
    }
    if systems.is_empty() || utterances.is_empty() {
        return Err(Error::Input(
            "evaluation needs at least one system and one utterance".into(),
        ));
    }
    let wants = |m: Metric| options.metrics.contains(&m);
    let prosody = options.metrics.iter().any(|m| m.needs_prosody());
    if prosody {
        let missing: Vec<&str> = utterances
            .iter()
            .filter(|u| u.alignment.is_none())
            .map(|u| u.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Input(format!(
                "prosody metrics need alignments; missing for: {}",
                missing.join(", ")
            )));
        }
    }
    for (_, model) in systems {
        for u in utterances {
            if u.mel.num_mels() != model.config.decoder.num_mels {
                return Err(Error::Input(format!(
                    "utterance `{}` has {} bands, model predicts {}",
                    u.id,
                    u.mel.num_mels(),
                    model.config.decoder.num_mels
                )));
            }
        }
    }
    let references = if prosody {
        Some(parallel_map(utterances, |i, u| {
            reference_attributes(u, options, i)
        })?)
    } else {
        None
    };

    let mut report = EvalReport {
        corpus_name: options.corpus_name.clone(),
        ..Default::default()
    };
    for (name, model) in systems {
        let outputs = parallel_map(utterances, |_, u| {
            if options.inject_references {
                Ok(SystemOutput {
                    mel: u.mel.clone(),
                    durations: None,
                    steps: 0,
                    stopped: true,
                    means: Vec::new(),
                })
            } else {
                synthesize_utterance(model, u)
            }
        })?;
        let mut scores = SystemScores {
            name: name.to_string(),
            ..Default::default()
        };
        if wants(Metric::Mcd) {
            let values = parallel_map(utterances, |i, u| mel_mcd(&u.mel, &outputs[i].mel))?;
            scores.mcd = Some(values.iter().sum::<f64>() / values.len() as f64);
        }
        if let Some(refs) = &references {
            let sys = parallel_map(utterances, |i, u| {
                system_attributes(u, &outputs[i], options, i)
            })?;
            if wants(Metric::ProsodyCorr) {
                let mut c = [0.0; 3];
                for (k, attr) in Attribute::ALL.iter().enumerate() {
                    c[k] = undefined_as_nan(
                        name,
                        attr,
                        attribute_correlation(refs, &sys, *attr, options.correlation),
                    )?;
                }
                scores.correlation = Some(c);
            }
            if wants(Metric::Diversity) {
                scores.diversity = Some(diversities(name, &sys)?);
            }
        }
        report.systems.push(scores);
    }
    if wants(Metric::Diversity) {
        report.ground_truth_diversity = Some(diversities("GT", references.as_ref().unwrap())?);
    }
    Ok(report)
}

/// A statistic with too few values (say, no voiced phoneme pairs) is
/// reported as NaN rather than failing the whole report.
fn undefined_as_nan(system: &str, attribute: &Attribute, value: Result<f64>) -> Result<f64> {
    match value {
        Err(e @ (Error::Input(_) | Error::UndefinedCorrelation(_))) => {
            tracing::warn!(system, attribute = attribute.heading(), "undefined: {e}");
            Ok(f64::NAN)
        }
        other => other,
    }
}

fn diversities(system: &str, utterances: &[ProsodyAttributes]) -> Result<[f64; 3]> {
    let mut d = [0.0; 3];
    for (k, attr) in Attribute::ALL.iter().enumerate() {
        d[k] = undefined_as_nan(system, attr, attribute_diversity(utterances, *attr))?;
    }
    Ok(d)
}

/// What [`synthesize_to_files`] wrote.
#[derive(Clone, Debug)]
pub struct SynthesisOutput {
    pub mel: MelSpectrogram,
    pub steps: usize,
    pub stopped: bool,
}

/// Synthesizes the symbols in `symbols_path` and writes the mel and,
/// optionally, a Griffin-Lim waveform. Nothing is written on error.
pub fn synthesize_to_files(
    model: &Model,
    symbols_path: &Path,
    mel_path: &Path,
    wav_path: Option<&Path>,
    griffin_lim_iterations: usize,
) -> Result<SynthesisOutput> {
    let raw = fs::read_to_string(symbols_path).map_err(|e| Error::io(symbols_path, e))?;
    if raw.split_whitespace().next().is_none() {
        return Err(Error::Input(format!(
            "{}: symbol file is empty",
            symbols_path.display()
        )));
    }
    let text = model.parse_text(&raw)?;
    let inference = model.synthesize(&text)?;
    let grid = AnalysisConfig {
        num_mels: model.config.decoder.num_mels,
        ..AnalysisConfig::new(model.config.sample_rate)
    };
    let mel = MelSpectrogram::with_config(inference.mel.clone(), &grid)?;
    let wav = wav_path
        .map(|_| griffin_lim(&mel, griffin_lim_iterations, 0))
        .transpose()?;
    write_mel(mel_path, &mel)?;
    if let (Some(path), Some(out)) = (wav_path, wav) {
        write_wav(path, &out.waveform)?;
    }
    Ok(SynthesisOutput {
        mel,
        steps: inference.steps,
        stopped: inference.stopped,
    })
}

/// Wraps raw frames with a reference's analysis metadata.
pub fn mel_like(frames: Tensor, reference: &MelSpectrogram) -> Result<MelSpectrogram> {
    MelSpectrogram::new(
        frames,
        reference.frame_shift_ms,
        reference.frame_length_ms,
        reference.sample_rate,
    )
}
