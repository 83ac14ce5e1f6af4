//! Corpus manifests and the synthetic toy corpus.
//!
//! A manifest is a TSV file, one utterance per line:
//! `id  symbols  mel  [alignment|-]  [wav]`. Relative paths resolve against
//! the manifest's directory; `#` lines are comments.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoder::{TextSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::features::{
    hz_to_mel, mel_spectrogram, mel_to_hz, read_mel, read_wav, write_mel, write_wav,
    AnalysisConfig, MelSpectrogram, Waveform,
};
use crate::prosody::{frame_span, PhonemeAlignment};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub symbols: PathBuf,
    pub mel: PathBuf,
    pub alignment: Option<PathBuf>,
    /// Reference recording, used for prosody when present.
    pub wav: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

/// One loaded utterance.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    /// Whitespace-separated tokens as written in the symbol file.
    pub tokens: Vec<String>,
    pub text: TextSequence,
    pub mel: MelSpectrogram,
    pub alignment: Option<PhonemeAlignment>,
    pub wav: Option<Waveform>,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Input(format!("duplicate utterance id `{}`", e.id)));
            }
        }
        Ok(CorpusManifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &str| base.join(p);
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if !(3..=5).contains(&cols.len()) || cols.iter().take(3).any(|c| c.is_empty()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    detail: format!(
                        "expected `id<TAB>symbols<TAB>mel[<TAB>alignment[<TAB>wav]]`, got {line:?}"
                    ),
                });
            }
            let optional = |i: usize| {
                cols.get(i)
                    .filter(|c| !c.is_empty() && **c != "-")
                    .map(|c| resolve(c))
            };
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                symbols: resolve(cols[1]),
                mel: resolve(cols[2]),
                alignment: optional(3),
                wav: optional(4),
            });
        }
        Self::new(entries)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Self::parse(&text, path)?;
        for e in &manifest.entries {
            let files = [
                Some(&e.symbols),
                Some(&e.mel),
                e.alignment.as_ref(),
                e.wav.as_ref(),
            ];
            for f in files.into_iter().flatten() {
                if !f.is_file() {
                    return Err(Error::Input(format!(
                        "utterance `{}`: missing file {}",
                        e.id,
                        f.display()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    /// Writes paths relative to `dir` when they lie inside it.
    pub fn to_text(&self, dir: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
        let mut out = String::from("# id\tsymbols\tmel\talignment\twav\n");
        for e in &self.entries {
            let mut cols = vec![e.id.clone(), rel(&e.symbols), rel(&e.mel)];
            cols.push(e.alignment.as_deref().map_or("-".into(), rel));
            if let Some(w) = &e.wav {
                cols.push(rel(w));
            }
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dir = path.parent().unwrap_or(Path::new(""));
        fs::write(path, self.to_text(dir)).map_err(|e| Error::io(path, e))
    }

    /// Parses every referenced file.
    pub fn load_utterances(&self, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
        self.entries
            .iter()
            .map(|e| {
                let raw =
                    fs::read_to_string(&e.symbols).map_err(|err| Error::io(&e.symbols, err))?;
                let tokens: Vec<String> = raw.split_whitespace().map(str::to_string).collect();
                if tokens.is_empty() {
                    return Err(Error::Input(format!(
                        "utterance `{}`: empty symbol file",
                        e.id
                    )));
                }
                let text = vocab.parse_sequence(&raw)?;
                let mel = read_mel(&e.mel)?;
                let alignment = e
                    .alignment
                    .as_ref()
                    .map(PhonemeAlignment::load)
                    .transpose()?;
                if let Some(a) = &alignment {
                    a.check_bounds(mel.num_frames())?;
                }
                let wav = e.wav.as_ref().map(read_wav).transpose()?;
                Ok(Utterance {
                    id: e.id.clone(),
                    tokens,
                    text,
                    mel,
                    alignment,
                    wav,
                })
            })
            .collect()
    }
}

/// Default manifest and vocabulary beside each other in a corpus directory.
pub fn load_corpus(
    manifest_path: impl AsRef<Path>,
    vocab_path: Option<&Path>,
) -> Result<(Vocabulary, Vec<Utterance>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = CorpusManifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Input(format!(
            "{}: manifest lists no utterances",
            manifest_path.display()
        )));
    }
    let vocab_path = match vocab_path {
        Some(p) => p.to_path_buf(),
        None => manifest_path
            .parent()
            .unwrap_or(Path::new(""))
            .join(VOCAB_FILE),
    };
    let vocab = Vocabulary::load(&vocab_path)?;
    let utterances = manifest.load_utterances(&vocab)?;
    Ok((vocab, utterances))
}

// ── toy corpus ───────────────────────────────────────────────────────

pub const TOY_SAMPLE_RATE: u32 = 16000;
pub const TOY_SYMBOLS: [&str; 12] = ["a", "e", "i", "o", "u", "m", "n", "l", "r", "s", "f", "k"];
pub const TOY_MIN_LENGTH: usize = 5;
pub const TOY_MAX_LENGTH: usize = 20;

/// Fixed acoustic identity of one toy symbol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToySymbol {
    pub voiced: bool,
    pub f0: f64,
    pub amplitude: f64,
    /// Centre of the symbol's spectral band, Hz.
    pub band_hz: f64,
    /// Typical duration in frames; each occurrence adds 0 or 1.
    pub base_frames: usize,
}

pub fn toy_symbol(index: usize) -> ToySymbol {
    let n = TOY_SYMBOLS.len();
    // bands spread evenly on the mel scale, visited in a scrambled order so
    // neighbouring ids sound different
    let slot = (index * 5) % n;
    let (lo, hi) = (hz_to_mel(300.0), hz_to_mel(4500.0));
    let band_hz = mel_to_hz(lo + (hi - lo) * slot as f64 / (n - 1) as f64);
    ToySymbol {
        voiced: index < 9,
        f0: 110.0 + 12.0 * index as f64,
        amplitude: 0.2 + 0.06 * (index % 4) as f64,
        band_hz,
        base_frames: 2 + index % 3,
    }
}

#[derive(Clone, Debug)]
pub struct ToyUtterance {
    pub id: String,
    pub symbols: Vec<usize>,
    pub durations: Vec<usize>,
    pub wav: Waveform,
    pub mel: MelSpectrogram,
    pub alignment: PhonemeAlignment,
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub vocab: Vocabulary,
    pub utterances: Vec<ToyUtterance>,
}

impl ToyCorpus {
    pub fn to_utterances(&self) -> Result<Vec<Utterance>> {
        self.utterances
            .iter()
            .map(|u| {
                let tokens: Vec<String> = u
                    .symbols
                    .iter()
                    .map(|&s| TOY_SYMBOLS[s].to_string())
                    .collect();
                Ok(Utterance {
                    id: u.id.clone(),
                    text: TextSequence::from_ids(&u.symbols, self.vocab.len())?,
                    tokens,
                    mel: u.mel.clone(),
                    alignment: Some(u.alignment.clone()),
                    wav: Some(u.wav.clone()),
                })
            })
            .collect()
    }

    /// Writes symbol, mel, alignment and wav files, the vocabulary and the
    /// manifest under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CorpusManifest> {
        let dir = dir.as_ref();
        for sub in ["text", "mel", "lab", "wav"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        self.vocab.save(dir.join(VOCAB_FILE))?;
        let mut entries = Vec::with_capacity(self.utterances.len());
        for u in &self.utterances {
            let entry = ManifestEntry {
                id: u.id.clone(),
                symbols: dir.join("text").join(format!("{}.txt", u.id)),
                mel: dir.join("mel").join(format!("{}.mel", u.id)),
                alignment: Some(dir.join("lab").join(format!("{}.lab", u.id))),
                wav: Some(dir.join("wav").join(format!("{}.wav", u.id))),
            };
            let text: Vec<&str> = u.symbols.iter().map(|&s| TOY_SYMBOLS[s]).collect();
            let text = text.join(" ") + "\n";
            fs::write(&entry.symbols, text).map_err(|e| Error::io(&entry.symbols, e))?;
            write_mel(&entry.mel, &u.mel)?;
            u.alignment.save(entry.alignment.as_ref().unwrap())?;
            write_wav(entry.wav.as_ref().unwrap(), &u.wav)?;
            entries.push(entry);
        }
        let manifest = CorpusManifest::new(entries)?;
        manifest.save(dir.join(MANIFEST_FILE))?;
        Ok(manifest)
    }
}

/// Renders one utterance. Every symbol contributes a band of energy at its
/// own frequency, voiced symbols as harmonics of a pitch that is scaled by
/// a sentence-level factor (the mean symbol id) and falls slowly across the
/// utterance; unvoiced symbols as resonant noise.
fn render(
    symbols: &[usize],
    durations: &[usize],
    grid: &AnalysisConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    let sr = grid.sample_rate as f64;
    let frames: usize = durations.iter().sum();
    let len = (frames - 1) * grid.hop_length() + grid.win_length();
    let mean_id = symbols.iter().sum::<usize>() as f64 / symbols.len() as f64;
    let sentence = 0.85 + 0.3 * mean_id / (TOY_SYMBOLS.len() - 1) as f64;
    let mut samples = vec![0.0; len];
    let mut phase = 0.0;
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut start_frame = 0;
    for (p, (&s, &d)) in symbols.iter().zip(durations).enumerate() {
        let sym = toy_symbol(s);
        let (lo, hi) = frame_span(start_frame, start_frame + d, frames, grid, len);
        start_frame += d;
        let bandwidth = 0.25 * sym.band_hz + 150.0;
        if sym.voiced {
            let f0 = sym.f0 * sentence * (1.05 - 0.1 * p as f64 / symbols.len() as f64);
            let harmonics: Vec<f64> = (1..)
                .map(|h| h as f64 * f0)
                .take_while(|&f| f < 0.45 * sr)
                .map(|f| (-0.5 * ((f - sym.band_hz) / bandwidth).powi(2)).exp() + 0.05)
                .collect();
            let norm: f64 = harmonics.iter().sum();
            for x in &mut samples[lo..hi] {
                phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
                let v: f64 = harmonics
                    .iter()
                    .enumerate()
                    .map(|(h, a)| a * ((h + 1) as f64 * phase).sin())
                    .sum();
                *x = sym.amplitude * v / norm * 2.0;
            }
        } else {
            // two-pole resonator with unit peak gain
            let r = (-PI * bandwidth / sr).exp();
            let theta = 2.0 * PI * sym.band_hz / sr;
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
            for x in &mut samples[lo..hi] {
                let e: f64 = rng.sample(StandardNormal);
                let y = gain * e + a1 * y1 + a2 * y2;
                y2 = y1;
                y1 = y;
                *x = (sym.amplitude * y).clamp(-1.0, 1.0);
            }
        }
    }
    Waveform::new(samples, grid.sample_rate)
}

/// Random symbol strings (5–20 symbols) rendered to audio with exactly
/// known phoneme boundaries. The same seed always yields the same corpus.
pub fn generate_toy_corpus(num_utterances: usize, seed: u64) -> Result<ToyCorpus> {
    if num_utterances == 0 {
        return Err(Error::Config(
            "toy corpus needs at least one utterance".into(),
        ));
    }
    let vocab = Vocabulary::new(TOY_SYMBOLS)?;
    let grid = AnalysisConfig::new(TOY_SAMPLE_RATE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut utterances = Vec::with_capacity(num_utterances);
    for i in 0..num_utterances {
        let n = rng.random_range(TOY_MIN_LENGTH..=TOY_MAX_LENGTH);
        let symbols: Vec<usize> = (0..n)
            .map(|_| rng.random_range(0..TOY_SYMBOLS.len()))
            .collect();
        let durations: Vec<usize> = symbols
            .iter()
            .map(|&s| toy_symbol(s).base_frames + rng.random_range(0..=1))
            .collect();
        let wav = render(&symbols, &durations, &grid, &mut rng)?;
        let mel = mel_spectrogram(&wav, &grid)?;
        let labels: Vec<&str> = symbols.iter().map(|&s| TOY_SYMBOLS[s]).collect();
        let alignment = PhonemeAlignment::from_durations(&labels, &durations)?;
        alignment.check_bounds(mel.num_frames())?;
        utterances.push(ToyUtterance {
            id: format!("toy{i:04}"),
            symbols,
            durations,
            wav,
            mel,
            alignment,
        });
    }
    Ok(ToyCorpus { vocab, utterances })
}
