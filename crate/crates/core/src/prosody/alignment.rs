use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentEntry {
    pub label: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

impl AlignmentEntry {
    pub fn frames(&self) -> usize {
        self.end - self.start
    }
}

/// Ordered, non-overlapping phoneme spans in frame units.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PhonemeAlignment {
    pub entries: Vec<AlignmentEntry>,
}

impl PhonemeAlignment {
    pub fn new(entries: Vec<AlignmentEntry>) -> Result<Self> {
        let mut prev_end = 0;
        for (i, e) in entries.iter().enumerate() {
            if e.end <= e.start {
                return Err(Error::Input(format!(
                    "alignment entry {i} ({}) has end {} <= start {}",
                    e.label, e.end, e.start
                )));
            }
            if e.start < prev_end {
                return Err(Error::Input(format!(
                    "alignment entry {i} ({}) starts at {} before the previous end {prev_end}",
                    e.label, e.start
                )));
            }
            prev_end = e.end;
        }
        Ok(PhonemeAlignment { entries })
    }

    /// Consecutive spans with the given frame counts, starting at frame 0.
    pub fn from_durations<S: AsRef<str>>(labels: &[S], durations: &[usize]) -> Result<Self> {
        if labels.len() != durations.len() {
            return Err(Error::Input(format!(
                "{} labels but {} durations",
                labels.len(),
                durations.len()
            )));
        }
        let mut start = 0;
        let entries = labels
            .iter()
            .zip(durations)
            .map(|(l, &d)| {
                let e = AlignmentEntry {
                    label: l.as_ref().to_string(),
                    start,
                    end: start + d,
                };
                start += d;
                e
            })
            .collect();
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn end_frame(&self) -> usize {
        self.entries.last().map_or(0, |e| e.end)
    }

    pub fn check_bounds(&self, num_frames: usize) -> Result<()> {
        match self.entries.iter().find(|e| e.end > num_frames) {
            Some(e) => Err(Error::Input(format!(
                "alignment entry {} ends at frame {} beyond the utterance's {num_frames} frames",
                e.label, e.end
            ))),
            None => Ok(()),
        }
    }

    /// One `label<TAB>start<TAB>end` line per phoneme.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |detail: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                detail,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let frame = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| err(format!("invalid frame index {s:?}")))
            };
            entries.push(AlignmentEntry {
                label: fields[0].to_string(),
                start: frame(fields[1])?,
                end: frame(fields[2])?,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}", e.label, e.start, e.end);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
