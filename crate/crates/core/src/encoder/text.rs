use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered symbol inventory; a symbol's id is its line number in the vocabulary file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(symbols: impl IntoIterator<Item = S>) -> Result<Self> {
        let symbols: Vec<String> = symbols.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) || s.contains('+') {
                return Err(Error::Vocabulary(format!(
                    "symbol {id} `{s}` is empty or contains whitespace or `+`"
                )));
            }
            if index.insert(s.clone(), id).is_some() {
                return Err(Error::Vocabulary(format!("duplicate symbol `{s}`")));
            }
        }
        Ok(Vocabulary { symbols, index })
    }

    /// Reads a vocabulary file: one symbol per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim_end).filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.symbols.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Parses whitespace-separated tokens. A token may join several symbols
    /// with `+` (e.g. `a+T3+#PW`); their embeddings are summed at that position.
    pub fn parse_sequence(&self, text: &str) -> Result<TextSequence> {
        let mut positions = Vec::new();
        for (t, token) in text.split_whitespace().enumerate() {
            let ids = token
                .split('+')
                .map(|s| {
                    self.id(s).ok_or_else(|| {
                        Error::Vocabulary(format!("unknown symbol `{s}` at position {t}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            positions.push(ids);
        }
        TextSequence::new(positions, self.len())
    }

    pub fn render(&self, text: &TextSequence) -> String {
        text.positions()
            .iter()
            .map(|ids| {
                ids.iter()
                    .map(|&id| self.symbol(id).unwrap_or("?"))
                    .collect::<Vec<_>>()
                    .join("+")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Input symbols, one group of ids per position (phone, tone, segment and
/// prosodic-boundary tags of one position share a group).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextSequence {
    positions: Vec<Vec<usize>>,
}

impl TextSequence {
    pub fn new(positions: Vec<Vec<usize>>, vocab_size: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Input("text sequence is empty".into()));
        }
        for (t, ids) in positions.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::Input(format!("position {t} has no symbols")));
            }
            if let Some(id) = ids.iter().find(|&&id| id >= vocab_size) {
                return Err(Error::Vocabulary(format!(
                    "symbol id {id} at position {t} is outside the vocabulary of {vocab_size}"
                )));
            }
        }
        Ok(TextSequence { positions })
    }

    /// One symbol per position.
    pub fn from_ids(ids: &[usize], vocab_size: usize) -> Result<Self> {
        Self::new(ids.iter().map(|&id| vec![id]).collect(), vocab_size)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec<usize>] {
        &self.positions
    }

    pub fn max_id(&self) -> usize {
        self.positions.iter().flatten().copied().max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_number_is_id() {
        let v = Vocabulary::parse("sil\na1\nT3\n#PW\n").unwrap();
        assert_eq!(v.id("a1"), Some(1));
        assert_eq!(v.symbol(3), Some("#PW"));
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn joined_tokens_share_a_position() {
        let v = Vocabulary::parse("sil\na1\nT3\n#PW\n").unwrap();
        let s = v.parse_sequence("sil a1+T3+#PW sil").unwrap();
        assert_eq!(s.positions(), &[vec![0], vec![1, 2, 3], vec![0]]);
        assert_eq!(v.render(&s), "sil a1+T3+#PW sil");
    }

    #[test]
    fn unknown_symbol_names_position() {
        let v = Vocabulary::parse("a\nb\n").unwrap();
        let err = v.parse_sequence("a b c").unwrap_err();
        assert!(err.to_string().contains("position 2"), "{err}");
        assert!(v.parse_sequence("   ").is_err());
    }

    #[test]
    fn out_of_range_id_names_position() {
        let err = TextSequence::from_ids(&[0, 1, 7], 5).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)));
        assert!(err.to_string().contains("position 2"));
    }
}
