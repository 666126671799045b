//! Symbol inventory shared by the generator, the models, and the decoder.
//!
//! Class index 0 is reserved for the CTC blank; real symbols occupy 1..=N in
//! the order given at construction, so a charset file fixes the output layer
//! layout.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CharsetError {
    #[error("charset is empty")]
    Empty,
    #[error("duplicate symbol {0:?}")]
    DuplicateSymbol(char),
    #[error("symbol {0:?} at position {1} is not in the charset")]
    UnknownSymbol(char, usize),
    #[error("label index {0} is out of range (blank or beyond last class)")]
    InvalidLabel(usize),
    #[error("charset file line {0:?} holds more than one symbol")]
    MultiCharLine(String),
    #[error("failed to read charset file: {0}")]
    Io(#[from] std::io::Error),
}

/// An ordered symbol set with the CTC blank at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Charset {
    /// Build from symbols in order: the i-th symbol gets label i+1.
    pub fn new<I: IntoIterator<Item = char>>(symbols: I) -> Result<Charset, CharsetError> {
        let mut list = Vec::new();
        let mut index = HashMap::new();
        for c in symbols {
            if index.insert(c, list.len() + 1).is_some() {
                return Err(CharsetError::DuplicateSymbol(c));
            }
            list.push(c);
        }
        if list.is_empty() {
            return Err(CharsetError::Empty);
        }
        Ok(Charset { symbols: list, index })
    }

    pub fn from_str_symbols(s: &str) -> Result<Charset, CharsetError> {
        Charset::new(s.chars())
    }

    /// Load from a text file with one symbol per line. The two-character
    /// escapes `\n`, `\t`, `\s`, `\\` denote newline, tab, space, and
    /// backslash so that whitespace symbols survive the line-based format.
    pub fn load(path: &Path) -> Result<Charset, CharsetError> {
        let text = fs::read_to_string(path)?;
        let mut symbols = Vec::new();
        for line in text.lines() {
            let c = match line {
                "" => continue,
                r"\n" => '\n',
                r"\t" => '\t',
                r"\\" => '\\',
                r"\s" => ' ',
                other => {
                    let mut chars = other.chars();
                    let first = chars.next().expect("non-empty line");
                    if chars.next().is_some() {
                        return Err(CharsetError::MultiCharLine(other.to_owned()));
                    }
                    first
                }
            };
            symbols.push(c);
        }
        Charset::new(symbols)
    }

    /// Save in the format accepted by [`Charset::load`].
    pub fn save(&self, path: &Path) -> Result<(), CharsetError> {
        let mut text = String::new();
        for &c in &self.symbols {
            match c {
                '\n' => text.push_str("\\n\n"),
                '\t' => text.push_str("\\t\n"),
                '\\' => text.push_str("\\\\\n"),
                ' ' => text.push_str("\\s\n"),
                other => {
                    text.push(other);
                    text.push('\n');
                }
            }
        }
        fs::write(path, text)?;
        Ok(())
    }

    /// Number of model output classes: symbols plus the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub const BLANK: usize = 0;

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Class index of a symbol (1-based, 0 is the blank).
    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Symbol for a non-blank class index.
    pub fn symbol_at(&self, index: usize) -> Result<char, CharsetError> {
        if index == Self::BLANK || index > self.symbols.len() {
            return Err(CharsetError::InvalidLabel(index));
        }
        Ok(self.symbols[index - 1])
    }

    /// Encode text into class indices. Fails on any symbol outside the set.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, CharsetError> {
        text.chars()
            .enumerate()
            .map(|(pos, c)| self.index_of(c).ok_or(CharsetError::UnknownSymbol(c, pos)))
            .collect()
    }

    /// Decode class indices back to text. Fails on blanks or out-of-range
    /// indices: decoding operates on already-collapsed label sequences.
    pub fn decode(&self, labels: &[usize]) -> Result<String, CharsetError> {
        labels.iter().map(|&i| self.symbol_at(i)).collect()
    }

    /// Stable fingerprint of the symbol inventory (order included), used to
    /// pair checkpoints with the charset they were trained on.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for &c in &self.symbols {
            hasher.update((c as u32).to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let cs = Charset::from_str_symbols("abc ").unwrap();
        let labels = cs.encode("cab a").unwrap();
        assert_eq!(cs.decode(&labels).unwrap(), "cab a");
        assert!(labels.iter().all(|&l| l != Charset::BLANK));
    }

    #[test]
    fn labels_follow_input_order() {
        let cs = Charset::from_str_symbols("ba").unwrap();
        assert_eq!(cs.index_of('b'), Some(1));
        assert_eq!(cs.index_of('a'), Some(2));
        assert_eq!(cs.num_classes(), 3);
    }

    #[test]
    fn duplicate_and_unknown_symbols_are_errors() {
        assert!(matches!(
            Charset::from_str_symbols("aa"),
            Err(CharsetError::DuplicateSymbol('a'))
        ));
        assert!(matches!(Charset::from_str_symbols(""), Err(CharsetError::Empty)));
        let cs = Charset::from_str_symbols("ab").unwrap();
        assert!(matches!(cs.encode("abc"), Err(CharsetError::UnknownSymbol('c', 2))));
        assert!(matches!(cs.decode(&[0]), Err(CharsetError::InvalidLabel(0))));
        assert!(matches!(cs.decode(&[3]), Err(CharsetError::InvalidLabel(3))));
    }

    #[test]
    fn file_round_trip_preserves_whitespace_symbols() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("charset.txt");
        let cs = Charset::new(['a', ' ', '\n', '\\', '.']).unwrap();
        cs.save(&path).unwrap();
        let back = Charset::load(&path).unwrap();
        assert_eq!(back, cs);
    }

    #[test]
    fn fingerprint_tracks_content_and_order() {
        let a = Charset::from_str_symbols("abc").unwrap();
        let b = Charset::from_str_symbols("abd").unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
        assert_ne!(a.fingerprint(), Charset::from_str_symbols("cba").unwrap().fingerprint());
    }

    #[test]
    fn num_classes_counts_blank() {
        let cs = Charset::from_str_symbols("xyz").unwrap();
        assert_eq!(cs.num_classes(), 4);
        assert_eq!(cs.len(), 3);
    }
}
