//! The recognizer alphabet: lowercase letters, space, apostrophe, plus a
//! reserved CTC blank as the last class id.

use thiserror::Error;

/// Symbols the recognizer can emit. Label ids are `0..=27` for the 28
/// transcript symbols; the blank id is `28` and never appears in transcripts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    symbols: Vec<char>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CharsetError {
    #[error("character {0:?} is not in the charset")]
    UnknownChar(char),
    #[error("label id {0} is out of range (blank is not a transcript symbol)")]
    InvalidLabel(u32),
}

impl Default for Charset {
    fn default() -> Self {
        let mut symbols: Vec<char> = ('a'..='z').collect();
        symbols.push(' ');
        symbols.push('\'');
        Charset { symbols }
    }
}

impl Charset {
    /// Number of classes including the blank.
    pub fn class_count(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Number of transcript symbols (excluding blank).
    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    /// The reserved blank id, always the last class.
    pub fn blank_id(&self) -> u32 {
        self.symbols.len() as u32
    }

    pub fn space_id(&self) -> u32 {
        self.id_of(' ').expect("space is always in the charset")
    }

    pub fn id_of(&self, c: char) -> Option<u32> {
        self.symbols.iter().position(|&s| s == c).map(|i| i as u32)
    }

    pub fn char_of(&self, id: u32) -> Option<char> {
        self.symbols.get(id as usize).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.id_of(c).is_some()
    }

    /// Encode a transcript to label ids. Fails on the first character
    /// outside the charset, naming it.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>, CharsetError> {
        text.chars()
            .map(|c| self.id_of(c).ok_or(CharsetError::UnknownChar(c)))
            .collect()
    }

    /// Decode label ids back to text. Blank is not a transcript symbol and
    /// is rejected.
    pub fn decode(&self, ids: &[u32]) -> Result<String, CharsetError> {
        ids.iter()
            .map(|&id| self.char_of(id).ok_or(CharsetError::InvalidLabel(id)))
            .collect()
    }

    /// Validate that every character of `text` is in the charset.
    pub fn validate(&self, text: &str) -> Result<(), CharsetError> {
        match text.chars().find(|&c| !self.contains(c)) {
            Some(c) => Err(CharsetError::UnknownChar(c)),
            None => Ok(()),
        }
    }
}
