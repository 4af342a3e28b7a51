use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOS_LINE: &str = "<sos>";
pub const EOS_LINE: &str = "<eos>";

/// Character inventory. Characters take indices `0..n`, followed by the
/// start (`n`) and end (`n + 1`) sentinels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Vocabulary {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let chars: Vec<char> = chars.into_iter().collect();
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if c == '\n' || c == '\r' {
                return Err(Error::config("vocabulary characters cannot be line breaks"));
            }
            if index.insert(c, i).is_some() {
                return Err(Error::config(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(Self { chars, index })
    }

    /// Sorted distinct characters of `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut chars: Vec<char> = texts.into_iter().flat_map(str::chars).collect();
        chars.sort_unstable();
        chars.dedup();
        Self::new(chars)
    }

    /// Number of symbols including both sentinels.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn sos(&self) -> usize {
        self.chars.len()
    }

    pub fn eos(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn char_at(&self, i: usize) -> Option<char> {
        self.chars.get(i).copied()
    }

    /// Character indices of `s` followed by the end sentinel.
    pub fn encode(&self, s: &str) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(s.len() + 1);
        for (pos, c) in s.chars().enumerate() {
            let i = self
                .index_of(c)
                .ok_or_else(|| Error::data(format!("character {c:?} at position {pos} is not in the vocabulary")))?;
            out.push(i);
        }
        out.push(self.eos());
        Ok(out)
    }

    /// Inverse of [`Vocabulary::encode`]; stops at the first end sentinel.
    pub fn decode(&self, indices: &[usize]) -> Result<String> {
        let mut s = String::with_capacity(indices.len());
        for &i in indices {
            if i == self.eos() {
                break;
            }
            let c = self
                .char_at(i)
                .ok_or_else(|| Error::data(format!("index {i} is not a character of the vocabulary")))?;
            s.push(c);
        }
        Ok(s)
    }

    /// One line per symbol, sentinels first.
    pub fn to_file_string(&self) -> String {
        let mut s = format!("{SOS_LINE}\n{EOS_LINE}\n");
        for c in &self.chars {
            let _ = writeln!(s, "{c}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |line: usize, message: &str| Error::Parse { line, message: message.to_string() };
        if lines.next() != Some(SOS_LINE) {
            return Err(bad(1, "expected the <sos> sentinel line"));
        }
        if lines.next() != Some(EOS_LINE) {
            return Err(bad(2, "expected the <eos> sentinel line"));
        }
        let mut chars = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(bad(i + 3, "expected exactly one character")),
            }
        }
        Self::new(chars)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::from_file_string(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}

impl TryFrom<String> for Vocabulary {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s.chars())
    }
}

impl From<Vocabulary> for String {
    fn from(v: Vocabulary) -> String {
        v.chars.iter().collect()
    }
}

/// Character targets of a transcript, terminated by the end sentinel.
pub fn encode_transcript(v: &Vocabulary, s: &str) -> Result<Vec<usize>> {
    v.encode(s)
}
