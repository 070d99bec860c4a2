//! Token vocabulary.
//!
//! Ids are laid out as:
//!
//! | ids            | tokens                                               |
//! |----------------|------------------------------------------------------|
//! | 0..=5          | `PAD`, `BOS`, `EOS`, `USER_EMBED`, `ITEM_EMBED`, `EXPLAIN_POS` |
//! | 6..262         | the 256 raw bytes, id = 6 + byte                     |
//! | 262..          | word pieces, in stored order                         |
//!
//! Text is first cut into chunks: a single space followed by a run of ASCII
//! alphanumerics, a bare run of ASCII alphanumerics, or any other single
//! byte. A chunk of two or more bytes that is a stored word piece becomes
//! that piece; every other chunk is spelled out as bytes. Decoding
//! concatenates token bytes, so `decode(encode(s)) == s` for every string.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const USER_EMBED: usize = 3;
pub const ITEM_EMBED: usize = 4;
pub const EXPLAIN_POS: usize = 5;
pub const NUM_SPECIAL: usize = 6;
pub const BYTE_OFFSET: usize = NUM_SPECIAL;
pub const PIECE_OFFSET: usize = BYTE_OFFSET + 256;

const SPECIAL_NAMES: [&str; NUM_SPECIAL] = [
    "<PAD>",
    "<BOS>",
    "<EOS>",
    "<USER_EMBED>",
    "<ITEM_EMBED>",
    "<EXPLAIN_POS>",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredVocabulary", into = "StoredVocabulary")]
pub struct Vocabulary {
    pieces: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoredVocabulary {
    pieces: Vec<String>,
}

impl From<StoredVocabulary> for Vocabulary {
    fn from(s: StoredVocabulary) -> Self {
        Vocabulary::from_pieces(s.pieces)
    }
}

impl From<Vocabulary> for StoredVocabulary {
    fn from(v: Vocabulary) -> Self {
        StoredVocabulary { pieces: v.pieces }
    }
}

/// Byte ranges of the chunks of `text`. Chunks of two or more bytes are
/// always ASCII.
pub fn chunk_ranges(text: &str) -> Vec<Range<usize>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let start = i;
        if b[i] == b' ' && i + 1 < b.len() && b[i + 1].is_ascii_alphanumeric() {
            i += 1;
        }
        if b[i].is_ascii_alphanumeric() {
            while i < b.len() && b[i].is_ascii_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        out.push(start..i);
    }
    out
}

impl Vocabulary {
    /// Vocabulary with bytes only.
    pub fn bytes_only() -> Self {
        Self::from_pieces(Vec::new())
    }

    pub fn from_pieces(pieces: Vec<String>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(k, p)| (p.clone(), PIECE_OFFSET + k))
            .collect();
        Self { pieces, index }
    }

    /// Word pieces are chunks of at least two bytes seen at least
    /// `min_count` times, most frequent first (ties by byte order), at most
    /// `max_pieces` of them.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_pieces: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for r in chunk_ranges(text) {
                if r.len() >= 2 {
                    *counts.entry(&text[r]).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_pieces);
        Self::from_pieces(ranked.into_iter().map(|(p, _)| p.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        PIECE_OFFSET + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIAL
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        let bytes = text.as_bytes();
        for r in chunk_ranges(text) {
            let piece = if r.len() >= 2 { self.index.get(&text[r.clone()]) } else { None };
            match piece {
                Some(&id) => out.push(id),
                None => out.extend(bytes[r].iter().map(|&b| BYTE_OFFSET + b as usize)),
            }
        }
        out
    }

    /// Raw bytes of one token; special tokens contribute nothing.
    pub fn token_bytes(&self, id: usize) -> Result<Vec<u8>> {
        if id < NUM_SPECIAL {
            Ok(Vec::new())
        } else if id < PIECE_OFFSET {
            Ok(vec![(id - BYTE_OFFSET) as u8])
        } else {
            self.pieces
                .get(id - PIECE_OFFSET)
                .map(|p| p.as_bytes().to_vec())
                .ok_or_else(|| Error::InvalidArgument(format!("token id {id} outside vocabulary of {}", self.len())))
        }
    }

    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            bytes.extend(self.token_bytes(id)?);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Human-readable rendering with special tokens spelled by name.
    pub fn render(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        let mut run: Vec<u8> = Vec::new();
        for &id in ids {
            if id < NUM_SPECIAL {
                out.push_str(&String::from_utf8_lossy(&run));
                run.clear();
                out.push_str(SPECIAL_NAMES[id]);
            } else {
                run.extend(self.token_bytes(id)?);
            }
        }
        out.push_str(&String::from_utf8_lossy(&run));
        Ok(out)
    }

    pub fn special_name(id: usize) -> Option<&'static str> {
        SPECIAL_NAMES.get(id).copied()
    }

    pub fn special_id(name: &str) -> Option<usize> {
        SPECIAL_NAMES.iter().position(|&n| n == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunking_rule() {
        let split = |s: &'static str| chunk_ranges(s).into_iter().map(|r| &s[r]).collect::<Vec<_>>();
        assert_eq!(split("the user, Bob42 x"), vec!["the", " user", ",", " Bob42", " x"]);
        assert_eq!(split("  a"), vec![" ", " a"]);
        assert!(split("").is_empty());
    }

    #[test]
    fn specials_are_stable() {
        assert_eq!((PAD, BOS, EOS), (0, 1, 2));
        assert_eq!((USER_EMBED, ITEM_EMBED, EXPLAIN_POS), (3, 4, 5));
        assert_eq!(Vocabulary::special_id("<EXPLAIN_POS>"), Some(EXPLAIN_POS));
        assert_eq!(Vocabulary::bytes_only().len(), 262);
    }

    #[test]
    fn word_pieces_compress_and_round_trip() {
        let corpus = ["the user values gritty plot", "the user values brisk pacing"];
        let v = Vocabulary::build(corpus.iter().copied(), 2, 100);
        assert_eq!(v.pieces(), &[" user", " values", "the"]);
        let ids = v.encode("the user values gritty plot");
        assert_eq!(&ids[..3], &[PIECE_OFFSET + 2, PIECE_OFFSET, PIECE_OFFSET + 1]);
        assert_eq!(v.decode(&ids).unwrap(), "the user values gritty plot");
    }

    #[test]
    fn non_ascii_round_trips() {
        let v = Vocabulary::build(["café naïve", "café"].iter().copied(), 2, 10);
        for s in ["café naïve — ok", "日本語 text", "\t\n tabs"] {
            assert_eq!(v.decode(&v.encode(s)).unwrap(), s);
        }
    }

    #[test]
    fn serde_rebuilds_index() {
        let v = Vocabulary::from_pieces(vec!["ab".into(), " cd".into()]);
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.encode("ab cd"), vec![PIECE_OFFSET, PIECE_OFFSET + 1]);
    }
}
