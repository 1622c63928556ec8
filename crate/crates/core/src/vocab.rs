//! Character vocabulary and tokenization.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const RESERVED: usize = 2;

/// Character ↔ id table. Ids 0 and 1 are reserved for padding and unknown characters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    ids: BTreeMap<char, usize>,
}

impl Vocab {
    /// Builds a vocabulary from characters in the given order, skipping duplicates.
    pub fn new(chars: impl IntoIterator<Item = char>) -> Self {
        let mut v = Self::default();
        for c in chars {
            if !v.ids.contains_key(&c) {
                v.ids.insert(c, v.chars.len() + RESERVED);
                v.chars.push(c);
            }
        }
        v
    }

    /// Total id space including reserved ids.
    pub fn size(&self) -> usize {
        self.chars.len() + RESERVED
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.ids.get(&c).copied()
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(RESERVED).and_then(|i| self.chars.get(i).copied())
    }
}

/// Token ids of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    /// Positions that fell back to the unknown id.
    pub unknown: Vec<usize>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One token per character; characters outside `vocab` map to [`UNK_ID`].
pub fn tokenize_chars(text: &str, vocab: &Vocab) -> Result<TokenSeq> {
    if text.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut ids = Vec::new();
    let mut unknown = Vec::new();
    for (i, c) in text.chars().enumerate() {
        match vocab.id(c) {
            Some(id) => ids.push(id),
            None => {
                ids.push(UNK_ID);
                unknown.push(i);
            }
        }
    }
    Ok(TokenSeq { ids, unknown })
}

/// Right-padded batch of token sequences, `[batch × seq]` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub seq: usize,
}

impl TokenBatch {
    pub fn new(seqs: &[&[usize]]) -> Result<Self> {
        let seq = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        if seq == 0 || seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptySequence);
        }
        let mut ids = alloc::vec![PAD_ID; seqs.len() * seq];
        for (b, s) in seqs.iter().enumerate() {
            ids[b * seq..b * seq + s.len()].copy_from_slice(s);
        }
        Ok(Self {
            ids,
            lengths: seqs.iter().map(|s| s.len()).collect(),
            seq,
        })
    }

    /// A batch with one sequence padded to at least `seq` positions.
    pub fn single(ids: &[usize], seq: usize) -> Result<Self> {
        let mut b = Self::new(&[ids])?;
        if seq > b.seq {
            b.ids.resize(seq, PAD_ID);
            b.seq = seq;
        }
        Ok(b)
    }

    pub fn batch(&self) -> usize {
        self.lengths.len()
    }

    /// Non-padding flag for every `[batch × seq]` position.
    pub fn valid(&self) -> Vec<bool> {
        let mut v = Vec::with_capacity(self.ids.len());
        for &len in &self.lengths {
            v.extend((0..self.seq).map(|t| t < len));
        }
        v
    }
}
