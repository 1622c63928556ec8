//! Mixed four-class prosodic labels and their three-level boundary views.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Break after a character: none, prosodic word, prosodic phrase, or intonational phrase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProsodyLabel {
    I = 0,
    B1 = 1,
    B2 = 2,
    B3 = 3,
}

pub const NUM_PROSODY_LABELS: usize = 4;

impl ProsodyLabel {
    pub const ALL: [ProsodyLabel; 4] = [Self::I, Self::B1, Self::B2, Self::B3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::I => "I",
            Self::B1 => "B1",
            Self::B2 => "B2",
            Self::B3 => "B3",
        }
    }

    /// Break level: 0 for `I`, 1..=3 for `B1..B3`.
    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn from_level(level: u8) -> Self {
        Self::ALL[level.min(3) as usize]
    }
}

impl fmt::Display for ProsodyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses a concatenated label string such as `"IIB1IB2"`.
pub fn parse_labels(s: &str) -> Result<Vec<ProsodyLabel>> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'I' => {
                out.push(ProsodyLabel::I);
                i += 1;
            }
            b'B' if i + 1 < bytes.len() && (b'1'..=b'3').contains(&bytes[i + 1]) => {
                out.push(ProsodyLabel::from_level(bytes[i + 1] - b'0'));
                i += 2;
            }
            _ => {
                return Err(Error::Usage(alloc::format!(
                    "bad prosody label at byte {i} of {s:?}"
                )))
            }
        }
    }
    Ok(out)
}

pub fn format_labels(labels: &[ProsodyLabel]) -> alloc::string::String {
    labels.iter().map(|l| l.as_str()).collect()
}

/// Boundary positions at each prosodic level; position `i` is the break after character `i`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Boundaries {
    pub pw: Vec<usize>,
    pub pph: Vec<usize>,
    pub iph: Vec<usize>,
}

impl Boundaries {
    pub fn level(&self, level: usize) -> &[usize] {
        match level {
            1 => &self.pw,
            2 => &self.pph,
            3 => &self.iph,
            _ => panic!("prosodic level must be 1, 2 or 3"),
        }
    }
}

/// Derives the three nested boundary sets from mixed labels.
pub fn decode_prosody(labels: &[ProsodyLabel]) -> Boundaries {
    let mut b = Boundaries::default();
    for (i, l) in labels.iter().enumerate() {
        if l.level() >= 1 {
            b.pw.push(i);
        }
        if l.level() >= 2 {
            b.pph.push(i);
        }
        if l.level() >= 3 {
            b.iph.push(i);
        }
    }
    b
}

/// Rebuilds mixed labels by taking the highest level present at each position.
pub fn encode_prosody(boundaries: &Boundaries, len: usize) -> Vec<ProsodyLabel> {
    let mut level = alloc::vec![0u8; len];
    for (lv, set) in [(1u8, &boundaries.pw), (2, &boundaries.pph), (3, &boundaries.iph)] {
        for &p in set {
            if p < len {
                level[p] = level[p].max(lv);
            }
        }
    }
    level.into_iter().map(ProsodyLabel::from_level).collect()
}
