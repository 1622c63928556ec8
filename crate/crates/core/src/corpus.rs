//! Labelled sentences and their numeric training form.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::lexicon::PronClassMap;
use crate::prosody::ProsodyLabel;
use crate::vocab::{tokenize_chars, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Poly,
    Prosody,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Poly => "POLY",
            Task::Prosody => "PROSODY",
        }
    }
}

/// Labels of a corpus sentence; exactly one task is labelled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RecordLabels {
    /// `(position, pronunciation)` for each polyphonic character.
    Poly(Vec<(usize, String)>),
    Prosody(Vec<ProsodyLabel>),
}

/// One sentence as stored in a corpus file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusRecord {
    pub text: String,
    pub labels: RecordLabels,
}

impl CorpusRecord {
    pub fn task(&self) -> Task {
        match self.labels {
            RecordLabels::Poly(_) => Task::Poly,
            RecordLabels::Prosody(_) => Task::Prosody,
        }
    }

    pub fn chars(&self) -> Vec<char> {
        self.text.chars().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.text.chars().count();
        if n == 0 {
            return Err(Error::EmptySequence);
        }
        match &self.labels {
            RecordLabels::Poly(pairs) => {
                let mut last = None;
                for (p, _) in pairs {
                    if *p >= n || last.is_some_and(|l| l >= *p) {
                        return Err(Error::Alignment(alloc::format!(
                            "polyphone position {p} invalid for {n} characters"
                        )));
                    }
                    last = Some(*p);
                }
            }
            RecordLabels::Prosody(l) if l.len() != n => {
                return Err(Error::Alignment(alloc::format!(
                    "{} prosody labels for {n} characters",
                    l.len()
                )))
            }
            RecordLabels::Prosody(_) => {}
        }
        Ok(())
    }
}

/// Numeric targets of a training sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExampleLabels {
    /// Class per position (0 where unlabelled) and the polyphone mask.
    Poly { targets: Vec<usize>, mask: Vec<bool> },
    Prosody(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub tokens: Vec<usize>,
    pub chars: Vec<char>,
    pub labels: ExampleLabels,
}

impl TrainingExample {
    pub fn task(&self) -> Task {
        match self.labels {
            ExampleLabels::Poly { .. } => Task::Poly,
            ExampleLabels::Prosody(_) => Task::Prosody,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Converts a corpus record using the model's vocabulary and class inventory.
    pub fn from_record(rec: &CorpusRecord, vocab: &Vocab, classes: &PronClassMap) -> Result<Self> {
        rec.validate()?;
        let chars = rec.chars();
        let tokens = tokenize_chars(&rec.text, vocab)?.ids;
        let labels = match &rec.labels {
            RecordLabels::Poly(pairs) => {
                let mut targets = alloc::vec![0; chars.len()];
                let mut mask = alloc::vec![false; chars.len()];
                for (p, pron) in pairs {
                    let class = classes.class_of(chars[*p], pron).ok_or_else(|| {
                        Error::Lexicon(alloc::format!(
                            "no class for '{}' pronounced {pron} at position {p}",
                            chars[*p]
                        ))
                    })?;
                    targets[*p] = class;
                    mask[*p] = true;
                }
                ExampleLabels::Poly { targets, mask }
            }
            RecordLabels::Prosody(l) => ExampleLabels::Prosody(l.iter().map(|x| x.index()).collect()),
        };
        Ok(Self { tokens, chars, labels })
    }
}

/// Converts many records, reporting the first failure with its index.
pub fn examples_from_records(records: &[CorpusRecord], vocab: &Vocab, classes: &PronClassMap) -> Result<Vec<TrainingExample>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            TrainingExample::from_record(r, vocab, classes)
                .map_err(|e| Error::Alignment(alloc::format!("record {i}: {e}")))
        })
        .collect()
}

/// Deterministic 9:1 split by sentence count: the last `n / 10` records form the test part.
pub fn split_train_test<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>) {
    let n_test = items.len() / 10;
    let cut = items.len() - n_test;
    (items[..cut].to_vec(), items[cut..].to_vec())
}
