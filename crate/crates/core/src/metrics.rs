//! Polyphone accuracy and prosodic-boundary F1.
//!
//! All scores are percentages in `[0, 100]`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::prosody::ProsodyLabel;

/// Gold and predicted classes at the polyphonic positions of one sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolyOutcome {
    pub gold: Vec<usize>,
    pub pred: Vec<usize>,
}

fn check_aligned(sentences: &[PolyOutcome]) -> Result<()> {
    for (i, s) in sentences.iter().enumerate() {
        if s.gold.len() != s.pred.len() {
            return Err(Error::Alignment(alloc::format!(
                "sentence {i}: {} gold vs {} predicted polyphones",
                s.gold.len(),
                s.pred.len()
            )));
        }
    }
    Ok(())
}

/// Correct polyphone predictions over all polyphonic positions.
pub fn polyphone_accuracy(sentences: &[PolyOutcome]) -> Result<f64> {
    check_aligned(sentences)?;
    let total: usize = sentences.iter().map(|s| s.gold.len()).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("polyphone accuracy over zero polyphones"));
    }
    let correct: usize = sentences
        .iter()
        .map(|s| s.gold.iter().zip(&s.pred).filter(|(g, p)| g == p).count())
        .sum();
    Ok(100.0 * correct as f64 / total as f64)
}

/// Share of sentences whose polyphones are all correct; sentences without polyphones are skipped.
pub fn sentence_accuracy(sentences: &[PolyOutcome]) -> Result<f64> {
    check_aligned(sentences)?;
    let scored: Vec<&PolyOutcome> = sentences.iter().filter(|s| !s.gold.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::UndefinedMetric("sentence accuracy over zero polyphone sentences"));
    }
    let correct = scored.iter().filter(|s| s.gold == s.pred).count();
    Ok(100.0 * correct as f64 / scored.len() as f64)
}

/// Mean of per-sentence polyphone accuracies. Never below [`sentence_accuracy`].
pub fn macro_polyphone_accuracy(sentences: &[PolyOutcome]) -> Result<f64> {
    check_aligned(sentences)?;
    let per: Vec<f64> = sentences
        .iter()
        .filter(|s| !s.gold.is_empty())
        .map(|s| s.gold.iter().zip(&s.pred).filter(|(g, p)| g == p).count() as f64 / s.gold.len() as f64)
        .collect();
    if per.is_empty() {
        return Err(Error::UndefinedMetric("sentence accuracy over zero polyphone sentences"));
    }
    Ok(100.0 * per.iter().sum::<f64>() / per.len() as f64)
}

/// Precision, recall and F1 at one boundary level, with their counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LevelScore {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LevelScore {
    /// Scores from counts; an empty denominator yields 0.
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { true_positives, predicted, gold, precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProsodyScores {
    pub pw: LevelScore,
    pub pph: LevelScore,
    pub iph: LevelScore,
}

impl ProsodyScores {
    pub fn level(&self, k: usize) -> &LevelScore {
        match k {
            1 => &self.pw,
            2 => &self.pph,
            3 => &self.iph,
            _ => panic!("boundary level {k} out of range 1..=3"),
        }
    }
}

/// Boundary F1 at levels 1–3, pooled over sentences.
///
/// Position `t` is a level-`k` boundary when its label is `B_k` or stronger.
/// The last position of each sentence always ends an utterance and is not scored.
pub fn prosody_f1(pred: &[Vec<ProsodyLabel>], gold: &[Vec<ProsodyLabel>]) -> Result<ProsodyScores> {
    if pred.len() != gold.len() {
        return Err(Error::Alignment(alloc::format!(
            "{} predicted vs {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let mut counts = [[0usize; 3]; 3];
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Alignment(alloc::format!(
                "sentence {i}: {} predicted vs {} gold labels",
                p.len(),
                g.len()
            )));
        }
        let scored = p.len().saturating_sub(1);
        for (a, b) in p[..scored].iter().zip(&g[..scored]) {
            for (k, c) in counts.iter_mut().enumerate() {
                let level = k as u8 + 1;
                let (pa, gb) = (a.level() >= level, b.level() >= level);
                c[0] += (pa && gb) as usize;
                c[1] += pa as usize;
                c[2] += gb as usize;
            }
        }
    }
    let s = |k: usize| LevelScore::from_counts(counts[k][0], counts[k][1], counts[k][2]);
    Ok(ProsodyScores { pw: s(0), pph: s(1), iph: s(2) })
}
