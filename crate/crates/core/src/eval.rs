//! Scoring a model on labelled examples.

use alloc::vec::Vec;

use crate::corpus::{ExampleLabels, TrainingExample};
use crate::error::{Error, Result};
use crate::heads::predict_polyphone;
use crate::metrics::{polyphone_accuracy, prosody_f1, sentence_accuracy, PolyOutcome, ProsodyScores};
use crate::model::FrontendModel;
use crate::prosody::ProsodyLabel;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolyReport {
    pub accuracy: f64,
    pub sentence_accuracy: f64,
    pub polyphones: usize,
    pub sentences: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub poly: Option<PolyReport>,
    pub prosody: Option<ProsodyScores>,
}

impl EvalReport {
    /// Mean of polyphone accuracy and phonological-phrase F1; missing parts count as 0.
    pub fn selection_score(&self) -> f64 {
        let acc = self.poly.as_ref().map_or(0.0, |p| p.accuracy);
        let pph = self.prosody.as_ref().map_or(0.0, |p| p.pph.f1);
        0.5 * (acc + pph)
    }
}

/// Predicted classes at the masked positions of polyphone examples.
pub fn poly_outcomes(model: &FrontendModel, examples: &[TrainingExample], restrict: bool) -> Result<Vec<PolyOutcome>> {
    let seqs: Vec<&[usize]> = examples.iter().map(|e| e.tokens.as_slice()).collect();
    let preds = model.predict(&seqs)?;
    let mut out = Vec::with_capacity(examples.len());
    for (e, p) in examples.iter().zip(&preds) {
        let ExampleLabels::Poly { targets, mask } = &e.labels else {
            return Err(Error::Usage("polyphone scoring given a prosody example".into()));
        };
        let mut o = PolyOutcome::default();
        for t in (0..e.len()).filter(|&t| mask[t]) {
            let adm = model.classes().admissible(e.chars[t]);
            o.gold.push(targets[t]);
            o.pred.push(predict_polyphone(p.poly_scores.row(t), restrict.then_some(adm))?);
        }
        out.push(o);
    }
    Ok(out)
}

/// Gold and predicted label sequences of prosody examples.
pub fn prosody_outcomes(model: &FrontendModel, examples: &[TrainingExample]) -> Result<(Vec<Vec<ProsodyLabel>>, Vec<Vec<ProsodyLabel>>)> {
    let seqs: Vec<&[usize]> = examples.iter().map(|e| e.tokens.as_slice()).collect();
    let preds = model.predict(&seqs)?;
    let mut gold = Vec::with_capacity(examples.len());
    for e in examples {
        let ExampleLabels::Prosody(l) = &e.labels else {
            return Err(Error::Usage("prosody scoring given a polyphone example".into()));
        };
        gold.push(l.iter().map(|&i| ProsodyLabel::from_index(i).expect("label index")).collect());
    }
    Ok((preds.into_iter().map(|p| p.prosody).collect(), gold))
}

/// Scores whichever of the two test sets is non-empty.
pub fn evaluate(model: &FrontendModel, poly: &[TrainingExample], prosody: &[TrainingExample], restrict: bool) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    if !poly.is_empty() {
        let o = poly_outcomes(model, poly, restrict)?;
        report.poly = Some(PolyReport {
            accuracy: polyphone_accuracy(&o)?,
            sentence_accuracy: sentence_accuracy(&o)?,
            polyphones: o.iter().map(|s| s.gold.len()).sum(),
            sentences: o.len(),
        });
    }
    if !prosody.is_empty() {
        let (pred, gold) = prosody_outcomes(model, prosody)?;
        report.prosody = Some(prosody_f1(&pred, &gold)?);
    }
    Ok(report)
}
