//! Text in, pronunciations and prosodic breaks out.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::heads::predict_polyphone;
use crate::lexicon::PronunciationLexicon;
use crate::model::FrontendModel;
use crate::prosody::{decode_prosody, Boundaries, ProsodyLabel};
use crate::vocab::tokenize_chars;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub chars: Vec<char>,
    pub prons: Vec<String>,
    pub labels: Vec<ProsodyLabel>,
    pub boundaries: Boundaries,
}

impl Annotation {
    /// One `char<TAB>pron<TAB>label` line per character.
    pub fn render_machine(&self) -> String {
        let mut s = String::new();
        for ((c, p), l) in self.chars.iter().zip(&self.prons).zip(&self.labels) {
            s.push(*c);
            s.push('\t');
            s.push_str(p);
            s.push('\t');
            s.push_str(l.as_str());
            s.push('\n');
        }
        s
    }

    /// The text with `#1`/`#2`/`#3` after each break, then the pronunciations.
    ///
    /// The break after the last character is shown like any other; it marks the
    /// end of the input and carries no information about what follows.
    pub fn render_human(&self) -> String {
        let mut s = String::new();
        for (c, l) in self.chars.iter().zip(&self.labels) {
            s.push(*c);
            if l.level() > 0 {
                s.push('#');
                s.push_str(&l.level().to_string());
            }
        }
        s.push('\n');
        s.push_str(&self.prons.join(" "));
        s.push('\n');
        s
    }

    pub fn final_label(&self) -> ProsodyLabel {
        *self.labels.last().expect("annotations are never empty")
    }
}

/// Annotates one sentence.
///
/// Monophonic characters take their lexicon pronunciation directly; polyphones
/// take the best of their own pronunciations under the polyphone head.
pub fn annotate(model: &FrontendModel, lexicon: &PronunciationLexicon, text: &str) -> Result<Annotation> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return Err(Error::EmptySequence);
    }
    let missing: Vec<(usize, char)> = chars
        .iter()
        .enumerate()
        .filter(|(_, c)| lexicon.get(**c).is_none())
        .map(|(i, c)| (i, *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFromLexicon(missing));
    }
    let max = model.config().encoder.max_seq_len;
    if chars.len() > max {
        return Err(Error::Length { len: chars.len(), max });
    }
    let tokens = tokenize_chars(text, model.vocab())?;
    let pred = model.predict(&[&tokens.ids])?.pop().expect("one sentence in, one out");
    let mut prons = Vec::with_capacity(chars.len());
    for (t, &c) in chars.iter().enumerate() {
        let entry = lexicon.get(c).expect("checked above");
        if entry.len() == 1 {
            prons.push(entry[0].clone());
            continue;
        }
        let adm = model.classes().admissible(c);
        if adm.is_empty() {
            return Err(Error::Lexicon(alloc::format!("polyphone '{c}' has no classes in this model")));
        }
        let class = predict_polyphone(pred.poly_scores.row(t), Some(adm))?;
        let (_, pron) = model.classes().pair(class).expect("admissible class exists");
        prons.push(pron.to_string());
    }
    let boundaries = decode_prosody(&pred.prosody);
    Ok(Annotation { chars, prons, labels: pred.prosody, boundaries })
}
