//! A seeded artificial language whose pronunciations and prosodic breaks follow fixed rules.
//!
//! Every regular symbol is either word-final or not, may open a phrase, and
//! carries a context class. Words are runs of non-final symbols closed by a
//! final one; phrase-opening words start with a phrase-initial symbol and no
//! other word does. A polyphone is read according to the class of the symbol
//! to its right, with a separate entry for end of sentence or punctuation.
//! Prosody labels follow from the same structure:
//!
//! * the punctuation mark is `B3`;
//! * a word-final symbol that closes a phrase (next symbol phrase-initial,
//!   punctuation, or the end of the sentence) is `B2`;
//! * any other word-final symbol is `B1`;
//! * everything else is `I`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusRecord, RecordLabels, Task};
use crate::error::{Error, Result};
use crate::lexicon::{PronClassMap, PronunciationLexicon};
use crate::prosody::{format_labels, ProsodyLabel};
use crate::vocab::Vocab;

pub const PUNCTUATION: char = '，';
pub const PAUSE_PRON: &str = "sil";
const FIRST_SYMBOL: u32 = 0x4E00;

const ONSETS: [&str; 21] = [
    "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q", "x", "zh", "ch", "sh", "r", "z", "c", "s",
];
const RIMES: [&str; 14] = ["a", "o", "e", "i", "u", "ai", "ei", "ao", "ou", "an", "en", "ang", "eng", "ong"];

/// Parameters of the generated language.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLangSpec {
    /// Number of symbols including the punctuation mark.
    pub vocab_size: usize,
    pub num_polyphones: usize,
    pub min_prons: usize,
    pub max_prons: usize,
    /// Context classes a right neighbour can fall into.
    pub num_context_classes: usize,
    pub word_len: (usize, usize),
    pub phrase_words: (usize, usize),
    pub sentence_phrases: (usize, usize),
    /// Chance of a punctuation mark at each internal phrase boundary.
    pub punctuation_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticLangSpec {
    fn default() -> Self {
        Self {
            vocab_size: 60,
            num_polyphones: 8,
            min_prons: 2,
            max_prons: 3,
            num_context_classes: 3,
            word_len: (1, 3),
            phrase_words: (2, 3),
            sentence_phrases: (2, 4),
            punctuation_prob: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticLangSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size < 5 * self.num_context_classes + 1 {
            return bad("synthetic vocabulary needs five symbols per context class plus punctuation");
        }
        if self.num_polyphones > self.vocab_size - 1 {
            return bad("more polyphones than regular symbols");
        }
        if self.min_prons < 2 || self.max_prons < self.min_prons || self.max_prons > self.num_context_classes {
            return bad("pronunciations per polyphone must lie in [2, context classes]");
        }
        if self.num_context_classes == 0 {
            return bad("need at least one context class");
        }
        for (lo, hi, what) in [
            (self.word_len.0, self.word_len.1, "word length"),
            (self.phrase_words.0, self.phrase_words.1, "phrase length"),
            (self.sentence_phrases.0, self.sentence_phrases.1, "sentence length"),
        ] {
            if lo == 0 || hi < lo {
                return Err(Error::Config(alloc::format!("{what} range must be non-empty and positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.punctuation_prob) {
            return bad("punctuation probability must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Symbol {
    ch: char,
    word_final: bool,
    phrase_initial: bool,
    class: usize,
    prons: Vec<String>,
    /// Pronunciation index per right-context class; the last entry is the boundary context.
    rule: Vec<usize>,
}

/// The instantiated language: symbols, their attributes and the labelling rules.
#[derive(Clone, Debug)]
pub struct SyntheticLanguage {
    spec: SyntheticLangSpec,
    /// Regular symbols; punctuation is kept apart.
    symbols: Vec<Symbol>,
    // pools of symbol indices by (word_final, phrase_initial)
    pools: [[Vec<usize>; 2]; 2],
}

impl SyntheticLanguage {
    pub fn new(spec: SyntheticLangSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let n = spec.vocab_size - 1;

        let mut syllables: Vec<String> = ONSETS
            .iter()
            .flat_map(|o| RIMES.iter().flat_map(move |r| (1..=4).map(move |t| alloc::format!("{o}{r}{t}"))))
            .collect();
        syllables.shuffle(&mut rng);
        let needed = n + spec.num_polyphones * spec.max_prons;
        if syllables.len() < needed {
            return Err(Error::Config("synthetic vocabulary too large for the syllable inventory".into()));
        }
        let mut syllables = syllables.into_iter();

        // Round-robin over the four (final, initial) pools so each is populated.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut symbols: Vec<Symbol> = (0..n)
            .map(|i| Symbol {
                ch: char::from_u32(FIRST_SYMBOL + i as u32).expect("valid code point"),
                word_final: false,
                phrase_initial: false,
                class: 0,
                prons: Vec::new(),
                rule: Vec::new(),
            })
            .collect();
        for (rank, &i) in order.iter().enumerate() {
            let slot = rank % 5;
            // two of five slots are word-final, with a share of each kind phrase-initial
            symbols[i].word_final = slot >= 3;
            symbols[i].phrase_initial = slot == 0 || slot == 3;
            // cycling classes per slot spreads every class over every pool
            symbols[i].class = (rank / 5) % spec.num_context_classes;
        }
        let mut poly_order: Vec<usize> = (0..n).collect();
        poly_order.shuffle(&mut rng);
        let polyphones: Vec<usize> = poly_order[..spec.num_polyphones].to_vec();
        for (i, s) in symbols.iter_mut().enumerate() {
            if polyphones.contains(&i) {
                let k = rng.random_range(spec.min_prons..=spec.max_prons);
                s.prons = (0..k).map(|_| syllables.next().expect("inventory checked")).collect();
                // Non-final symbols never see the boundary context, so the
                // classes alone must reach every reading.
                let c = spec.num_context_classes;
                let span = if s.word_final { c + 1 } else { c };
                let mut rule: Vec<usize> = (0..span).map(|j| if j < k { j } else { rng.random_range(0..k) }).collect();
                rule.shuffle(&mut rng);
                if !s.word_final {
                    rule.push(rng.random_range(0..k));
                }
                s.rule = rule;
            } else {
                s.prons = alloc::vec![syllables.next().expect("inventory checked")];
            }
        }
        let mut pools: [[Vec<usize>; 2]; 2] = Default::default();
        for (i, s) in symbols.iter().enumerate() {
            pools[s.word_final as usize][s.phrase_initial as usize].push(i);
        }
        Ok(Self { spec, symbols, pools })
    }

    pub fn spec(&self) -> &SyntheticLangSpec {
        &self.spec
    }

    fn symbol(&self, ch: char) -> Option<&Symbol> {
        let i = (ch as u32).checked_sub(FIRST_SYMBOL)? as usize;
        self.symbols.get(i)
    }

    /// All characters, regular symbols first and punctuation last.
    pub fn chars(&self) -> Vec<char> {
        self.symbols.iter().map(|s| s.ch).chain(core::iter::once(PUNCTUATION)).collect()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.chars())
    }

    pub fn polyphones(&self) -> Vec<char> {
        self.symbols.iter().filter(|s| s.prons.len() > 1).map(|s| s.ch).collect()
    }

    pub fn lexicon(&self) -> PronunciationLexicon {
        let mut lex = PronunciationLexicon::new();
        for s in &self.symbols {
            lex.insert(s.ch, s.prons.clone()).expect("generated entries are valid");
        }
        lex.insert(PUNCTUATION, alloc::vec![PAUSE_PRON.to_string()])
            .expect("generated entries are valid");
        lex
    }

    pub fn class_map(&self) -> PronClassMap {
        PronClassMap::from_lexicon(&self.lexicon())
    }

    fn context(&self, chars: &[char], i: usize) -> usize {
        match chars.get(i + 1).and_then(|&c| self.symbol(c)) {
            Some(s) => s.class,
            None => self.spec.num_context_classes,
        }
    }

    /// Pronunciation the rules assign at position `i`.
    pub fn pronunciation(&self, chars: &[char], i: usize) -> Option<&str> {
        if chars[i] == PUNCTUATION {
            return Some(PAUSE_PRON);
        }
        let s = self.symbol(chars[i])?;
        let k = if s.prons.len() == 1 { 0 } else { s.rule[self.context(chars, i)] };
        Some(&s.prons[k])
    }

    /// Prosody label the rules assign at position `i`.
    pub fn prosody_label(&self, chars: &[char], i: usize) -> ProsodyLabel {
        if chars[i] == PUNCTUATION {
            return ProsodyLabel::B3;
        }
        let Some(s) = self.symbol(chars[i]) else {
            return ProsodyLabel::I;
        };
        if !s.word_final {
            return ProsodyLabel::I;
        }
        let closes_phrase = match chars.get(i + 1) {
            None | Some(&PUNCTUATION) => true,
            Some(&n) => self.symbol(n).is_some_and(|t| t.phrase_initial),
        };
        if closes_phrase {
            ProsodyLabel::B2
        } else {
            ProsodyLabel::B1
        }
    }

    pub fn prosody_labels(&self, chars: &[char]) -> Vec<ProsodyLabel> {
        (0..chars.len()).map(|i| self.prosody_label(chars, i)).collect()
    }

    /// `(position, pronunciation)` for every polyphone in the sentence.
    pub fn polyphone_labels(&self, chars: &[char]) -> Vec<(usize, String)> {
        (0..chars.len())
            .filter(|&i| self.symbol(chars[i]).is_some_and(|s| s.prons.len() > 1))
            .map(|i| (i, self.pronunciation(chars, i).expect("symbol exists").to_string()))
            .collect()
    }

    fn pick<R: Rng>(&self, rng: &mut R, word_final: bool, phrase_initial: Option<bool>) -> char {
        let f = word_final as usize;
        let pool: Vec<usize> = match phrase_initial {
            Some(p) => self.pools[f][p as usize].clone(),
            None => self.pools[f][0].iter().chain(&self.pools[f][1]).copied().collect(),
        };
        self.symbols[pool[rng.random_range(0..pool.len())]].ch
    }

    fn word<R: Rng>(&self, rng: &mut R, out: &mut Vec<char>, opens_phrase: bool) {
        let len = rng.random_range(self.spec.word_len.0..=self.spec.word_len.1);
        for j in 0..len {
            let last = j + 1 == len;
            let initial = if j == 0 { Some(opens_phrase) } else { None };
            out.push(self.pick(rng, last, initial));
        }
    }

    /// Draws one unlabelled sentence.
    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<char> {
        let mut out = Vec::new();
        let phrases = rng.random_range(self.spec.sentence_phrases.0..=self.spec.sentence_phrases.1);
        for p in 0..phrases {
            if p > 0 && rng.random_bool(self.spec.punctuation_prob) {
                out.push(PUNCTUATION);
            }
            let words = rng.random_range(self.spec.phrase_words.0..=self.spec.phrase_words.1);
            for w in 0..words {
                self.word(rng, &mut out, w == 0);
            }
        }
        out
    }

    /// Labels a sentence for one task.
    pub fn label(&self, chars: &[char], task: Task) -> CorpusRecord {
        let text: String = chars.iter().collect();
        let labels = match task {
            Task::Poly => RecordLabels::Poly(self.polyphone_labels(chars)),
            Task::Prosody => RecordLabels::Prosody(self.prosody_labels(chars)),
        };
        CorpusRecord { text, labels }
    }

    /// `n` labelled sentences; polyphone corpora only keep sentences containing a polyphone.
    pub fn generate(&self, n: usize, task: Task, seed: u64) -> Result<Vec<CorpusRecord>> {
        if task == Task::Poly && self.spec.num_polyphones == 0 {
            return Err(Error::Config("a polyphone corpus needs at least one polyphone".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = self.sentence(&mut rng);
            let rec = self.label(&s, task);
            if matches!(&rec.labels, RecordLabels::Poly(p) if p.is_empty()) {
                continue;
            }
            out.push(rec);
        }
        Ok(out)
    }

    /// `n` unlabelled sentences.
    pub fn generate_raw(&self, n: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sentence(&mut rng).into_iter().collect()).collect()
    }
}

/// Renders labels in the compact corpus form, e.g. `IB1IB3`.
pub fn render_prosody(labels: &[ProsodyLabel]) -> String {
    format_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang() -> SyntheticLanguage {
        SyntheticLanguage::new(SyntheticLangSpec::default()).unwrap()
    }

    #[test]
    fn inventory_matches_spec() {
        let l = lang();
        assert_eq!(l.chars().len(), 60);
        assert_eq!(l.polyphones().len(), 8);
        let lex = l.lexicon();
        assert_eq!(lex.len(), 60);
        assert!(l.class_map().covers(&lex).is_ok());
        for p in l.polyphones() {
            let k = lex.get(p).unwrap().len();
            assert!((2..=3).contains(&k));
        }
    }

    #[test]
    fn generation_is_seeded() {
        let l = lang();
        assert_eq!(l.generate(20, Task::Poly, 5).unwrap(), l.generate(20, Task::Poly, 5).unwrap());
        assert_ne!(l.generate(20, Task::Poly, 5).unwrap(), l.generate(20, Task::Poly, 6).unwrap());
    }

    #[test]
    fn labels_follow_structure() {
        let l = lang();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = l.sentence(&mut rng);
            let labels = l.prosody_labels(&s);
            assert_eq!(*labels.last().unwrap(), ProsodyLabel::B2);
            for (i, &c) in s.iter().enumerate() {
                assert_eq!(c == PUNCTUATION, labels[i] == ProsodyLabel::B3);
                if c == PUNCTUATION {
                    assert_eq!(labels[i - 1], ProsodyLabel::B2);
                }
            }
            // one phrase boundary per phrase
            let breaks = labels.iter().filter(|&&x| x == ProsodyLabel::B2).count();
            assert!(breaks >= l.spec().sentence_phrases.0);
        }
    }

    #[test]
    fn polyphone_corpus_has_polyphones() {
        let l = lang();
        for r in l.generate(50, Task::Poly, 2).unwrap() {
            let RecordLabels::Poly(p) = &r.labels else { panic!() };
            assert!(!p.is_empty());
            r.validate().unwrap();
        }
    }

    #[test]
    fn every_pronunciation_is_reachable() {
        let l = lang();
        let mut seen = alloc::collections::BTreeSet::new();
        for r in l.generate(3000, Task::Poly, 9).unwrap() {
            let chars = r.chars();
            if let RecordLabels::Poly(p) = r.labels {
                for (i, pron) in p {
                    seen.insert((chars[i], pron));
                }
            }
        }
        let total: usize = l.polyphones().iter().map(|&c| l.lexicon().get(c).unwrap().len()).sum();
        assert_eq!(seen.len(), total);
    }

    #[test]
    fn no_polyphones_rejected_for_poly_task() {
        let spec = SyntheticLangSpec { num_polyphones: 0, ..Default::default() };
        let l = SyntheticLanguage::new(spec).unwrap();
        assert!(matches!(l.generate(3, Task::Poly, 0), Err(Error::Config(_))));
        assert_eq!(l.generate(3, Task::Prosody, 0).unwrap().len(), 3);
    }
}
