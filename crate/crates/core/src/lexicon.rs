//! Pronunciation lexicon and the joint polyphone class inventory.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Per-character pronunciation lists. One entry means monophonic, two or more polyphonic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PronunciationLexicon {
    entries: BTreeMap<char, Vec<String>>,
}

impl PronunciationLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ch: char, prons: Vec<String>) -> Result<()> {
        if prons.is_empty() {
            return Err(Error::Lexicon(alloc::format!("'{ch}' has no pronunciation")));
        }
        let mut seen = prons.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != prons.len() {
            return Err(Error::Lexicon(alloc::format!("'{ch}' lists a pronunciation twice")));
        }
        if self.entries.insert(ch, prons).is_some() {
            return Err(Error::Lexicon(alloc::format!("'{ch}' listed twice")));
        }
        Ok(())
    }

    pub fn get(&self, ch: char) -> Option<&[String]> {
        self.entries.get(&ch).map(Vec::as_slice)
    }

    pub fn is_polyphonic(&self, ch: char) -> bool {
        self.get(ch).is_some_and(|p| p.len() >= 2)
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, &[String])> {
        self.entries.iter().map(|(c, p)| (*c, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bijection between polyphonic `(char, pronunciation)` pairs and dense class indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PronClassMap {
    classes: Vec<(char, String)>,
    index: BTreeMap<(char, String), usize>,
    admissible: BTreeMap<char, Vec<usize>>,
}

impl PronClassMap {
    /// Classes for every polyphonic entry, ordered by `(char, pronunciation)`.
    pub fn from_lexicon(lex: &PronunciationLexicon) -> Self {
        let mut pairs: Vec<(char, String)> = lex
            .iter()
            .filter(|(_, p)| p.len() >= 2)
            .flat_map(|(c, p)| p.iter().map(move |s| (c, s.clone())))
            .collect();
        pairs.sort();
        Self::from_pairs(pairs).expect("lexicon pairs are unique and polyphonic")
    }

    /// Rebuilds a map from `(char, pron, class)` triples, checking density and polyphony.
    pub fn from_triples(triples: Vec<(char, String, usize)>) -> Result<Self> {
        let n = triples.len();
        let mut slots: Vec<Option<(char, String)>> = alloc::vec![None; n];
        for (c, p, i) in triples {
            if i >= n || slots[i].is_some() {
                return Err(Error::Lexicon(alloc::format!("class index {i} is not dense/unique")));
            }
            slots[i] = Some((c, p));
        }
        Self::from_pairs(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
    }

    fn from_pairs(classes: Vec<(char, String)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut admissible: BTreeMap<char, Vec<usize>> = BTreeMap::new();
        for (i, (c, p)) in classes.iter().enumerate() {
            if index.insert((*c, p.clone()), i).is_some() {
                return Err(Error::Lexicon(alloc::format!("duplicate class '{c}' {p}")));
            }
            admissible.entry(*c).or_default().push(i);
        }
        if let Some((c, _)) = admissible.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Lexicon(alloc::format!("'{c}' has fewer than two classes")));
        }
        Ok(Self {
            classes,
            index,
            admissible,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, ch: char, pron: &str) -> Option<usize> {
        self.index.get(&(ch, String::from(pron))).copied()
    }

    pub fn pair(&self, class: usize) -> Option<(char, &str)> {
        self.classes.get(class).map(|(c, p)| (*c, p.as_str()))
    }

    /// Classes a character may take; empty for characters that are not polyphonic.
    pub fn admissible(&self, ch: char) -> &[usize] {
        self.admissible.get(&ch).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, &str, usize)> {
        self.classes.iter().enumerate().map(|(i, (c, p))| (*c, p.as_str(), i))
    }

    /// Checks that every polyphonic lexicon pair has a class.
    pub fn covers(&self, lex: &PronunciationLexicon) -> Result<()> {
        for (c, prons) in lex.iter().filter(|(_, p)| p.len() >= 2) {
            for p in prons {
                if self.class_of(c, p).is_none() {
                    return Err(Error::Lexicon(alloc::format!(
                        "polyphone '{c}' pronunciation {p} has no class"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn lex() -> PronunciationLexicon {
        let mut l = PronunciationLexicon::new();
        l.insert('行', vec!["xing2".to_string(), "hang2".to_string()]).unwrap();
        l.insert('好', vec!["hao3".to_string(), "hao4".to_string()]).unwrap();
        l.insert('人', vec!["ren2".to_string()]).unwrap();
        l
    }

    #[test]
    fn classes_are_dense_and_sorted() {
        let m = PronClassMap::from_lexicon(&lex());
        assert_eq!(m.num_classes(), 4);
        assert_eq!(m.pair(0), Some(('好', "hao3")));
        assert_eq!(m.admissible('行'), &[2, 3]);
        assert!(m.admissible('人').is_empty());
        m.covers(&lex()).unwrap();
        let back = PronClassMap::from_triples(m.iter().map(|(c, p, i)| (c, p.to_string(), i)).collect()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_single_class_polyphone() {
        let t = vec![('a', "x".to_string(), 0)];
        assert!(PronClassMap::from_triples(t).is_err());
    }
}
