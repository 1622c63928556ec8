//! Corpus, raw-text, lexicon and class-inventory files.
//!
//! Corpus lines are `TASK<TAB>chars<TAB>labels`: polyphone labels are
//! comma-separated `pos:pron` pairs, prosody labels a string such as `IIB1IB2`.
//! Blank lines are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use unifront_core::corpus::{examples_from_records, CorpusRecord, RecordLabels, Task, TrainingExample};
use unifront_core::lexicon::{PronClassMap, PronunciationLexicon};
use unifront_core::prosody::{format_labels, parse_labels};
use unifront_core::vocab::Vocab;

use crate::error::{FormatError, Result};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| FormatError::io(path, e))
}

pub fn format_record(r: &CorpusRecord) -> String {
    match &r.labels {
        RecordLabels::Poly(pairs) => {
            let labels: Vec<String> = pairs.iter().map(|(p, s)| format!("{p}:{s}")).collect();
            format!("POLY\t{}\t{}", r.text, labels.join(","))
        }
        RecordLabels::Prosody(l) => format!("PROSODY\t{}\t{}", r.text, format_labels(l)),
    }
}

/// Parses one non-blank corpus line.
pub fn parse_record(line: &str) -> std::result::Result<CorpusRecord, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    let text = fields[1].to_string();
    let labels = match fields[0] {
        "POLY" => {
            let mut pairs = Vec::new();
            for item in fields[2].split(',').filter(|s| !s.is_empty()) {
                let (p, s) = item.split_once(':').ok_or_else(|| format!("polyphone label {item:?} is not pos:pron"))?;
                let p = p.parse().map_err(|_| format!("bad position {p:?}"))?;
                if s.is_empty() {
                    return Err(format!("empty pronunciation at position {p}"));
                }
                pairs.push((p, s.to_string()));
            }
            RecordLabels::Poly(pairs)
        }
        "PROSODY" => RecordLabels::Prosody(parse_labels(fields[2]).map_err(|e| e.to_string())?),
        other => return Err(format!("unknown task {other:?}")),
    };
    let rec = CorpusRecord { text, labels };
    rec.validate().map_err(|e| e.to_string())?;
    Ok(rec)
}

pub fn format_corpus(records: &[CorpusRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format_record(r));
        s.push('\n');
    }
    s
}

pub fn parse_corpus(path: &Path, text: &str) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(line).map_err(|m| FormatError::parse(path, i + 1, m))?);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    parse_corpus(path, &read_text(path)?)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    write_text(path, &format_corpus(records))
}

/// Reads a corpus and converts it to training examples of the given task.
pub fn load_corpus(path: &Path, task: Task, vocab: &Vocab, classes: &PronClassMap) -> Result<Vec<TrainingExample>> {
    let records = read_corpus(path)?;
    if let Some(i) = records.iter().position(|r| r.task() != task) {
        return Err(FormatError::parse(path, i + 1, format!("expected only {} sentences", task.as_str())));
    }
    examples_from_records(&records, vocab, classes).map_err(|e| FormatError::parse(path, 0, e.to_string()))
}

/// Unlabelled text, one sentence per line.
pub fn read_raw(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

pub fn write_raw(path: &Path, sentences: &[String]) -> Result<()> {
    let mut s = String::new();
    for line in sentences {
        s.push_str(line);
        s.push('\n');
    }
    write_text(path, &s)
}

/// `char<TAB>pron1[,pron2,...]` lines sorted by character.
pub fn format_lexicon(lex: &PronunciationLexicon) -> String {
    let mut s = String::new();
    for (c, prons) in lex.iter() {
        let _ = writeln!(s, "{c}\t{}", prons.join(","));
    }
    s
}

pub fn parse_lexicon(path: &Path, text: &str) -> Result<PronunciationLexicon> {
    let mut lex = PronunciationLexicon::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: String| FormatError::parse(path, i + 1, m);
        let (c, prons) = line.split_once('\t').ok_or_else(|| err("expected char<TAB>prons".into()))?;
        let mut cs = c.chars();
        let (Some(ch), None) = (cs.next(), cs.next()) else {
            return Err(err(format!("{c:?} is not a single character")));
        };
        if lex.get(ch).is_some() {
            return Err(err(format!("duplicate entry for '{ch}'")));
        }
        let prons: Vec<String> = prons.split(',').map(str::to_string).collect();
        lex.insert(ch, prons).map_err(|e| err(e.to_string()))?;
    }
    Ok(lex)
}

pub fn read_lexicon(path: &Path) -> Result<PronunciationLexicon> {
    parse_lexicon(path, &read_text(path)?)
}

pub fn write_lexicon(path: &Path, lex: &PronunciationLexicon) -> Result<()> {
    write_text(path, &format_lexicon(lex))
}

/// `char<TAB>pron<TAB>class_index` lines in class order.
pub fn format_classes(classes: &PronClassMap) -> String {
    let mut s = String::new();
    for (c, p, i) in classes.iter() {
        let _ = writeln!(s, "{c}\t{p}\t{i}");
    }
    s
}

pub fn parse_classes(path: &Path, text: &str) -> Result<PronClassMap> {
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let parsed = (f.len() == 3)
            .then(|| {
                let mut cs = f[0].chars();
                let ch = cs.next().filter(|_| cs.next().is_none())?;
                Some((ch, f[1].to_string(), f[2].parse::<usize>().ok()?))
            })
            .flatten();
        triples.push(parsed.ok_or_else(|| FormatError::parse(path, i + 1, "expected char<TAB>pron<TAB>index"))?);
    }
    Ok(PronClassMap::from_triples(triples)?)
}

pub fn write_classes(path: &Path, classes: &PronClassMap) -> Result<()> {
    write_text(path, &format_classes(classes))
}

/// The vocabulary implied by a lexicon: its characters in sorted order.
pub fn vocab_from_lexicon(lex: &PronunciationLexicon) -> Vocab {
    Vocab::new(lex.iter().map(|(c, _)| c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use unifront_core::prosody::ProsodyLabel;

    #[test]
    fn record_round_trip() {
        let poly = CorpusRecord { text: "一二三".into(), labels: RecordLabels::Poly(vec![(0, "yi1".into()), (2, "san1".into())]) };
        let pros = CorpusRecord { text: "一二".into(), labels: RecordLabels::Prosody(vec![ProsodyLabel::B1, ProsodyLabel::B3]) };
        for r in [poly, pros] {
            assert_eq!(parse_record(&format_record(&r)).unwrap(), r);
        }
    }

    #[test]
    fn malformed_lines_report_location() {
        let text = "PROSODY\t一二\tIB1\n\nPOLY\t一二\t5:yi1\n";
        match parse_corpus(Path::new("c.txt"), text) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_record("PROSODY\t一二\tIX").is_err());
        assert!(parse_record("POS\t一\tI").is_err());
    }

    #[test]
    fn lexicon_round_trip_and_comments() {
        let text = "# header\n一\tyi1,yi2\n二\ter4\n";
        let lex = parse_lexicon(Path::new("l"), text).unwrap();
        assert!(lex.is_polyphonic('一'));
        assert_eq!(format_lexicon(&lex), "一\tyi1,yi2\n二\ter4\n");
        assert!(parse_lexicon(Path::new("l"), "一\ta\n一\tb\n").is_err());
        let classes = PronClassMap::from_lexicon(&lex);
        let back = parse_classes(Path::new("c"), &format_classes(&classes)).unwrap();
        assert_eq!(back, classes);
    }
}
