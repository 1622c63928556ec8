use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("label {label} out of range [0, {classes}) at position {position}")]
    Label {
        position: usize,
        label: usize,
        classes: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("usage error: {0}")]
    Usage(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    Length { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("characters missing from lexicon: {}", format_missing(.0))]
    MissingFromLexicon(Vec<(usize, char)>),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("alignment mismatch: {0}")]
    Alignment(String),
    #[error("training aborted at step {step}: non-finite loss for example {example}")]
    NonFiniteLoss { step: usize, example: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: alloc::boxed::Box::new(self),
        }
    }

    /// The innermost error, looking through stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

fn format_missing(missing: &[(usize, char)]) -> String {
    use core::fmt::Write;
    let mut s = String::new();
    for (i, (pos, ch)) in missing.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "'{ch}' at {pos}");
    }
    s
}
