//! Checkpoint files: a text header describing the model, then the tensors.
//!
//! ```text
//! UFCKPT 1
//! kind=model
//! encoder.num_layers=6
//! ...
//! vocab=4e00 4e01 ...
//! class=4e03<TAB>pron<TAB>0
//! tensors=N
//! ---
//! <N × (u32 name length, UTF-8 name, UFT1 tensor)>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use unifront_core::encoder::EncoderConfig;
use unifront_core::heads::{HeadConfig, HeadKind};
use unifront_core::lexicon::PronClassMap;
use unifront_core::model::{FrontendModel, ModelConfig, ENCODER_PREFIX};
use unifront_core::vocab::Vocab;
use unifront_core::ParamStore;

use crate::error::{FormatError, Result};
use crate::tensor_io::{read_tensor, write_tensor};

const HEADER: &str = "UFCKPT 1";
const SEPARATOR: &str = "---";

/// What a checkpoint holds.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Model(FrontendModel),
    /// A bare encoder, e.g. after pretraining or distillation.
    Encoder { config: EncoderConfig, vocab: Vocab, params: ParamStore },
}

impl Checkpoint {
    pub fn encoder_config(&self) -> EncoderConfig {
        match self {
            Checkpoint::Model(m) => m.config().encoder,
            Checkpoint::Encoder { config, .. } => *config,
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            Checkpoint::Model(m) => m.vocab(),
            Checkpoint::Encoder { vocab, .. } => vocab,
        }
    }

    /// The encoder tensors alone.
    pub fn encoder_params(&self) -> ParamStore {
        match self {
            Checkpoint::Model(m) => m.encoder_store(),
            Checkpoint::Encoder { params, .. } => params.subset(ENCODER_PREFIX),
        }
    }
}

fn kind_str(k: HeadKind) -> &'static str {
    match k {
        HeadKind::Mlp => "mlp",
        HeadKind::Blstm => "blstm",
    }
}

pub fn parse_head_kind(s: &str) -> Option<HeadKind> {
    match s {
        "mlp" => Some(HeadKind::Mlp),
        "blstm" => Some(HeadKind::Blstm),
        _ => None,
    }
}

fn push_encoder(lines: &mut Vec<String>, c: &EncoderConfig) {
    lines.push(format!("encoder.num_layers={}", c.num_layers));
    lines.push(format!("encoder.hidden_size={}", c.hidden_size));
    lines.push(format!("encoder.num_heads={}", c.num_heads));
    lines.push(format!("encoder.ffn_size={}", c.ffn_size));
    lines.push(format!("encoder.vocab_size={}", c.vocab_size));
    lines.push(format!("encoder.max_seq_len={}", c.max_seq_len));
    lines.push(format!("encoder.dropout_rate={}", c.dropout_rate));
}

fn push_head(lines: &mut Vec<String>, name: &str, h: &HeadConfig) {
    lines.push(format!("{name}.kind={}", kind_str(h.kind)));
    lines.push(format!("{name}.mlp_hidden={}", h.mlp_hidden));
    lines.push(format!("{name}.lstm_hidden={}", h.lstm_hidden));
}

fn encode(kind: &str, lines: Vec<String>, vocab: &Vocab, classes: Option<&PronClassMap>, params: &ParamStore) -> Vec<u8> {
    let mut head = vec![HEADER.to_string(), format!("kind={kind}")];
    head.extend(lines);
    let ids: Vec<String> = vocab.chars().iter().map(|c| format!("{:x}", *c as u32)).collect();
    head.push(format!("vocab={}", ids.join(" ")));
    if let Some(classes) = classes {
        for (c, p, i) in classes.iter() {
            head.push(format!("class={:x}\t{p}\t{i}", c as u32));
        }
    }
    head.push(format!("tensors={}", params.len()));
    head.push(SEPARATOR.to_string());
    let mut out = head.join("\n").into_bytes();
    out.push(b'\n');
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        write_tensor(&mut out, t).expect("writing to memory");
    }
    out
}

/// Serialises a full model.
pub fn model_bytes(m: &FrontendModel) -> Vec<u8> {
    let c = m.config();
    let mut lines = Vec::new();
    push_encoder(&mut lines, &c.encoder);
    push_head(&mut lines, "poly_head", &c.poly_head);
    push_head(&mut lines, "prosody_head", &c.prosody_head);
    lines.push(format!("prosody_crf={}", c.prosody_crf));
    encode("model", lines, m.vocab(), Some(m.classes()), m.store())
}

/// Serialises an encoder-only checkpoint.
pub fn encoder_bytes(config: &EncoderConfig, vocab: &Vocab, params: &ParamStore) -> Vec<u8> {
    let mut lines = Vec::new();
    push_encoder(&mut lines, config);
    encode("encoder", lines, vocab, None, &params.subset(ENCODER_PREFIX))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

pub fn save_model(path: &Path, m: &FrontendModel) -> Result<()> {
    write_file(path, &model_bytes(m))
}

pub fn save_encoder(path: &Path, config: &EncoderConfig, vocab: &Vocab, params: &ParamStore) -> Result<()> {
    write_file(path, &encoder_bytes(config, vocab, params))
}

struct Header {
    fields: BTreeMap<String, String>,
    classes: Vec<(char, String, usize)>,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, HEADER)) => {}
        _ => return Err(FormatError::parse(path, 1, "not a checkpoint (missing UFCKPT 1 header)")),
    }
    let mut fields = BTreeMap::new();
    let mut classes = Vec::new();
    for (i, line) in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::parse(path, i + 1, format!("expected key=value, got {line:?}")))?;
        if k == "class" {
            let parts: Vec<&str> = v.split('\t').collect();
            let parsed = (parts.len() == 3)
                .then(|| Some((parse_char(parts[0])?, parts[1].to_string(), parts[2].parse().ok()?)))
                .flatten();
            classes.push(parsed.ok_or_else(|| FormatError::parse(path, i + 1, "malformed class line"))?);
        } else if fields.insert(k.to_string(), v.to_string()).is_some() {
            return Err(FormatError::parse(path, i + 1, format!("duplicate key {k}")));
        }
    }
    Ok(Header { fields, classes })
}

fn parse_char(hex: &str) -> Option<char> {
    u32::from_str_radix(hex, 16).ok().and_then(char::from_u32)
}

impl Header {
    fn get<T: std::str::FromStr>(&self, path: &Path, key: &str) -> Result<T> {
        let v = self
            .fields
            .get(key)
            .ok_or_else(|| FormatError::parse(path, 0, format!("missing header key {key}")))?;
        v.parse().map_err(|_| FormatError::parse(path, 0, format!("bad value {v:?} for {key}")))
    }

    fn encoder(&self, path: &Path) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            num_layers: self.get(path, "encoder.num_layers")?,
            hidden_size: self.get(path, "encoder.hidden_size")?,
            num_heads: self.get(path, "encoder.num_heads")?,
            ffn_size: self.get(path, "encoder.ffn_size")?,
            vocab_size: self.get(path, "encoder.vocab_size")?,
            max_seq_len: self.get(path, "encoder.max_seq_len")?,
            dropout_rate: self.get(path, "encoder.dropout_rate")?,
        })
    }

    fn head(&self, path: &Path, name: &str) -> Result<HeadConfig> {
        let kind: String = self.get(path, &format!("{name}.kind"))?;
        Ok(HeadConfig {
            kind: parse_head_kind(&kind).ok_or_else(|| FormatError::parse(path, 0, format!("unknown head kind {kind}")))?,
            mlp_hidden: self.get(path, &format!("{name}.mlp_hidden"))?,
            lstm_hidden: self.get(path, &format!("{name}.lstm_hidden"))?,
        })
    }

    fn vocab(&self, path: &Path) -> Result<Vocab> {
        let v: String = self.get(path, "vocab")?;
        let chars = v
            .split_whitespace()
            .map(|h| parse_char(h).ok_or_else(|| FormatError::parse(path, 0, format!("bad vocabulary entry {h}"))))
            .collect::<Result<Vec<char>>>()?;
        Ok(Vocab::new(chars))
    }
}

fn bad_data(path: &Path, e: io::Error) -> FormatError {
    FormatError::parse(path, 0, format!("tensor section: {e}"))
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn parse_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let marker = format!("\n{SEPARATOR}\n");
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| FormatError::parse(path, 0, "missing header terminator"))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| FormatError::parse(path, 0, "header is not UTF-8"))?;
    let header = parse_header(path, text)?;
    let mut body = &bytes[split + marker.len()..];
    let n: usize = header.get(path, "tensors")?;
    let mut params = ParamStore::new();
    for _ in 0..n {
        let mut len = [0u8; 4];
        body.read_exact(&mut len).map_err(|e| bad_data(path, e))?;
        let len = u32::from_le_bytes(len) as usize;
        if len > body.len() {
            return Err(FormatError::parse(path, 0, "truncated tensor name"));
        }
        let name = std::str::from_utf8(&body[..len]).map_err(|_| FormatError::parse(path, 0, "tensor name is not UTF-8"))?;
        let name = name.to_string();
        body = &body[len..];
        let t = read_tensor(&mut body).map_err(|e| bad_data(path, e))?;
        params.add(name, t)?;
    }
    if !body.is_empty() {
        return Err(FormatError::parse(path, 0, "trailing bytes after tensors"));
    }
    let encoder = header.encoder(path)?;
    let vocab = header.vocab(path)?;
    let kind: String = header.get(path, "kind")?;
    match kind.as_str() {
        "model" => {
            let config = ModelConfig {
                encoder,
                poly_head: header.head(path, "poly_head")?,
                prosody_head: header.head(path, "prosody_head")?,
                prosody_crf: header.get(path, "prosody_crf")?,
            };
            let classes = PronClassMap::from_triples(header.classes)?;
            Ok(Checkpoint::Model(FrontendModel::from_store(config, vocab, classes, params)?))
        }
        "encoder" => {
            unifront_core::encoder::Encoder::attach(encoder, &params, ENCODER_PREFIX)?;
            if params.len() != encoder.param_shapes(ENCODER_PREFIX).len() {
                return Err(FormatError::parse(path, 0, "encoder checkpoint holds extra tensors"));
            }
            Ok(Checkpoint::Encoder { config: encoder, vocab, params })
        }
        other => Err(FormatError::parse(path, 0, format!("unknown checkpoint kind {other}"))),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| FormatError::io(path, e))?;
    parse_checkpoint(path, &bytes)
}

/// Loads a checkpoint that must hold a full model.
pub fn load_model(path: &Path) -> Result<FrontendModel> {
    match load_checkpoint(path)? {
        Checkpoint::Model(m) => Ok(m),
        Checkpoint::Encoder { .. } => Err(FormatError::parse(path, 0, "expected a full model, found an encoder-only checkpoint")),
    }
}
