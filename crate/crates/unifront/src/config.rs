//! Run configuration: `key = value` lines, `#` comments, unknown keys rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use unifront_core::distill::{AttentionTarget, DistillConfig, ProjectionInit};
use unifront_core::encoder::EncoderConfig;
use unifront_core::heads::HeadConfig;
use unifront_core::model::ModelConfig;
use unifront_core::multitask::TrainConfig;
use unifront_core::optim::AdamConfig;
use unifront_core::pipeline::PipelineConfig;
use unifront_core::pretrain::PretrainConfig;
use unifront_core::synth::SyntheticLangSpec;

use crate::checkpoint::parse_head_kind;
use crate::error::{FormatError, Result};

/// Architecture of one encoder, without the vocabulary size (taken from the lexicon).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderShape {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl EncoderShape {
    pub fn teacher() -> Self {
        Self::from_config(&EncoderConfig::desk_teacher(0))
    }

    pub fn student() -> Self {
        Self::from_config(&EncoderConfig::desk_student(0))
    }

    fn from_config(c: &EncoderConfig) -> Self {
        Self {
            layers: c.num_layers,
            hidden: c.hidden_size,
            heads: c.num_heads,
            ffn: c.ffn_size,
            max_seq_len: c.max_seq_len,
            dropout: c.dropout_rate,
        }
    }

    pub fn with_vocab(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.layers,
            hidden_size: self.hidden,
            num_heads: self.heads,
            ffn_size: self.ffn,
            vocab_size,
            max_seq_len: self.max_seq_len,
            dropout_rate: self.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSizes {
    pub poly: usize,
    pub prosody: usize,
    pub raw: usize,
    pub poly_seed: u64,
    pub prosody_seed: u64,
    pub raw_seed: u64,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self { poly: 3000, prosody: 3000, raw: 5000, poly_seed: 101, prosody_seed: 202, raw_seed: 303 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub lang: SyntheticLangSpec,
    pub corpus: CorpusSizes,
    pub teacher: EncoderShape,
    /// Present only when some `student.*` key is given.
    pub student: Option<EncoderShape>,
    pub poly_head: HeadConfig,
    pub prosody_head: HeadConfig,
    pub prosody_crf: bool,
    pub train: TrainConfig,
    pub student_train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub general: DistillConfig,
    pub task: DistillConfig,
    pub data_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let general = DistillConfig { steps: 800, ..Default::default() };
        Self {
            seed: 1,
            lang: SyntheticLangSpec::default(),
            corpus: CorpusSizes::default(),
            teacher: EncoderShape::teacher(),
            student: None,
            poly_head: HeadConfig::default(),
            prosody_head: HeadConfig::default(),
            prosody_crf: false,
            train: TrainConfig::default(),
            student_train: TrainConfig { steps: 600, eval_every: 100, ..Default::default() },
            pretrain: PretrainConfig { steps: 0, ..Default::default() },
            task: general.clone(),
            general,
            data_dir: PathBuf::from("data"),
        }
    }
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn set_shape(s: &mut EncoderShape, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "layers" => s.layers = num(v)?,
        "hidden" => s.hidden = num(v)?,
        "heads" => s.heads = num(v)?,
        "ffn" => s.ffn = num(v)?,
        "max_seq_len" => s.max_seq_len = num(v)?,
        "dropout" => s.dropout = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_head(h: &mut HeadConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "kind" => h.kind = parse_head_kind(v).ok_or_else(|| format!("head kind must be mlp or blstm, got {v:?}"))?,
        "mlp_hidden" => h.mlp_hidden = num(v)?,
        "lstm_hidden" => h.lstm_hidden = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_adam(a: &mut AdamConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "lr" => a.lr = num(v)?,
        "beta1" => a.beta1 = num(v)?,
        "beta2" => a.beta2 = num(v)?,
        "eps" => a.eps = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_train(t: &mut TrainConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "steps" => t.steps = num(v)?,
        "batch_size" => t.batch_size = num(v)?,
        "alpha_poly" => t.alpha_poly = num(v)?,
        "alpha_prosody" => t.alpha_prosody = num(v)?,
        "warmup_steps" => t.warmup_steps = num(v)?,
        "clip_norm" => t.clip_norm = num(v)?,
        "mixing_ratio" => t.mixing_ratio = if v == "auto" { None } else { Some(num(v)?) },
        "eval_every" => t.eval_every = num(v)?,
        "restrict_argmax" => t.restrict_argmax = flag(v)?,
        "seed" => t.seed = num(v)?,
        _ => return set_adam(&mut t.adam, key, v),
    }
    Ok(true)
}

fn set_distill(d: &mut DistillConfig, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "layer_map" => {
            d.layer_map = if v == "auto" {
                None
            } else {
                Some(v.split(',').map(|x| num(x.trim())).collect::<std::result::Result<_, _>>()?)
            }
        }
        "include_embedding" => d.include_embedding_layer = flag(v)?,
        "attention" => {
            d.attention = match v {
                "probs" => AttentionTarget::Probabilities,
                "logits" => AttentionTarget::Logits,
                _ => return Err(format!("attention must be probs or logits, got {v:?}")),
            }
        }
        "attention_weight" => d.attention_weight = num(v)?,
        "hidden_weight" => d.hidden_weight = num(v)?,
        "projection_init" => {
            d.projection_init = match v {
                "orthonormal" => ProjectionInit::Orthonormal,
                "identity" => ProjectionInit::Identity,
                _ => return Err(format!("projection_init must be orthonormal or identity, got {v:?}")),
            }
        }
        "steps" => d.steps = num(v)?,
        "batch_size" => d.batch_size = num(v)?,
        "clip_norm" => d.clip_norm = num(v)?,
        "seed" => d.seed = num(v)?,
        _ => return set_adam(&mut d.adam, key, v),
    }
    Ok(true)
}

fn set_lang(l: &mut SyntheticLangSpec, key: &str, v: &str) -> std::result::Result<bool, String> {
    match key {
        "vocab_size" => l.vocab_size = num(v)?,
        "polyphones" => l.num_polyphones = num(v)?,
        "min_prons" => l.min_prons = num(v)?,
        "max_prons" => l.max_prons = num(v)?,
        "context_classes" => l.num_context_classes = num(v)?,
        "word_len_min" => l.word_len.0 = num(v)?,
        "word_len_max" => l.word_len.1 = num(v)?,
        "phrase_words_min" => l.phrase_words.0 = num(v)?,
        "phrase_words_max" => l.phrase_words.1 = num(v)?,
        "sentence_phrases_min" => l.sentence_phrases.0 = num(v)?,
        "sentence_phrases_max" => l.sentence_phrases.1 = num(v)?,
        "punctuation_prob" => l.punctuation_prob = num(v)?,
        "seed" => l.seed = num(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (section, rest) = key.split_once('.').unwrap_or((key, ""));
        let known = match section {
            "seed" if rest.is_empty() => {
                self.seed = num(v)?;
                true
            }
            "lang" => set_lang(&mut self.lang, rest, v)?,
            "corpus" => {
                let c = &mut self.corpus;
                match rest {
                    "poly_sentences" => c.poly = num(v)?,
                    "prosody_sentences" => c.prosody = num(v)?,
                    "raw_sentences" => c.raw = num(v)?,
                    "poly_seed" => c.poly_seed = num(v)?,
                    "prosody_seed" => c.prosody_seed = num(v)?,
                    "raw_seed" => c.raw_seed = num(v)?,
                    _ => return Err(format!("unknown key {key}")),
                }
                true
            }
            "teacher" => set_shape(&mut self.teacher, rest, v)?,
            "student" => set_shape(self.student.get_or_insert_with(EncoderShape::student), rest, v)?,
            "head" => match rest.split_once('.') {
                Some(("poly", k)) => set_head(&mut self.poly_head, k, v)?,
                Some(("prosody", "crf")) => {
                    self.prosody_crf = flag(v)?;
                    true
                }
                Some(("prosody", k)) => set_head(&mut self.prosody_head, k, v)?,
                _ => false,
            },
            "train" => set_train(&mut self.train, rest, v)?,
            "student_train" => set_train(&mut self.student_train, rest, v)?,
            "pretrain" => match rest {
                "steps" => {
                    self.pretrain.steps = num(v)?;
                    true
                }
                "batch_size" => {
                    self.pretrain.batch_size = num(v)?;
                    true
                }
                "mask_prob" => {
                    self.pretrain.mask_prob = num(v)?;
                    true
                }
                "clip_norm" => {
                    self.pretrain.clip_norm = num(v)?;
                    true
                }
                "seed" => {
                    self.pretrain.seed = num(v)?;
                    true
                }
                k => set_adam(&mut self.pretrain.adam, k, v)?,
            },
            "distill" => match rest.split_once('.') {
                Some(("general", k)) => set_distill(&mut self.general, k, v)?,
                Some(("task", k)) => set_distill(&mut self.task, k, v)?,
                _ => false,
            },
            "paths" if rest == "data_dir" => {
                self.data_dir = PathBuf::from(v);
                true
            }
            _ => false,
        };
        if known {
            Ok(())
        } else {
            Err(format!("unknown key {key}"))
        }
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FormatError::parse(path, i + 1, format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(|m| FormatError::parse(path, i + 1, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn teacher_model(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.teacher.with_vocab(vocab_size),
            poly_head: self.poly_head,
            prosody_head: self.prosody_head,
            prosody_crf: self.prosody_crf,
        }
    }

    pub fn student_model(&self, vocab_size: usize) -> Option<ModelConfig> {
        self.student.map(|s| ModelConfig { encoder: s.with_vocab(vocab_size), ..self.teacher_model(vocab_size) })
    }

    pub fn pipeline(&self, vocab_size: usize) -> Option<PipelineConfig> {
        Some(PipelineConfig {
            teacher: self.teacher_model(vocab_size),
            student: self.student_model(vocab_size)?,
            pretrain: self.pretrain,
            general: self.general.clone(),
            teacher_train: self.train,
            task: self.task.clone(),
            student_train: self.student_train,
            seed: self.seed,
        })
    }

    /// Every setting as `key = value` lines, in a fixed order.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        let l = &self.lang;
        kv("lang.vocab_size", l.vocab_size.to_string());
        kv("lang.polyphones", l.num_polyphones.to_string());
        kv("lang.min_prons", l.min_prons.to_string());
        kv("lang.max_prons", l.max_prons.to_string());
        kv("lang.context_classes", l.num_context_classes.to_string());
        kv("lang.word_len_min", l.word_len.0.to_string());
        kv("lang.word_len_max", l.word_len.1.to_string());
        kv("lang.phrase_words_min", l.phrase_words.0.to_string());
        kv("lang.phrase_words_max", l.phrase_words.1.to_string());
        kv("lang.sentence_phrases_min", l.sentence_phrases.0.to_string());
        kv("lang.sentence_phrases_max", l.sentence_phrases.1.to_string());
        kv("lang.punctuation_prob", l.punctuation_prob.to_string());
        kv("lang.seed", l.seed.to_string());
        let c = &self.corpus;
        kv("corpus.poly_sentences", c.poly.to_string());
        kv("corpus.prosody_sentences", c.prosody.to_string());
        kv("corpus.raw_sentences", c.raw.to_string());
        kv("corpus.poly_seed", c.poly_seed.to_string());
        kv("corpus.prosody_seed", c.prosody_seed.to_string());
        kv("corpus.raw_seed", c.raw_seed.to_string());
        let mut shapes = vec![("teacher", self.teacher)];
        shapes.extend(self.student.map(|s| ("student", s)));
        for (name, e) in shapes {
            kv(&format!("{name}.layers"), e.layers.to_string());
            kv(&format!("{name}.hidden"), e.hidden.to_string());
            kv(&format!("{name}.heads"), e.heads.to_string());
            kv(&format!("{name}.ffn"), e.ffn.to_string());
            kv(&format!("{name}.max_seq_len"), e.max_seq_len.to_string());
            kv(&format!("{name}.dropout"), e.dropout.to_string());
        }
        for (name, h) in [("head.poly", &self.poly_head), ("head.prosody", &self.prosody_head)] {
            let kind = match h.kind {
                unifront_core::heads::HeadKind::Mlp => "mlp",
                unifront_core::heads::HeadKind::Blstm => "blstm",
            };
            kv(&format!("{name}.kind"), kind.into());
            kv(&format!("{name}.mlp_hidden"), h.mlp_hidden.to_string());
            kv(&format!("{name}.lstm_hidden"), h.lstm_hidden.to_string());
        }
        kv("head.prosody.crf", self.prosody_crf.to_string());
        for (name, t) in [("train", &self.train), ("student_train", &self.student_train)] {
            kv(&format!("{name}.steps"), t.steps.to_string());
            kv(&format!("{name}.batch_size"), t.batch_size.to_string());
            kv(&format!("{name}.alpha_poly"), t.alpha_poly.to_string());
            kv(&format!("{name}.alpha_prosody"), t.alpha_prosody.to_string());
            kv(&format!("{name}.lr"), t.adam.lr.to_string());
            kv(&format!("{name}.beta1"), t.adam.beta1.to_string());
            kv(&format!("{name}.beta2"), t.adam.beta2.to_string());
            kv(&format!("{name}.eps"), t.adam.eps.to_string());
            kv(&format!("{name}.warmup_steps"), t.warmup_steps.to_string());
            kv(&format!("{name}.clip_norm"), t.clip_norm.to_string());
            kv(&format!("{name}.mixing_ratio"), t.mixing_ratio.map_or("auto".into(), |r| r.to_string()));
            kv(&format!("{name}.eval_every"), t.eval_every.to_string());
            kv(&format!("{name}.restrict_argmax"), t.restrict_argmax.to_string());
            kv(&format!("{name}.seed"), t.seed.to_string());
        }
        let p = &self.pretrain;
        kv("pretrain.steps", p.steps.to_string());
        kv("pretrain.batch_size", p.batch_size.to_string());
        kv("pretrain.mask_prob", p.mask_prob.to_string());
        kv("pretrain.lr", p.adam.lr.to_string());
        kv("pretrain.beta1", p.adam.beta1.to_string());
        kv("pretrain.beta2", p.adam.beta2.to_string());
        kv("pretrain.eps", p.adam.eps.to_string());
        kv("pretrain.clip_norm", p.clip_norm.to_string());
        kv("pretrain.seed", p.seed.to_string());
        for (name, d) in [("distill.general", &self.general), ("distill.task", &self.task)] {
            let map = d.layer_map.as_ref().map_or("auto".into(), |m| {
                m.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            });
            kv(&format!("{name}.layer_map"), map);
            kv(&format!("{name}.include_embedding"), d.include_embedding_layer.to_string());
            let att = match d.attention {
                AttentionTarget::Probabilities => "probs",
                AttentionTarget::Logits => "logits",
            };
            kv(&format!("{name}.attention"), att.into());
            kv(&format!("{name}.attention_weight"), d.attention_weight.to_string());
            kv(&format!("{name}.hidden_weight"), d.hidden_weight.to_string());
            let init = match d.projection_init {
                ProjectionInit::Orthonormal => "orthonormal",
                ProjectionInit::Identity => "identity",
            };
            kv(&format!("{name}.projection_init"), init.into());
            kv(&format!("{name}.steps"), d.steps.to_string());
            kv(&format!("{name}.batch_size"), d.batch_size.to_string());
            kv(&format!("{name}.lr"), d.adam.lr.to_string());
            kv(&format!("{name}.beta1"), d.adam.beta1.to_string());
            kv(&format!("{name}.beta2"), d.adam.beta2.to_string());
            kv(&format!("{name}.eps"), d.adam.eps.to_string());
            kv(&format!("{name}.clip_norm"), d.clip_norm.to_string());
            kv(&format!("{name}.seed"), d.seed.to_string());
        }
        kv("paths.data_dir", self.data_dir.display().to_string());
        s
    }
}
