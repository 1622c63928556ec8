//! The `unifront` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use unifront_core::annotate::annotate;
use unifront_core::corpus::{examples_from_records, split_train_test, Task, TrainingExample};
use unifront_core::distill::{general_distillation, task_distillation, DistillOutcome};
use unifront_core::encoder::{count_params, Encoder, EncoderConfig};
use unifront_core::eval::evaluate;
use unifront_core::lexicon::PronClassMap;
use unifront_core::model::{FrontendModel, ModelConfig, ENCODER_PREFIX};
use unifront_core::multitask::{train, TaskData};
use unifront_core::pipeline::{finetune_model, init_student, pretrain_teacher, run_pipeline, tail_mean, PipelineData, Role};
use unifront_core::synth::SyntheticLanguage;
use unifront_core::vocab::{tokenize_chars, Vocab};
use unifront_core::{Error, ParamStore};

use crate::checkpoint::{load_checkpoint, load_model, save_encoder, save_model, Checkpoint};
use crate::config::RunConfig;
use crate::corpus_io::{read_corpus, read_lexicon, read_raw, write_classes, write_corpus, write_lexicon, write_raw};
use crate::error::FormatError;
use crate::report::{eval_block, eval_table, metrics_tsv, pipeline_block, pipeline_timings};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_DATA: i32 = 4;

/// A failed command: what to print and the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(e: impl ToString) -> Self {
        Self { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn data(e: impl ToString) -> Self {
        Self { code: EXIT_DATA, message: e.to_string() }
    }

    /// Training and distillation failures, except those caused by bad settings.
    fn training(e: Error) -> Self {
        let code = match e.root() {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_TRAINING,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser, Debug)]
#[command(name = "unifront", version, about = "Polyphone and prosody front-end: training, distillation, evaluation, inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    Poly,
    Prosody,
    Raw,
}

impl CorpusKind {
    fn stem(self) -> &'static str {
        match self {
            CorpusKind::Poly => "poly",
            CorpusKind::Prosody => "prosody",
            CorpusKind::Raw => "raw",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderRole {
    Teacher,
    Student,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    General,
    Task,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Human,
    Machine,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with its lexicon and class inventory.
    GenCorpus {
        /// Run configuration whose `lang.*` keys describe the language.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        task: CorpusKind,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Pretrain the teacher encoder on unlabelled text.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corpus directory; overrides `paths.data_dir`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Multi-task finetuning of a teacher or student model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = EncoderRole::Teacher)]
        encoder: EncoderRole,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Encoder (or model) checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Distil a student encoder: one stage, or the whole workflow.
    Distill {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        stage: Stage,
        /// Pretrained teacher (general), finetuned teacher model (task), or
        /// an optional pretrained teacher (full).
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Student encoder to continue from (task stage).
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a model on labelled corpora.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        lexicon: PathBuf,
        /// Argmax over all pronunciation classes instead of the character's own.
        #[arg(long)]
        unrestricted: bool,
    },
    /// Annotate text with pronunciations and prosodic breaks.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        text: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Human)]
        format: OutputFormat,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::GenCorpus { spec, out, n, task, seed } => gen_corpus(spec.as_deref(), &out, n, task, seed),
        Command::Pretrain { config, out, data } => pretrain(&config, &out, data),
        Command::Train { config, encoder, out, data, init } => train_cmd(&config, encoder, &out, data, init.as_deref()),
        Command::Distill { config, stage, teacher, student, out, data } => {
            distill_cmd(&config, stage, teacher.as_deref(), student.as_deref(), &out, data)
        }
        Command::Eval { checkpoint, corpus, lexicon, unrestricted } => eval_cmd(&checkpoint, &corpus, &lexicon, !unrestricted),
        Command::Infer { checkpoint, lexicon, text, file, format } => infer_cmd(&checkpoint, &lexicon, text, file.as_deref(), format),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::config(FormatError::Io { path: dir.into(), source: e }))?;
    }
    fs::write(path, contents).map_err(|e| CliError::config(FormatError::Io { path: path.into(), source: e }))
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen_corpus(spec: Option<&Path>, out: &Path, n: usize, task: CorpusKind, seed: u64) -> CliResult {
    let cfg = match spec {
        Some(p) => RunConfig::load(p).map_err(CliError::config)?,
        None => RunConfig::default(),
    };
    let lang = SyntheticLanguage::new(cfg.lang).map_err(CliError::config)?;
    fs::create_dir_all(out).map_err(|e| CliError::config(FormatError::Io { path: out.into(), source: e }))?;
    let stem = task.stem();
    let (train_n, test_n) = match task {
        CorpusKind::Raw => {
            let (tr, te) = split_train_test(&lang.generate_raw(n, seed));
            write_raw(&out.join("raw.train.txt"), &tr).map_err(CliError::config)?;
            write_raw(&out.join("raw.test.txt"), &te).map_err(CliError::config)?;
            (tr.len(), te.len())
        }
        CorpusKind::Poly | CorpusKind::Prosody => {
            let t = if task == CorpusKind::Poly { Task::Poly } else { Task::Prosody };
            let records = lang.generate(n, t, seed).map_err(CliError::config)?;
            let (tr, te) = split_train_test(&records);
            write_corpus(&out.join(format!("{stem}.train.txt")), &tr).map_err(CliError::config)?;
            write_corpus(&out.join(format!("{stem}.test.txt")), &te).map_err(CliError::config)?;
            (tr.len(), te.len())
        }
    };
    write_lexicon(&out.join("lexicon.txt"), &lang.lexicon()).map_err(CliError::config)?;
    write_classes(&out.join("classes.txt"), &lang.class_map()).map_err(CliError::config)?;
    println!("{stem}: {train_n} train, {test_n} test sentences in {}", out.display());
    println!("lexicon: {} characters, {} polyphones", lang.lexicon().len(), lang.polyphones().len());
    Ok(())
}

/// Lexicon-derived vocabulary and classes of a corpus directory.
struct Inventory {
    vocab: Vocab,
    classes: PronClassMap,
}

fn load_inventory(dir: &Path) -> Result<Inventory, CliError> {
    let lexicon = read_lexicon(&dir.join("lexicon.txt")).map_err(CliError::config)?;
    let path = dir.join("classes.txt");
    let text = fs::read_to_string(&path).map_err(|e| CliError::config(FormatError::Io { path: path.clone(), source: e }))?;
    let classes = crate::corpus_io::parse_classes(&path, &text).map_err(CliError::config)?;
    classes.covers(&lexicon).map_err(CliError::config)?;
    let vocab = crate::corpus_io::vocab_from_lexicon(&lexicon);
    Ok(Inventory { vocab, classes })
}

/// Training corpora split into train and validation parts.
struct TaskSplits {
    poly_train: Vec<TrainingExample>,
    poly_val: Vec<TrainingExample>,
    prosody_train: Vec<TrainingExample>,
    prosody_val: Vec<TrainingExample>,
}

impl TaskSplits {
    fn load(dir: &Path, inv: &Inventory) -> Result<Self, CliError> {
        let load = |stem: &str, task: Task| -> Result<_, CliError> {
            let path = dir.join(format!("{stem}.train.txt"));
            let examples = crate::corpus_io::load_corpus(&path, task, &inv.vocab, &inv.classes).map_err(CliError::config)?;
            Ok(split_train_test(&examples))
        };
        let (poly_train, poly_val) = load("poly", Task::Poly)?;
        let (prosody_train, prosody_val) = load("prosody", Task::Prosody)?;
        Ok(Self { poly_train, poly_val, prosody_train, prosody_val })
    }

    fn data(&self) -> TaskData<'_> {
        TaskData {
            poly_train: &self.poly_train,
            prosody_train: &self.prosody_train,
            poly_val: &self.poly_val,
            prosody_val: &self.prosody_val,
        }
    }
}

fn load_unlabeled(dir: &Path, vocab: &Vocab) -> Result<Vec<Vec<usize>>, CliError> {
    let lines = read_raw(&dir.join("raw.train.txt")).map_err(CliError::config)?;
    lines.iter().map(|l| tokenize_chars(l, vocab).map(|t| t.ids).map_err(CliError::config)).collect()
}

fn load_config(path: &Path, data: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path).map_err(CliError::config)?;
    if let Some(d) = data {
        cfg.data_dir = d;
    }
    Ok(cfg)
}

/// Writes the resolved configuration beside an output and mentions it on stderr.
fn log_config(cfg: &RunConfig, path: &Path) -> CliResult {
    write_file(path, cfg.resolved())?;
    eprintln!("resolved configuration written to {}", path.display());
    Ok(())
}

fn student_model(cfg: &RunConfig, vocab: &Vocab) -> Result<ModelConfig, CliError> {
    cfg.student_model(vocab.size())
        .ok_or_else(|| CliError::config("no student section in the configuration (set student.* keys)"))
}

/// Encoder tensors from a checkpoint, checked against the expected shape and vocabulary.
fn load_encoder(path: &Path, expected: EncoderConfig, vocab: &Vocab) -> Result<ParamStore, CliError> {
    let ckpt = load_checkpoint(path).map_err(CliError::config)?;
    if ckpt.encoder_config() != expected {
        return Err(CliError::config(format!("{}: encoder shape differs from the configuration", path.display())));
    }
    if ckpt.vocab() != vocab {
        return Err(CliError::config(format!("{}: vocabulary differs from the lexicon", path.display())));
    }
    let params = ckpt.encoder_params();
    Encoder::attach(expected, &params, ENCODER_PREFIX).map_err(CliError::config)?;
    Ok(params)
}

fn losses_text(losses: &[f64]) -> String {
    let mut s = String::new();
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{}\t{l:.6}", i + 1);
    }
    s
}

fn pretrain(config: &Path, out: &Path, data: Option<PathBuf>) -> CliResult {
    let cfg = load_config(config, data)?;
    let inv = load_inventory(&cfg.data_dir)?;
    let unlabeled = load_unlabeled(&cfg.data_dir, &inv.vocab)?;
    log_config(&cfg, &sibling(out, ".config"))?;
    let enc_cfg = cfg.teacher.with_vocab(inv.vocab.size());
    let (store, losses) = pretrain_teacher(enc_cfg, &unlabeled, &cfg.pretrain, cfg.seed).map_err(|e| CliError::training(e.in_stage("pretrain")))?;
    save_encoder(out, &enc_cfg, &inv.vocab, &store).map_err(CliError::config)?;
    write_file(&sibling(out, ".losses.tsv"), losses_text(&losses))?;
    println!("stage.pretrain.steps={}", cfg.pretrain.steps);
    println!("stage.pretrain.final_loss={:.6}", tail_mean(&losses));
    Ok(())
}

fn train_cmd(config: &Path, role: EncoderRole, out: &Path, data: Option<PathBuf>, init: Option<&Path>) -> CliResult {
    let cfg = load_config(config, data)?;
    let inv = load_inventory(&cfg.data_dir)?;
    let (model_cfg, train_cfg, role) = match role {
        EncoderRole::Teacher => (cfg.teacher_model(inv.vocab.size()), cfg.train, Role::Teacher),
        EncoderRole::Student => (student_model(&cfg, &inv.vocab)?, cfg.student_train, Role::Student),
    };
    model_cfg.encoder.validate().map_err(CliError::config)?;
    train_cfg.validate().map_err(CliError::config)?;
    let splits = TaskSplits::load(&cfg.data_dir, &inv)?;
    log_config(&cfg, &sibling(out, ".config"))?;
    let mut model = match init {
        Some(p) => {
            let enc = load_encoder(p, model_cfg.encoder, &inv.vocab)?;
            finetune_model(role, model_cfg, &inv.vocab, &inv.classes, &enc, cfg.seed)
        }
        None => FrontendModel::init(model_cfg, inv.vocab.clone(), inv.classes.clone(), cfg.seed),
    }
    .map_err(CliError::config)?;
    let outcome = train(&mut model, splits.data(), &train_cfg, |r| {
        eprintln!(
            "step {:>6}  l_poly {:.4}  l_prosody {:.4}  acc {:.2}  pph {:.2}",
            r.step, r.l_poly, r.l_prosody, r.val_acc, r.val_pph_f1
        )
    })
    .map_err(CliError::training)?;
    save_model(out, &model).map_err(CliError::config)?;
    write_file(&sibling(out, ".metrics.tsv"), metrics_tsv(&outcome.log))?;
    let report = evaluate(&model, &splits.poly_val, &splits.prosody_val, train_cfg.restrict_argmax).map_err(CliError::training)?;
    println!("best_step={}", outcome.best_step);
    print!("{}", eval_block(&report));
    println!("params={}", model.num_params());
    Ok(())
}

fn write_distill_outputs(dir: &Path, name: &str, outcome: &DistillOutcome) -> CliResult {
    write_file(&dir.join(format!("{name}.losses.tsv")), losses_text(&outcome.losses))?;
    let map: Vec<String> = outcome.layer_map.iter().map(|m| m.to_string()).collect();
    println!("stage.{name}.layer_map={}", map.join(","));
    println!("stage.{name}.final_loss={:.6}", outcome.final_loss(50));
    Ok(())
}

fn size_lines(teacher: &EncoderConfig, student: &EncoderConfig) -> String {
    let (t, s) = (count_params(teacher), count_params(student));
    format!("teacher.encoder_params={t}\nstudent.encoder_params={s}\nsize_ratio={:.6}\n", s as f64 / t as f64)
}

fn distill_cmd(config: &Path, stage: Stage, teacher: Option<&Path>, student: Option<&Path>, out: &Path, data: Option<PathBuf>) -> CliResult {
    let cfg = load_config(config, data)?;
    let inv = load_inventory(&cfg.data_dir)?;
    let student_cfg = student_model(&cfg, &inv.vocab)?;
    let teacher_cfg = cfg.teacher_model(inv.vocab.size());
    fs::create_dir_all(out).map_err(|e| CliError::config(FormatError::Io { path: out.into(), source: e }))?;
    log_config(&cfg, &out.join("run.config"))?;
    let (tc, sc) = (teacher_cfg.encoder, student_cfg.encoder);
    match stage {
        Stage::General => {
            let path = teacher.ok_or_else(|| CliError::config("--teacher is required for the general stage"))?;
            let t_store = load_encoder(path, tc, &inv.vocab)?;
            let t_enc = Encoder::attach(tc, &t_store, ENCODER_PREFIX).map_err(CliError::config)?;
            let unlabeled = load_unlabeled(&cfg.data_dir, &inv.vocab)?;
            let run = || -> unifront_core::Result<_> {
                let (s_enc, mut s_store) = init_student(sc, cfg.seed)?;
                let o = general_distillation((&t_enc, &t_store), (&s_enc, &mut s_store), &unlabeled, &cfg.general)?;
                Ok((s_store, o))
            };
            let (s_store, outcome) = run().map_err(|e| CliError::training(e.in_stage("general")))?;
            save_encoder(&out.join("student.general.ckpt"), &sc, &inv.vocab, &s_store).map_err(CliError::config)?;
            write_distill_outputs(out, "general", &outcome)?;
            print!("{}", size_lines(&tc, &sc));
        }
        Stage::Task => {
            let path = teacher.ok_or_else(|| CliError::config("--teacher (a finetuned model) is required for the task stage"))?;
            let t_model = match load_checkpoint(path).map_err(CliError::config)? {
                Checkpoint::Model(m) => m,
                Checkpoint::Encoder { .. } => return Err(CliError::config(format!("{}: task distillation needs a finetuned model, not a bare encoder", path.display()))),
            };
            if t_model.config().encoder != tc || t_model.vocab() != &inv.vocab {
                return Err(CliError::config(format!("{}: teacher differs from the configuration or lexicon", path.display())));
            }
            let s_path = student.ok_or_else(|| CliError::config("--student (the general-stage encoder) is required for the task stage"))?;
            let mut s_store = load_encoder(s_path, sc, &inv.vocab)?;
            let s_enc = Encoder::attach(sc, &s_store, ENCODER_PREFIX).map_err(CliError::config)?;
            let splits = TaskSplits::load(&cfg.data_dir, &inv)?;
            let text: Vec<Vec<usize>> = splits.poly_train.iter().chain(&splits.prosody_train).map(|e| e.tokens.clone()).collect();
            let finetuned = t_model.encoder_store();
            let outcome = task_distillation((t_model.encoder(), &finetuned), (&s_enc, &mut s_store), &text, &cfg.task)
                .map_err(|e| CliError::training(e.in_stage("task")))?;
            save_encoder(&out.join("student.task.ckpt"), &sc, &inv.vocab, &s_store).map_err(CliError::config)?;
            write_distill_outputs(out, "task", &outcome)?;
            print!("{}", size_lines(&tc, &sc));
        }
        Stage::Full => {
            let pipeline = cfg.pipeline(inv.vocab.size()).expect("student section checked above");
            for t in [&pipeline.teacher_train, &pipeline.student_train] {
                t.validate().map_err(CliError::config)?;
            }
            let pretrained = teacher.map(|p| load_encoder(p, tc, &inv.vocab)).transpose()?;
            let unlabeled = load_unlabeled(&cfg.data_dir, &inv.vocab)?;
            let splits = TaskSplits::load(&cfg.data_dir, &inv)?;
            let data = PipelineData { vocab: &inv.vocab, classes: &inv.classes, unlabeled: &unlabeled, task: splits.data() };
            let start = Instant::now();
            let clock = || start.elapsed().as_secs_f64();
            let reuse = unifront_core::pipeline::Reuse { pretrained, teacher: None };
            let o = run_pipeline(data, &pipeline, reuse, &clock).map_err(CliError::training)?;
            let save_enc = |name: &str, c: &EncoderConfig, s: &ParamStore| save_encoder(&out.join(name), c, &inv.vocab, s).map_err(CliError::config);
            save_enc("teacher.pretrained.ckpt", &tc, &o.pretrained_teacher)?;
            save_enc("student.general.ckpt", &sc, &o.general_student)?;
            save_enc("student.task.ckpt", &sc, &o.task_student)?;
            save_model(&out.join("teacher.ckpt"), &o.teacher).map_err(CliError::config)?;
            save_model(&out.join("student.ckpt"), &o.student).map_err(CliError::config)?;
            write_file(&out.join("teacher.metrics.tsv"), metrics_tsv(&o.teacher_log))?;
            write_file(&out.join("student.metrics.tsv"), metrics_tsv(&o.student_log))?;
            let block = pipeline_block(&o.report);
            write_file(&out.join("report.txt"), &block)?;
            print!("{block}");
            eprint!("{}", pipeline_timings(&o.report));
        }
    }
    Ok(())
}

fn eval_cmd(checkpoint: &Path, corpora: &[PathBuf], lexicon: &Path, restrict: bool) -> CliResult {
    let model = load_model(checkpoint).map_err(CliError::data)?;
    let lex = read_lexicon(lexicon).map_err(CliError::data)?;
    model.classes().covers(&lex).map_err(CliError::data)?;
    let mut poly = Vec::new();
    let mut prosody = Vec::new();
    for path in corpora {
        let records = read_corpus(path).map_err(CliError::data)?;
        let examples = examples_from_records(&records, model.vocab(), model.classes())
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        for ex in examples {
            match ex.task() {
                Task::Poly => poly.push(ex),
                Task::Prosody => prosody.push(ex),
            }
        }
    }
    let report = evaluate(&model, &poly, &prosody, restrict).map_err(CliError::data)?;
    print!("{}", eval_block(&report));
    println!();
    print!("{}", eval_table(&report));
    Ok(())
}

fn infer_cmd(checkpoint: &Path, lexicon: &Path, text: Option<String>, file: Option<&Path>, format: OutputFormat) -> CliResult {
    let model = load_model(checkpoint).map_err(CliError::data)?;
    let lex = read_lexicon(lexicon).map_err(CliError::data)?;
    let lines: Vec<(Option<usize>, String)> = match (text, file) {
        (Some(t), _) => vec![(None, t)],
        (None, Some(f)) => {
            let content = fs::read_to_string(f).map_err(|e| CliError::data(FormatError::Io { path: f.into(), source: e }))?;
            content
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| (Some(i + 1), l.to_string()))
                .collect()
        }
        (None, None) => return Err(CliError::config("one of --text or --file is required")),
    };
    let mut out = String::new();
    for (line_no, sentence) in &lines {
        let a = annotate(&model, &lex, sentence).map_err(|e| match line_no {
            Some(n) => CliError::data(format!("line {n}: {e}")),
            None => CliError::data(e),
        })?;
        match format {
            OutputFormat::Human => out.push_str(&a.render_human()),
            // sentences separated by a blank line
            OutputFormat::Machine => {
                out.push_str(&a.render_machine());
                out.push('\n');
            }
        }
        if !out.ends_with('\n') {
            out.push('\n');
        }
    }
    print!("{out}");
    Ok(())
}
