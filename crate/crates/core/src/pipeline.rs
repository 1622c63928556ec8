//! The full compression workflow.
//!
//! 0. pretrain the teacher encoder on unlabelled text;
//! 1. general distillation of a fresh student from that teacher;
//! 2. multi-task finetuning of the teacher;
//! 3. task distillation from the finetuned teacher on the task text;
//! 4. multi-task finetuning of the student.

use alloc::vec::Vec;

use crate::corpus::TrainingExample;
use crate::distill::{general_distillation, task_distillation, DistillConfig};
use crate::encoder::{count_params, mix_seed, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::lexicon::PronClassMap;
use crate::model::{FrontendModel, ModelConfig, ENCODER_PREFIX};
use crate::multitask::{train, MetricsRow, TaskData, TrainConfig};
use crate::params::ParamStore;
use crate::pretrain::{pretrain_encoder, PretrainConfig};
use crate::vocab::Vocab;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub pretrain: PretrainConfig,
    pub general: DistillConfig,
    pub teacher_train: TrainConfig,
    pub task: DistillConfig,
    pub student_train: TrainConfig,
    /// Seeds the fresh teacher and student parameters.
    pub seed: u64,
}

/// Everything the stages read.
#[derive(Clone, Copy, Debug)]
pub struct PipelineData<'a> {
    pub vocab: &'a Vocab,
    pub classes: &'a PronClassMap,
    pub unlabeled: &'a [Vec<usize>],
    pub task: TaskData<'a>,
}

impl PipelineData<'_> {
    /// Token sequences of both training corpora, polyphone corpus first.
    pub fn task_text(&self) -> Vec<Vec<usize>> {
        self.task
            .poly_train
            .iter()
            .chain(self.task.prosody_train)
            .map(|e: &TrainingExample| e.tokens.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub name: &'static str,
    pub steps: usize,
    /// Mean loss over the final steps (training stages: the last logged losses summed).
    pub final_loss: f64,
    /// Best validation score for finetuning stages.
    pub validation: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
    pub teacher_encoder_params: usize,
    pub student_encoder_params: usize,
    pub teacher_params: usize,
    pub student_params: usize,
}

impl PipelineReport {
    /// Student-to-teacher encoder size.
    pub fn size_ratio(&self) -> f64 {
        self.student_encoder_params as f64 / self.teacher_encoder_params as f64
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub pretrained_teacher: ParamStore,
    pub general_student: ParamStore,
    pub task_student: ParamStore,
    pub teacher: FrontendModel,
    pub student: FrontendModel,
    pub teacher_log: Vec<MetricsRow>,
    pub student_log: Vec<MetricsRow>,
    pub report: PipelineReport,
}

/// Mean loss over the last 50 entries.
pub fn tail_mean(losses: &[f64]) -> f64 {
    let n = losses.len().min(50);
    if n == 0 {
        return 0.0;
    }
    losses[losses.len() - n..].iter().sum::<f64>() / n as f64
}

fn train_stage(
    name: &'static str,
    model: &mut FrontendModel,
    data: TaskData<'_>,
    cfg: &TrainConfig,
    clock: &dyn Fn() -> f64,
    log: &mut Vec<MetricsRow>,
) -> Result<StageReport> {
    let t0 = clock();
    let out = train(model, data, cfg, |_| {}).map_err(|e| e.in_stage(name))?;
    let last = out.log.last().copied();
    log.extend(out.log);
    Ok(StageReport {
        name,
        steps: cfg.steps,
        final_loss: last.map_or(0.0, |r| r.l_poly * cfg.alpha_poly + r.l_prosody * cfg.alpha_prosody),
        validation: Some(out.best_score),
        seconds: clock() - t0,
    })
}

/// Stage 0: a freshly initialised teacher encoder trained on masked-character prediction.
pub fn pretrain_teacher(config: EncoderConfig, unlabeled: &[Vec<usize>], cfg: &PretrainConfig, seed: u64) -> Result<(ParamStore, Vec<f64>)> {
    let mut store = ParamStore::new();
    let enc = Encoder::init(config, &mut store, ENCODER_PREFIX, mix_seed(&[seed, 1]))?;
    let out = pretrain_encoder(&enc, &mut store, unlabeled, cfg)?;
    Ok((store, out.losses))
}

/// The student encoder before any distillation.
pub fn init_student(config: EncoderConfig, seed: u64) -> Result<(Encoder, ParamStore)> {
    let mut store = ParamStore::new();
    let enc = Encoder::init(config, &mut store, ENCODER_PREFIX, mix_seed(&[seed, 2]))?;
    Ok((enc, store))
}

/// Which side of the workflow a finetuned model belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Teacher,
    Student,
}

/// A model ready for multi-task finetuning on top of `encoder` (fresh heads).
pub fn finetune_model(role: Role, config: ModelConfig, vocab: &Vocab, classes: &PronClassMap, encoder: &ParamStore, seed: u64) -> Result<FrontendModel> {
    let tag = match role {
        Role::Teacher => 3,
        Role::Student => 4,
    };
    FrontendModel::with_encoder(config, vocab.clone(), classes.clone(), encoder, mix_seed(&[seed, tag]))
}

/// Results of earlier runs to start from instead of recomputing them.
#[derive(Clone, Debug, Default)]
pub struct Reuse {
    /// Teacher encoder for stage 1; skips stage 0.
    pub pretrained: Option<ParamStore>,
    /// Finetuned teacher for stage 3; skips stage 2.
    pub teacher: Option<FrontendModel>,
}

/// Runs stages 0–4, skipping those whose results `reuse` supplies.
///
/// `clock` returns seconds on any monotone scale; it only feeds the report.
pub fn run_pipeline(data: PipelineData<'_>, cfg: &PipelineConfig, reuse: Reuse, clock: &dyn Fn() -> f64) -> Result<PipelineOutcome> {
    let (tc, sc) = (cfg.teacher.encoder, cfg.student.encoder);
    let mut stages = Vec::new();

    let t_store = match reuse.pretrained {
        Some(p) => {
            Encoder::attach(tc, &p, ENCODER_PREFIX).map_err(|e| e.in_stage("pretrain"))?;
            p
        }
        None => {
            let t0 = clock();
            let (store, losses) = pretrain_teacher(tc, data.unlabeled, &cfg.pretrain, cfg.seed).map_err(|e| e.in_stage("pretrain"))?;
            stages.push(StageReport {
                name: "pretrain",
                steps: cfg.pretrain.steps,
                final_loss: tail_mean(&losses),
                validation: None,
                seconds: clock() - t0,
            });
            store
        }
    };
    let t_enc = Encoder::attach(tc, &t_store, ENCODER_PREFIX).map_err(|e| e.in_stage("pretrain"))?;

    let (s_enc, mut s_store) = init_student(sc, cfg.seed).map_err(|e| e.in_stage("general"))?;
    let t0 = clock();
    let out = general_distillation((&t_enc, &t_store), (&s_enc, &mut s_store), data.unlabeled, &cfg.general)
        .map_err(|e| e.in_stage("general"))?;
    stages.push(StageReport {
        name: "general",
        steps: cfg.general.steps,
        final_loss: tail_mean(&out.losses),
        validation: None,
        seconds: clock() - t0,
    });
    let general_student = s_store.clone();

    let mut teacher_log = Vec::new();
    let teacher = match reuse.teacher {
        Some(t) => {
            if t.config() != &cfg.teacher {
                return Err(Error::Config("reused teacher does not match the teacher configuration".into()).in_stage("teacher"));
            }
            t
        }
        None => {
            let mut t = finetune_model(Role::Teacher, cfg.teacher, data.vocab, data.classes, &t_store, cfg.seed).map_err(|e| e.in_stage("teacher"))?;
            stages.push(train_stage("teacher", &mut t, data.task, &cfg.teacher_train, clock, &mut teacher_log)?);
            t
        }
    };

    let t0 = clock();
    let finetuned = teacher.encoder_store();
    let task_text = data.task_text();
    let out = task_distillation((teacher.encoder(), &finetuned), (&s_enc, &mut s_store), &task_text, &cfg.task)
        .map_err(|e| e.in_stage("task"))?;
    stages.push(StageReport {
        name: "task",
        steps: cfg.task.steps,
        final_loss: tail_mean(&out.losses),
        validation: None,
        seconds: clock() - t0,
    });

    let mut student_log = Vec::new();
    let mut student = finetune_model(Role::Student, cfg.student, data.vocab, data.classes, &s_store, cfg.seed).map_err(|e| e.in_stage("student"))?;
    stages.push(train_stage("student", &mut student, data.task, &cfg.student_train, clock, &mut student_log)?);

    let report = PipelineReport {
        stages,
        teacher_encoder_params: count_params(&tc),
        student_encoder_params: count_params(&sc),
        teacher_params: teacher.num_params(),
        student_params: student.num_params(),
    };
    Ok(PipelineOutcome {
        pretrained_teacher: t_store,
        general_student,
        task_student: s_store,
        teacher,
        student,
        teacher_log,
        student_log,
        report,
    })
}

/// A student of the same shape trained on the tasks alone, for comparison.
pub fn train_from_scratch(
    data: PipelineData<'_>,
    config: ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(FrontendModel, Vec<MetricsRow>)> {
    let mut m = FrontendModel::init(config, data.vocab.clone(), data.classes.clone(), mix_seed(&[seed, 5]))?;
    let out = train(&mut m, data.task, train_cfg, |_| {})?;
    Ok((m, out.log))
}

/// Final validation report of a model on the task validation sets.
pub fn validation_report(model: &FrontendModel, data: TaskData<'_>, restrict: bool) -> Result<EvalReport> {
    crate::eval::evaluate(model, data.poly_val, data.prosody_val, restrict)
}
