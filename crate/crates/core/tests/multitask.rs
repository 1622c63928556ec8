use unifront_core::corpus::{examples_from_records, split_train_test, Task, TrainingExample};
use unifront_core::encoder::{EncoderConfig, Mode};
use unifront_core::heads::{HeadConfig, HeadKind};
use unifront_core::model::{FrontendModel, ModelConfig, ENCODER_PREFIX, POLY_PREFIX, PROSODY_PREFIX};
use unifront_core::multitask::{batch_loss, default_mixing_ratio, poly_share, train, train_step, MixedBatches, TaskData, TrainConfig};
use unifront_core::optim::AdamState;
use unifront_core::synth::{SyntheticLangSpec, SyntheticLanguage};
use unifront_core::Tape;

struct Fixture {
    lang: SyntheticLanguage,
    poly: Vec<TrainingExample>,
    prosody: Vec<TrainingExample>,
}

fn fixture(n: usize) -> Fixture {
    let lang = SyntheticLanguage::new(SyntheticLangSpec::default()).unwrap();
    let (vocab, classes) = (lang.vocab(), lang.class_map());
    let poly = examples_from_records(&lang.generate(n, Task::Poly, 1).unwrap(), &vocab, &classes).unwrap();
    let prosody = examples_from_records(&lang.generate(n, Task::Prosody, 2).unwrap(), &vocab, &classes).unwrap();
    Fixture { lang, poly, prosody }
}

fn model(f: &Fixture, crf: bool, kind: HeadKind) -> FrontendModel {
    let vocab = f.lang.vocab();
    let enc = EncoderConfig { num_layers: 2, hidden_size: 16, num_heads: 2, ffn_size: 32, vocab_size: vocab.size(), max_seq_len: 64, dropout_rate: 0.1 };
    let head = HeadConfig { kind, mlp_hidden: 12, lstm_hidden: 6 };
    let cfg = ModelConfig { encoder: enc, poly_head: head, prosody_head: head, prosody_crf: crf };
    FrontendModel::init(cfg, vocab, f.lang.class_map(), 3).unwrap()
}

/// Gradients of the batch loss, by parameter name.
fn grads(m: &FrontendModel, batch: &[&TrainingExample], a1: f64, a2: f64) -> Vec<(String, Vec<f64>)> {
    let mut tape = Tape::new();
    let loss = batch_loss(m, &mut tape, batch, Mode::Train { seed: 1, step: 1 }, a1, a2).unwrap();
    let g = tape.backward(loss.total).unwrap().for_bound(&loss.params);
    m.store().iter().zip(g).map(|((n, _), t)| (n.to_string(), t.into_data())).collect()
}

#[test]
fn absent_task_heads_get_exactly_zero_gradient() {
    let f = fixture(8);
    for (crf, kind) in [(false, HeadKind::Mlp), (true, HeadKind::Blstm)] {
        let m = model(&f, crf, kind);
        let prosody_only: Vec<&TrainingExample> = f.prosody.iter().take(4).collect();
        let poly_only: Vec<&TrainingExample> = f.poly.iter().take(4).collect();
        for (name, g) in grads(&m, &prosody_only, 1.0, 1.0) {
            if name.starts_with(POLY_PREFIX) {
                assert!(g.iter().all(|&x| x == 0.0), "{name} moved on a prosody-only batch");
            }
            if name.starts_with(PROSODY_PREFIX) {
                assert!(g.iter().any(|&x| x != 0.0), "{name} untouched on a prosody batch");
            }
        }
        for (name, g) in grads(&m, &poly_only, 1.0, 1.0) {
            if name.starts_with(PROSODY_PREFIX) {
                assert!(g.iter().all(|&x| x == 0.0), "{name} moved on a polyphone-only batch");
            }
        }
    }
}

#[test]
fn joint_loss_is_the_weighted_sum() {
    let f = fixture(8);
    let m = model(&f, true, HeadKind::Mlp);
    let batch: Vec<&TrainingExample> = f.poly.iter().take(3).chain(f.prosody.iter().take(5)).collect();
    for (a1, a2) in [(1.0, 1.0), (0.3, 2.5), (0.0, 1.0)] {
        let mut tape = Tape::new();
        let l = batch_loss(&m, &mut tape, &batch, Mode::Eval, a1, a2).unwrap();
        let (p, r, t) = (tape.value(l.poly).item(), tape.value(l.prosody).item(), tape.value(l.total).item());
        assert!(p > 0.0 && r > 0.0);
        assert_eq!(t, a1 * p + a2 * r);
    }
}

#[test]
fn gradients_scale_linearly_with_task_weights() {
    let f = fixture(8);
    let m = model(&f, false, HeadKind::Mlp);
    let batch: Vec<&TrainingExample> = f.poly.iter().take(3).chain(f.prosody.iter().take(3)).collect();
    let g_poly = grads(&m, &batch, 1.0, 0.0);
    let g_pros = grads(&m, &batch, 0.0, 1.0);
    let g_mix = grads(&m, &batch, 2.0, 0.5);
    for ((n, a), ((_, b), (_, c))) in g_poly.iter().zip(g_pros.iter().zip(&g_mix)) {
        for ((x, y), z) in a.iter().zip(b).zip(c) {
            let want = 2.0 * x + 0.5 * y;
            assert!((z - want).abs() <= 1e-12 * (1.0 + want.abs()), "{n}: {z} vs {want}");
        }
    }
}

#[test]
fn zero_task_weights_leave_parameters_unchanged() {
    let f = fixture(8);
    let mut m = model(&f, false, HeadKind::Mlp);
    let before = m.store().clone();
    let cfg = TrainConfig { alpha_poly: 0.0, alpha_prosody: 0.0, warmup_steps: 0, ..TrainConfig::default() };
    let mut adam = AdamState::new(m.store());
    let batch: Vec<&TrainingExample> = f.poly.iter().take(2).chain(f.prosody.iter().take(2)).collect();
    for step in 1..=3 {
        let r = train_step(&mut m, &mut adam, &batch, &cfg, step).unwrap();
        assert_eq!(r.grad_norm, 0.0);
    }
    assert_eq!(m.store(), &before);

    // with only the prosody weight, the polyphone head stays put
    let cfg = TrainConfig { alpha_poly: 0.0, warmup_steps: 0, ..TrainConfig::default() };
    train_step(&mut m, &mut adam, &batch, &cfg, 4).unwrap();
    for ((name, a), (_, b)) in m.store().iter().zip(before.iter()) {
        if name.starts_with(POLY_PREFIX) {
            assert_eq!(a, b, "{name}");
        } else if name.starts_with(ENCODER_PREFIX) && name.ends_with("tok_emb") {
            assert_ne!(a, b, "{name}");
        }
    }
}

#[test]
fn batches_mix_both_tasks_at_the_configured_ratio() {
    let f = fixture(30);
    let poly = &f.poly[..20];
    let prosody = &f.prosody[..10];
    assert_eq!(default_mixing_ratio(20, 10), 2.0 / 3.0);
    assert_eq!(default_mixing_ratio(1, 100), 0.25);
    assert_eq!(poly_share(8, 0.99), 7);
    assert_eq!(poly_share(8, 0.01), 1);

    let mut it = MixedBatches::new(poly, prosody, 6, None, 5).unwrap();
    assert_eq!(it.per_batch(), (4, 2));
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..5 {
        let b = it.next().unwrap();
        assert_eq!(b.iter().filter(|e| e.task() == Task::Poly).count(), 4);
        for e in b.iter().filter(|e| e.task() == Task::Poly) {
            seen.insert(e.tokens.clone());
        }
    }
    // five batches of four cover the twenty polyphone sentences exactly once
    assert_eq!(seen.len(), 20);
    assert_eq!(it.epoch(), 0);
    it.next();
    assert_eq!(it.epoch(), 1);

    let again: Vec<Vec<Vec<usize>>> = MixedBatches::new(poly, prosody, 6, None, 5)
        .unwrap()
        .take(7)
        .map(|b| b.iter().map(|e| e.tokens.clone()).collect())
        .collect();
    let once: Vec<Vec<Vec<usize>>> = MixedBatches::new(poly, prosody, 6, None, 5)
        .unwrap()
        .take(7)
        .map(|b| b.iter().map(|e| e.tokens.clone()).collect())
        .collect();
    assert_eq!(again, once);
    assert!(MixedBatches::new(poly, prosody, 1, None, 5).is_err());
    assert!(MixedBatches::new(poly, &[], 4, None, 5).is_err());
}

#[test]
fn short_training_lowers_the_loss_and_is_reproducible() {
    let f = fixture(120);
    let (poly_train, poly_val) = split_train_test(&f.poly);
    let (pros_train, pros_val) = split_train_test(&f.prosody);
    let data = TaskData { poly_train: &poly_train, prosody_train: &pros_train, poly_val: &poly_val, prosody_val: &pros_val };
    let cfg = TrainConfig { steps: 60, batch_size: 8, warmup_steps: 0, eval_every: 20, ..TrainConfig::default() };
    let mut a = model(&f, false, HeadKind::Mlp);
    let out = train(&mut a, data, &cfg, |_| {}).unwrap();
    let mean = |r: std::ops::Range<usize>| out.steps[r.clone()].iter().map(|s| s.loss).sum::<f64>() / r.len() as f64;
    assert!(mean(50..60) < mean(0..10), "{} -> {}", mean(0..10), mean(50..60));
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().any(|r| r.step == out.best_step));

    let mut b = model(&f, false, HeadKind::Mlp);
    let again = train(&mut b, data, &cfg, |_| {}).unwrap();
    assert_eq!(again.log, out.log);
    assert_eq!(a.store(), b.store());
}
