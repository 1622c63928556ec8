use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use unifront::report::parse_metrics_tsv;

const TINY: &str = "\
seed = 3
teacher.layers = 2
teacher.hidden = 16
teacher.heads = 2
teacher.ffn = 32
student.layers = 1
student.hidden = 8
student.heads = 2
student.ffn = 16
train.steps = 50
train.eval_every = 10
train.warmup_steps = 0
train.lr = 0.003
student_train.steps = 20
student_train.eval_every = 10
distill.general.steps = 10
distill.task.steps = 10
pretrain.steps = 5
";

fn unifront(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unifront"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A temp dir holding `tiny.cfg` and a small corpus in `data/`.
fn workspace(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.cfg"), format!("{TINY}{extra}")).unwrap();
    for (task, seed) in [("poly", "1"), ("prosody", "2"), ("raw", "3")] {
        ok(&unifront(dir.path(), &["gen-corpus", "--spec", "tiny.cfg", "--out", "data", "--n", "60", "--task", task, "--seed", seed]));
    }
    dir
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_corpus_splits_nine_to_one_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for out in ["a", "b"] {
        ok(&unifront(p, &["gen-corpus", "--out", out, "--n", "10", "--task", "poly", "--seed", "4"]));
    }
    assert_eq!(lines(&p.join("a/poly.train.txt")), 9);
    assert_eq!(lines(&p.join("a/poly.test.txt")), 1);
    for f in ["poly.train.txt", "poly.test.txt", "lexicon.txt", "classes.txt"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap(), "{f}");
    }
    ok(&unifront(p, &["gen-corpus", "--out", "c", "--n", "10", "--task", "poly", "--seed", "5"]));
    assert_ne!(fs::read(p.join("a/poly.train.txt")).unwrap(), fs::read(p.join("c/poly.train.txt")).unwrap());
}

#[test]
fn gen_corpus_without_polyphones_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m0.cfg"), "lang.polyphones = 0\n").unwrap();
    let out = unifront(dir.path(), &["gen-corpus", "--spec", "m0.cfg", "--out", "x", "--n", "5", "--task", "poly"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("polyphone"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = workspace("");
    fs::write(dir.path().join("bad.cfg"), "train.stpes = 3\n").unwrap();
    let out = unifront(dir.path(), &["train", "--config", "bad.cfg", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.cfg:1"), "{}", stderr(&out));
}

#[test]
fn student_training_needs_a_student_section() {
    let dir = workspace("");
    fs::write(dir.path().join("nostudent.cfg"), "train.steps = 5\n").unwrap();
    let out = unifront(dir.path(), &["train", "--config", "nostudent.cfg", "--encoder", "student", "--out", "s.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("s.ckpt").exists());
    let out = unifront(dir.path(), &["distill", "--config", "nostudent.cfg", "--stage", "full", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_run_is_deterministic_and_reduces_loss() {
    let dir = workspace("");
    let p = dir.path();
    for out in ["a.ckpt", "b.ckpt"] {
        ok(&unifront(p, &["train", "--config", "tiny.cfg", "--out", out]));
    }
    let log = fs::read_to_string(p.join("a.ckpt.metrics.tsv")).unwrap();
    assert_eq!(log, fs::read_to_string(p.join("b.ckpt.metrics.tsv")).unwrap());
    assert_eq!(fs::read(p.join("a.ckpt")).unwrap(), fs::read(p.join("b.ckpt")).unwrap());
    assert_eq!(fs::read(p.join("a.ckpt.config")).unwrap(), fs::read(p.join("b.ckpt.config")).unwrap());

    let rows = parse_metrics_tsv(&log).unwrap();
    assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), [10, 20, 30, 40, 50]);
    let total = |i: usize| rows[i].l_poly + rows[i].l_prosody;
    assert!(total(4) < total(0), "loss {} -> {}", total(0), total(4));
}

#[test]
fn eval_prints_a_block_and_a_table() {
    let dir = workspace("");
    let p = dir.path();
    ok(&unifront(p, &["train", "--config", "tiny.cfg", "--out", "m.ckpt"]));
    let out = ok(&unifront(
        p,
        &["eval", "--checkpoint", "m.ckpt", "--corpus", "data/poly.test.txt", "--corpus", "data/prosody.test.txt", "--lexicon", "data/lexicon.txt"],
    ));
    let block = unifront::report::parse_block(out.split("\n\n").next().unwrap());
    let keys: Vec<&str> = block.iter().map(|(k, _)| k.as_str()).collect();
    for k in ["poly.acc", "poly.sent_acc", "prosody.pw.f1", "prosody.pph.f1", "prosody.iph.f1", "score"] {
        assert!(keys.contains(&k), "missing {k} in\n{out}");
    }
    assert!(out.contains("SENT ACC") && out.contains("IPH"));

    let out = unifront(p, &["eval", "--checkpoint", "missing.ckpt", "--corpus", "data/poly.test.txt", "--lexicon", "data/lexicon.txt"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn infer_formats_and_lexicon_misses() {
    let dir = workspace("");
    let p = dir.path();
    ok(&unifront(p, &["train", "--config", "tiny.cfg", "--out", "m.ckpt"]));
    let sentence: String = fs::read_to_string(p.join("data/prosody.test.txt")).unwrap().lines().next().unwrap().split('\t').nth(1).unwrap().into();
    let n = sentence.chars().count();

    let human = ok(&unifront(p, &["infer", "--checkpoint", "m.ckpt", "--lexicon", "data/lexicon.txt", "--text", &sentence]));
    let human_lines: Vec<&str> = human.lines().collect();
    assert_eq!(human_lines.len(), 2);
    assert_eq!(human_lines[1].split(' ').count(), n);

    let machine = ok(&unifront(p, &["infer", "--checkpoint", "m.ckpt", "--lexicon", "data/lexicon.txt", "--text", &sentence, "--format", "machine"]));
    let rows: Vec<&str> = machine.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), n);
    assert!(rows.iter().all(|r| r.split('\t').count() == 3));

    fs::write(p.join("in.txt"), format!("{sentence}\n\n{sentence}\n")).unwrap();
    let two = ok(&unifront(p, &["infer", "--checkpoint", "m.ckpt", "--lexicon", "data/lexicon.txt", "--file", "in.txt"]));
    assert_eq!(two, format!("{human}{human}"));

    let out = unifront(p, &["infer", "--checkpoint", "m.ckpt", "--lexicon", "data/lexicon.txt", "--text", "x丁y"]);
    assert_eq!(out.status.code(), Some(4));
    let err = stderr(&out);
    assert!(err.contains("'x' at 0") && err.contains("'y' at 2"), "{err}");
}

#[test]
fn stepwise_commands_reproduce_the_full_run() {
    let dir = workspace("");
    let p = dir.path();
    let full = ok(&unifront(p, &["distill", "--config", "tiny.cfg", "--stage", "full", "--out", "full"]));
    assert!(full.contains("size_ratio=0.250000"), "{full}");

    ok(&unifront(p, &["pretrain", "--config", "tiny.cfg", "--out", "steps/teacher.pretrained.ckpt"]));
    ok(&unifront(p, &["distill", "--config", "tiny.cfg", "--stage", "general", "--teacher", "steps/teacher.pretrained.ckpt", "--out", "steps"]));
    ok(&unifront(p, &["train", "--config", "tiny.cfg", "--init", "steps/teacher.pretrained.ckpt", "--out", "steps/teacher.ckpt"]));
    ok(&unifront(
        p,
        &["distill", "--config", "tiny.cfg", "--stage", "task", "--teacher", "steps/teacher.ckpt", "--student", "steps/student.general.ckpt", "--out", "steps"],
    ));
    ok(&unifront(p, &["train", "--config", "tiny.cfg", "--encoder", "student", "--init", "steps/student.task.ckpt", "--out", "steps/student.ckpt"]));

    for f in ["teacher.pretrained.ckpt", "student.general.ckpt", "teacher.ckpt", "student.task.ckpt", "student.ckpt"] {
        assert_eq!(fs::read(p.join("full").join(f)).unwrap(), fs::read(p.join("steps").join(f)).unwrap(), "{f}");
    }
    assert_eq!(
        fs::read(p.join("full/student.metrics.tsv")).unwrap(),
        fs::read(p.join("steps/student.ckpt.metrics.tsv")).unwrap()
    );
}

#[test]
fn full_run_is_byte_identical_when_repeated() {
    let dir = workspace("");
    let p = dir.path();
    ok(&unifront(p, &["distill", "--config", "tiny.cfg", "--stage", "full", "--out", "a"]));
    ok(&unifront(p, &["distill", "--config", "tiny.cfg", "--stage", "full", "--out", "b"]));
    for f in fs::read_dir(p.join("a")).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(fs::read(p.join("a").join(&name)).unwrap(), fs::read(p.join("b").join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn diverging_stage_exits_3_and_names_the_stage() {
    let dir = workspace("student_train.lr = 1e200\n");
    let out = unifront(dir.path(), &["distill", "--config", "tiny.cfg", "--stage", "full", "--out", "d"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("stage student"), "{}", stderr(&out));
}

#[test]
fn task_stage_rejects_a_bare_encoder_as_teacher() {
    let dir = workspace("");
    let p = dir.path();
    ok(&unifront(p, &["pretrain", "--config", "tiny.cfg", "--out", "t.ckpt"]));
    ok(&unifront(p, &["distill", "--config", "tiny.cfg", "--stage", "general", "--teacher", "t.ckpt", "--out", "d"]));
    let out = unifront(p, &["distill", "--config", "tiny.cfg", "--stage", "task", "--teacher", "t.ckpt", "--student", "d/student.general.ckpt", "--out", "d"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
