//! Text renderings of metrics logs, evaluation reports and pipeline reports.
//!
//! Machine-readable blocks are `key=value` lines; numbers use fixed precision
//! so identical runs give identical bytes.

use std::fmt::Write as _;

use unifront_core::eval::EvalReport;
use unifront_core::metrics::LevelScore;
use unifront_core::multitask::MetricsRow;
use unifront_core::pipeline::PipelineReport;

/// One tab-separated line per row, no header:
/// `step l_poly l_prosody val_acc val_pw_f1 val_pph_f1 val_iph_f1`.
pub fn metrics_tsv(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.step, r.l_poly, r.l_prosody, r.val_acc, r.val_pw_f1, r.val_pph_f1, r.val_iph_f1
        );
    }
    s
}

pub fn parse_metrics_tsv(text: &str) -> Option<Vec<MetricsRow>> {
    text.lines()
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return None;
            }
            let x = |i: usize| f[i].parse::<f64>().ok();
            Some(MetricsRow {
                step: f[0].parse().ok()?,
                l_poly: x(1)?,
                l_prosody: x(2)?,
                val_acc: x(3)?,
                val_pw_f1: x(4)?,
                val_pph_f1: x(5)?,
                val_iph_f1: x(6)?,
            })
        })
        .collect()
}

const LEVELS: [&str; 3] = ["pw", "pph", "iph"];

pub fn eval_block(r: &EvalReport) -> String {
    let mut s = String::new();
    if let Some(p) = &r.poly {
        let _ = writeln!(s, "poly.acc={:.4}", p.accuracy);
        let _ = writeln!(s, "poly.sent_acc={:.4}", p.sentence_accuracy);
        let _ = writeln!(s, "poly.polyphones={}", p.polyphones);
        let _ = writeln!(s, "poly.sentences={}", p.sentences);
    }
    if let Some(p) = &r.prosody {
        for (k, name) in LEVELS.iter().enumerate() {
            let l = p.level(k + 1);
            let _ = writeln!(s, "prosody.{name}.precision={:.4}", l.precision);
            let _ = writeln!(s, "prosody.{name}.recall={:.4}", l.recall);
            let _ = writeln!(s, "prosody.{name}.f1={:.4}", l.f1);
        }
    }
    if r.poly.is_some() && r.prosody.is_some() {
        let _ = writeln!(s, "score={:.4}", r.selection_score());
    }
    s
}

/// Reads back the values of a `key=value` block.
pub fn parse_block(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

pub fn eval_table(r: &EvalReport) -> String {
    let mut s = String::new();
    if let Some(p) = &r.poly {
        let _ = writeln!(s, "polyphones  ACC {:>7.2}  SENT ACC {:>7.2}  ({} polyphones, {} sentences)", p.accuracy, p.sentence_accuracy, p.polyphones, p.sentences);
    }
    if let Some(p) = &r.prosody {
        let _ = writeln!(s, "level   precision   recall       F1");
        for (k, name) in ["PW", "PPH", "IPH"].iter().enumerate() {
            let LevelScore { precision, recall, f1, .. } = *p.level(k + 1);
            let _ = writeln!(s, "{name:<6}  {precision:>9.2}  {recall:>7.2}  {f1:>7.2}");
        }
    }
    s
}

pub fn pipeline_block(r: &PipelineReport) -> String {
    let mut s = String::new();
    for st in &r.stages {
        let _ = writeln!(s, "stage.{}.steps={}", st.name, st.steps);
        let _ = writeln!(s, "stage.{}.final_loss={:.6}", st.name, st.final_loss);
        if let Some(v) = st.validation {
            let _ = writeln!(s, "stage.{}.validation={:.4}", st.name, v);
        }
    }
    let _ = writeln!(s, "teacher.encoder_params={}", r.teacher_encoder_params);
    let _ = writeln!(s, "student.encoder_params={}", r.student_encoder_params);
    let _ = writeln!(s, "teacher.params={}", r.teacher_params);
    let _ = writeln!(s, "student.params={}", r.student_params);
    let _ = writeln!(s, "size_ratio={:.6}", r.size_ratio());
    s
}

/// Stage timings, kept apart from the deterministic block.
pub fn pipeline_timings(r: &PipelineReport) -> String {
    let mut s = String::new();
    for st in &r.stages {
        let _ = writeln!(s, "{:<9} {:>6} steps  {:>8.1} s", st.name, st.steps, st.seconds);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip() {
        let rows = vec![MetricsRow { step: 5, l_poly: 0.5, l_prosody: 0.25, val_acc: 90.0, val_pw_f1: 100.0, val_pph_f1: 80.5, val_iph_f1: 0.0 }];
        let text = metrics_tsv(&rows);
        assert_eq!(text, "5\t0.500000\t0.250000\t90.000000\t100.000000\t80.500000\t0.000000\n");
        assert_eq!(parse_metrics_tsv(&text).unwrap(), rows);
    }
}
