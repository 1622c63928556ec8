use proptest::collection::vec;
use proptest::prelude::*;

use unifront_core::encoder::{Encoder, EncoderConfig, Mode};
use unifront_core::heads::crf::{log_partition, path_score, viterbi};
use unifront_core::heads::{argmax, predict_polyphone};
use unifront_core::model::{FrontendModel, ModelConfig, ENCODER_PREFIX};
use unifront_core::prosody::{decode_prosody, encode_prosody, ProsodyLabel};
use unifront_core::synth::{SyntheticLangSpec, SyntheticLanguage};
use unifront_core::vocab::TokenBatch;
use unifront_core::{ParamStore, Tape, Tensor};

fn label() -> impl Strategy<Value = ProsodyLabel> {
    (0usize..4).prop_map(|i| ProsodyLabel::from_index(i).unwrap())
}

/// Every path of length `t` over `k` states, in lexicographic order.
fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

fn crf_case() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=5).prop_flat_map(|t| {
        let k = 4;
        (Just(t), vec(-3.0..3.0f64, t * k), vec(-3.0..3.0f64, k * k), vec(-2.0..2.0f64, k), vec(-2.0..2.0f64, k))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, data in vec(-800.0..800.0f64, 35)) {
        let x = Tensor::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax(v).unwrap();
        let out = tape.value(s);
        for r in 0..rows {
            let row = out.row(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn restricted_prediction_ignores_monotone_rescaling(
        scores in vec(-5.0..5.0f64, 2..8),
        pick in vec(any::<bool>(), 8),
        a in 0.1..10.0f64,
        b in -3.0..3.0f64,
    ) {
        let allowed: Vec<usize> = (0..scores.len()).filter(|&i| pick[i]).collect();
        prop_assume!(!allowed.is_empty());
        let got = predict_polyphone(&scores, Some(&allowed)).unwrap();
        prop_assert!(allowed.contains(&got));
        prop_assert!(allowed.iter().all(|&c| scores[c] <= scores[got]));
        let rescaled: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert_eq!(predict_polyphone(&rescaled, Some(&allowed)).unwrap(), got);
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        prop_assert_eq!(predict_polyphone(&exp, Some(&allowed)).unwrap(), got);
        prop_assert_eq!(predict_polyphone(&scores, None).unwrap(), argmax(&scores));
    }

    #[test]
    fn boundaries_nest_and_round_trip(labels in vec(label(), 0..40)) {
        let b = decode_prosody(&labels);
        prop_assert!(b.iph.iter().all(|p| b.pph.contains(p)));
        prop_assert!(b.pph.iter().all(|p| b.pw.contains(p)));
        prop_assert_eq!(encode_prosody(&b, labels.len()), labels);
    }

    #[test]
    fn crf_matches_enumeration((t, em, tr, st, en) in crf_case()) {
        let k = 4;
        let paths = all_paths(t, k);
        let scores: Vec<f64> = paths.iter().map(|p| path_score(&em, &tr, &st, &en, k, p)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let brute = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        prop_assert!((log_partition(&em, &tr, &st, &en, k) - brute).abs() < 1e-9);
        let best = viterbi(&em, &tr, &st, &en, k);
        let best_score = path_score(&em, &tr, &st, &en, k, &best);
        prop_assert_eq!(best_score, max);
    }
}

fn toy_encoder(vocab: usize) -> EncoderConfig {
    EncoderConfig { num_layers: 2, hidden_size: 8, num_heads: 2, ffn_size: 16, vocab_size: vocab, max_seq_len: 32, dropout_rate: 0.1 }
}

#[test]
fn padding_does_not_change_a_sentence() {
    let cfg = toy_encoder(12);
    let mut store = ParamStore::new();
    let enc = Encoder::init(cfg, &mut store, ENCODER_PREFIX, 4).unwrap();
    let short = [3usize, 4, 5];
    let long = [6usize, 7, 8, 9, 10, 11, 3];

    let run = |seqs: &[&[usize]]| {
        let batch = TokenBatch::new(seqs).unwrap();
        let mut tape = Tape::new();
        let p = tape.bind(&store, false);
        let trace = enc.forward(&mut tape, &p, &batch, Mode::Eval).unwrap();
        let out = tape.value(trace.output()).clone();
        (batch.seq, out)
    };
    let (_, alone) = run(&[&short]);
    let (seq, padded) = run(&[&short, &long]);
    assert_eq!(seq, long.len());
    for r in 0..short.len() {
        for (a, b) in alone.row(r).iter().zip(padded.row(r)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn model_predictions_are_batch_independent() {
    let lang = SyntheticLanguage::new(SyntheticLangSpec::default()).unwrap();
    let vocab = lang.vocab();
    let config = ModelConfig { prosody_crf: true, ..ModelConfig::new(toy_encoder(vocab.size())) };
    let model = FrontendModel::init(config, vocab.clone(), lang.class_map(), 8).unwrap();
    let seqs: Vec<Vec<usize>> = lang.generate_raw(6, 2).iter().map(|s| s.chars().map(|c| vocab.id(c).unwrap()).collect()).collect();
    let refs: Vec<&[usize]> = seqs.iter().filter(|s| s.len() <= 32).map(|s| s.as_slice()).collect();
    let together = model.predict(&refs).unwrap();
    for (s, p) in refs.iter().zip(&together) {
        let alone = &model.predict(&[s]).unwrap()[0];
        assert_eq!(alone.prosody, p.prosody);
        assert!(alone.poly_scores.max_abs_diff(&p.poly_scores) < 1e-12);
    }
}

#[test]
fn dropout_depends_only_on_seed_and_step() {
    let cfg = toy_encoder(12);
    let mut store = ParamStore::new();
    let enc = Encoder::init(cfg, &mut store, ENCODER_PREFIX, 4).unwrap();
    let out = |mode| {
        let batch = TokenBatch::new(&[&[3usize, 4, 5, 6][..]]).unwrap();
        let mut tape = Tape::new();
        let p = tape.bind(&store, false);
        let trace = enc.forward(&mut tape, &p, &batch, mode).unwrap();
        tape.value(trace.output()).clone()
    };
    let a = out(Mode::Train { seed: 1, step: 5 });
    assert_eq!(a, out(Mode::Train { seed: 1, step: 5 }));
    assert_ne!(a, out(Mode::Train { seed: 1, step: 6 }));
    assert_ne!(a, out(Mode::Eval));
    assert_eq!(out(Mode::Eval), out(Mode::Eval));
}
