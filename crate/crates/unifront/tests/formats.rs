use std::path::Path;

use unifront::checkpoint::{encoder_bytes, model_bytes, parse_checkpoint, Checkpoint};
use unifront::corpus_io::{format_classes, format_corpus, format_lexicon, parse_classes, parse_corpus, parse_lexicon, vocab_from_lexicon};
use unifront_core::corpus::Task;
use unifront_core::encoder::EncoderConfig;
use unifront_core::heads::{HeadConfig, HeadKind};
use unifront_core::model::{FrontendModel, ModelConfig};
use unifront_core::synth::{SyntheticLangSpec, SyntheticLanguage};

fn small_encoder(vocab: usize) -> EncoderConfig {
    EncoderConfig { num_layers: 2, hidden_size: 8, num_heads: 2, ffn_size: 16, vocab_size: vocab, max_seq_len: 64, dropout_rate: 0.1 }
}

fn language() -> SyntheticLanguage {
    SyntheticLanguage::new(SyntheticLangSpec::default()).unwrap()
}

#[test]
fn model_checkpoints_round_trip_exactly() {
    let lang = language();
    let vocab = lang.vocab();
    let blstm = HeadConfig { kind: HeadKind::Blstm, mlp_hidden: 6, lstm_hidden: 5 };
    let configs = [
        ModelConfig::new(small_encoder(vocab.size())),
        ModelConfig { poly_head: blstm, prosody_head: blstm, prosody_crf: true, ..ModelConfig::new(small_encoder(vocab.size())) },
    ];
    let sentence: Vec<usize> = lang.generate_raw(1, 9)[0].chars().map(|c| vocab.id(c).unwrap()).collect();
    for config in configs {
        let model = FrontendModel::init(config, vocab.clone(), lang.class_map(), 11).unwrap();
        let bytes = model_bytes(&model);
        let Checkpoint::Model(back) = parse_checkpoint(Path::new("m"), &bytes).unwrap() else {
            panic!("expected a model checkpoint");
        };
        assert_eq!(back.config(), model.config());
        assert_eq!(back.store(), model.store());
        assert_eq!(back.classes(), model.classes());
        assert_eq!(model_bytes(&back), bytes);
        assert_eq!(back.predict(&[&sentence]).unwrap(), model.predict(&[&sentence]).unwrap());
    }
}

#[test]
fn encoder_checkpoints_round_trip() {
    let lang = language();
    let vocab = lang.vocab();
    let model = FrontendModel::init(ModelConfig::new(small_encoder(vocab.size())), vocab.clone(), lang.class_map(), 2).unwrap();
    let enc = model.encoder_store();
    let bytes = encoder_bytes(&model.config().encoder, &vocab, &enc);
    let ckpt = parse_checkpoint(Path::new("e"), &bytes).unwrap();
    assert!(matches!(ckpt, Checkpoint::Encoder { .. }));
    assert_eq!(ckpt.encoder_config(), model.config().encoder);
    assert_eq!(ckpt.vocab(), &vocab);
    assert_eq!(ckpt.encoder_params(), enc);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let lang = language();
    let vocab = lang.vocab();
    let model = FrontendModel::init(ModelConfig::new(small_encoder(vocab.size())), vocab, lang.class_map(), 2).unwrap();
    let bytes = model_bytes(&model);
    let p = Path::new("bad.ckpt");
    assert!(parse_checkpoint(p, &bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(parse_checkpoint(p, &extra).is_err());
    assert!(parse_checkpoint(p, &bytes[1..]).is_err());
    let cut = bytes.windows(5).position(|w| w == b"\n---\n").unwrap();
    let header = std::str::from_utf8(&bytes[..cut]).unwrap().replace("encoder.hidden_size=8", "encoder.hidden_size=10");
    let mut swapped = header.into_bytes();
    swapped.extend_from_slice(&bytes[cut..]);
    let err = parse_checkpoint(p, &swapped).unwrap_err().to_string();
    assert!(err.contains("shape"), "{err}");
}

#[test]
fn generated_corpora_survive_the_text_formats() {
    let lang = language();
    let lex = lang.lexicon();
    let lex_back = parse_lexicon(Path::new("lexicon.txt"), &format_lexicon(&lex)).unwrap();
    assert_eq!(lex_back, lex);
    assert_eq!(vocab_from_lexicon(&lex_back), lang.vocab());
    let classes = lang.class_map();
    assert_eq!(parse_classes(Path::new("classes.txt"), &format_classes(&classes)).unwrap(), classes);
    for task in [Task::Poly, Task::Prosody] {
        let records = lang.generate(40, task, 5).unwrap();
        assert_eq!(parse_corpus(Path::new("c.txt"), &format_corpus(&records)).unwrap(), records);
    }
}
