//! Library-level pipeline: corpus on disk, balancing and splitting,
//! tokenization, training, evaluation and a checkpoint round trip.

use npdscan::baselines::{LstmClassifier, LstmConfig};
use npdscan::checkpoint::{save_checkpoint, Checkpoint, ModelSpec, TrainingProvenance};
use npdscan::dataset::{balance, load_dataset, train_test_split, write_csv, DatasetFormat};
use npdscan::nn::RngState;
use npdscan::synth::synthetic_corpus;
use npdscan::tokenizer::{FallbackTokenizer, Tokenizer};
use npdscan::train_eval::{cross_validate, direct_protocol, evaluate, predict_all, tokenize_dataset, TrainConfig};

fn small_lstm() -> LstmConfig {
    LstmConfig {
        max_vocab_size: 512,
        max_sequence_length: 48,
        embedding_dim: 16,
        units: vec![16],
        dense_dim: 8,
    }
}

#[test]
fn csv_corpus_to_lstm_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("corpus.csv");
    let corpus = synthetic_corpus(300, 5);
    write_csv(&corpus, &csv).unwrap();
    let ds = load_dataset(&csv, "CWE-476", DatasetFormat::Csv).unwrap();
    assert_eq!(ds.samples(), corpus.samples());

    let ds = balance(&ds, 5).unwrap();
    let (train_ds, test_ds) = train_test_split(&ds, 0.2, 5).unwrap();
    assert_eq!((train_ds.len(), test_ds.len()), (240, 60));

    let config = small_lstm();
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(config.max_vocab_size).unwrap());
    let train_set = tokenize_dataset(&train_ds, &tok, config.max_sequence_length);
    let test_set = tokenize_dataset(&test_ds, &tok, config.max_sequence_length);

    let mut model = LstmClassifier::<f32>::init(config.clone(), &mut RngState::new(5)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let report = direct_protocol(&mut model, &train_set, &test_set, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(report.steps.len(), 2);
    let last = report.steps[1].eval.as_ref().unwrap();
    assert_eq!(last.cm.total(), 60);
    assert_eq!(evaluate(&model, &test_set, true).unwrap(), *last);

    let ck_dir = dir.path().join("ck");
    save_checkpoint(
        &ck_dir,
        &model,
        ModelSpec::Lstm { config },
        &tok,
        48,
        TrainingProvenance::default(),
    )
    .unwrap();
    let (ck, manifest) = Checkpoint::load(&ck_dir).unwrap();
    assert_eq!(manifest.max_length, 48);
    let before = predict_all(&model, &test_set, true).unwrap();
    let after = predict_all(&ck.model, &test_set, true).unwrap();
    assert_eq!(before, after);
    for (ex, ds_sample) in test_set.iter().zip(test_ds.samples()) {
        assert_eq!(ck.encode(&ds_sample.source), ex.sample);
    }
}

#[test]
fn cross_validation_over_a_balanced_corpus() {
    let ds = balance(&synthetic_corpus(120, 8), 8).unwrap();
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(512).unwrap());
    let data = tokenize_dataset(&ds, &tok, 48);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 1,
        seed: 8,
        ..TrainConfig::default()
    };
    let report = cross_validate(
        |fold| Ok(LstmClassifier::<f32>::init(small_lstm(), &mut RngState::new(fold as u64)).unwrap()),
        &data,
        4,
        &cfg,
    )
    .unwrap();
    assert_eq!(report.folds.len(), 4);
    let validated: u64 = report.folds.iter().map(|f| f.metrics.cm.total()).sum();
    assert_eq!(validated, 120);
    assert!(report.folds.iter().all(|f| f.train_samples == 90));
}

#[cfg(feature = "hdf5")]
#[test]
fn vdisc_functions_score_under_every_pooling_mode() {
    use npdscan::encoder::{EncoderConfig, PoolingMode};
    use npdscan::model::{Classifier, DetectorConfig, VulnDetector};

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/vdisc_small.h5");
    let ds = load_dataset(&path, "CWE-476", DatasetFormat::Hdf5Vdisc).unwrap();
    let tiny = EncoderConfig::tiny();
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(tiny.vocab_size).unwrap());
    let data = tokenize_dataset(&ds, &tok, tiny.max_positions);
    for mode in PoolingMode::ALL {
        let m = VulnDetector::<f32>::init(&DetectorConfig::new(tiny.clone(), mode), &mut RngState::new(1)).unwrap();
        for ex in &data {
            let p = m.predict(&ex.id, &ex.sample).unwrap();
            assert!(p.logits.iter().all(|l| l.is_finite()), "{mode:?} {}", ex.id);
        }
    }
}
