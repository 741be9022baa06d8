use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoder::EncoderConfig;
use crate::error::ModelError;
use crate::head::{HeadConfig, Verdict};
use crate::model::{DetectorConfig, VulnDetector};
use crate::nn::{Parameter, Parameters};
use crate::synth::synthetic_corpus;
use crate::tensor::Tensor;
use crate::tokenizer::{FallbackTokenizer, SpecialTokens};

const MARK: u32 = 7;

/// Says "vulnerable" exactly when the marker token is present; the single
/// parameter only exists so the optimizer has something to step.
struct Echo {
    bias: Parameter<f32>,
}

impl Echo {
    fn new() -> Self {
        Self {
            bias: Parameter::new("echo.bias", Tensor::vector(vec![0.0])),
        }
    }
}

impl Parameters<f32> for Echo {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<f32>)) {
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
        f(&mut self.bias);
    }
}

impl Classifier<f32> for Echo {
    type Cache = ();

    fn forward(&self, s: &TokenizedSample, _: Mode, _: &mut RngState) -> Result<([f32; 2], ()), ModelError> {
        let hit = s.active_ids().contains(&MARK);
        Ok((if hit { [0.0, 1.0] } else { [1.0, 0.0] }, ()))
    }

    fn backward(&mut self, _: &(), d: [f32; 2]) -> Result<(), ModelError> {
        self.bias.grad.data_mut()[0] += d[1];
        Ok(())
    }
}

/// Always non-vulnerable.
struct Constant(Parameter<f32>);

impl Parameters<f32> for Constant {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Parameter<f32>)) {
        f(&self.0);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
        f(&mut self.0);
    }
}

impl Classifier<f32> for Constant {
    type Cache = ();

    fn forward(&self, _: &TokenizedSample, _: Mode, _: &mut RngState) -> Result<([f32; 2], ()), ModelError> {
        Ok(([0.0, 0.0], ()))
    }

    fn backward(&mut self, _: &(), _: [f32; 2]) -> Result<(), ModelError> {
        Ok(())
    }
}

const SPECIALS: SpecialTokens = SpecialTokens {
    bos: 0,
    eos: 2,
    pad: 1,
    unk: 3,
    mask: 4,
};

fn marked(n: usize) -> Vec<Example> {
    (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let content = if label == 1 { vec![10, MARK, 11] } else { vec![10, 12, 11] };
            Example {
                id: format!("e{i}"),
                sample: TokenizedSample::assemble(&content, &SPECIALS, 8),
                label,
            }
        })
        .collect()
}

fn brute_force(preds: &[u8], labels: &[u8]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..preds.len() {
        if preds[i] == 1 && labels[i] == 1 {
            tp += 1;
        }
        if preds[i] == 1 && labels[i] == 0 {
            fp += 1;
        }
        if preds[i] == 0 && labels[i] == 0 {
            tn += 1;
        }
        if preds[i] == 0 && labels[i] == 1 {
            fn_ += 1;
        }
    }
    (tp, fp, tn, fn_)
}

#[test]
fn confusion_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let preds: Vec<u8> = (0..1000).map(|_| rng.random_range(0..2)).collect();
    let labels: Vec<u8> = (0..1000).map(|_| rng.random_range(0..2)).collect();
    let verdicts: Vec<Verdict> = preds.iter().map(|&p| Verdict::from_label(p)).collect();
    let cm = confusion(&verdicts, &labels).unwrap();
    assert_eq!((cm.tp, cm.fp, cm.tn, cm.fn_), brute_force(&preds, &labels));
}

#[test]
fn echo_oracle_scores_perfectly() {
    let m = evaluate(&Echo::new(), &marked(20), false).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    assert_eq!(m.cm.total(), 20);
}

#[test]
fn zero_weight_model_never_alarms() {
    let config = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::FinalCls);
    let mut model = VulnDetector::<f32>::init(&config, &mut RngState::new(0)).unwrap();
    model.visit_params_mut(&mut |p| {
        if p.name.starts_with("head.") {
            p.value.fill(0.0);
        }
    });
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap());
    let data = tokenize_dataset(&synthetic_corpus(20, 1), &tok, 64);
    let m = evaluate(&model, &data, true).unwrap();
    assert_eq!(m.cm.tp + m.cm.fp, 0);
    assert_eq!(m.recall, 0.0);
    assert_eq!(m.accuracy, 0.5);
    // recomputed from the emitted matrix
    assert_eq!(metrics(m.cm).unwrap(), m);
}

#[test]
fn sequential_and_parallel_evaluation_agree() {
    let config = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::MeanLayersCls);
    let model = VulnDetector::<f32>::init(&config, &mut RngState::new(3)).unwrap();
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap());
    let data = tokenize_dataset(&synthetic_corpus(24, 2), &tok, 64);
    assert_eq!(
        predict_all(&model, &data, true).unwrap(),
        predict_all(&model, &data, false).unwrap()
    );
}

#[test]
fn step_count_and_partial_batches() {
    let cfg = TrainConfig {
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let stats = train(&mut Echo::new(), &marked(16), None, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(stats.iter().map(|s| s.steps).collect::<Vec<_>>(), [2, 4, 6]);
    let stats = train(&mut Echo::new(), &marked(17), None, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(stats.last().unwrap().steps, 9);
}

#[test]
fn zero_learning_rate_freezes_weights() {
    let config = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::FinalCls);
    let mut model = VulnDetector::<f32>::init(&config, &mut RngState::new(4)).unwrap();
    let before = flat_parameters(&model);
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap());
    let data = tokenize_dataset(&synthetic_corpus(16, 4), &tok, 64);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        ..TrainConfig::default()
    };
    train(&mut model, &data, None, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(flat_parameters(&model), before);
}

#[test]
fn invalid_configs() {
    let mut cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    cfg.epochs = 1;
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    assert!(matches!(
        train(&mut Echo::new(), &[], None, &TrainConfig::default(), |_, _| Ok(())),
        Err(TrainError::EmptyData)
    ));
}

#[test]
fn non_finite_loss_aborts_with_ids() {
    let config = DetectorConfig {
        head: HeadConfig {
            dropout_p: 0.0,
            ..HeadConfig::new(64)
        },
        ..DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::FinalCls)
    };
    let mut model = VulnDetector::<f32>::init(&config, &mut RngState::new(0)).unwrap();
    model.head.classifier.bias.value = Tensor::vector(vec![f32::NAN, 0.0]);
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap());
    let data = tokenize_dataset(&synthetic_corpus(8, 0), &tok, 64);
    let err = train(&mut model, &data, None, &TrainConfig::default(), |_, _| Ok(())).unwrap_err();
    match err {
        TrainError::NonFiniteLoss { epoch, step, sample_ids, .. } => {
            assert_eq!((epoch, step), (1, 1));
            assert_eq!(sample_ids.len(), 8);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(TrainError::NonFiniteLoss {
        epoch: 0,
        step: 0,
        loss: f64::NAN,
        sample_ids: vec![]
    }
    .is_numerical());
}

#[test]
fn constant_model_cross_validation() {
    let data = marked(50);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let report = cross_validate(|_| Ok(Constant(Parameter::zeros("c", &[1]))), &data, 5, &cfg).unwrap();
    assert_eq!(report.folds.len(), 5);
    // every fold has 10 samples; balance within a fold depends on the shuffle
    for f in &report.folds {
        assert_eq!(f.metrics.cm.total(), 10);
        assert_eq!(f.metrics.accuracy, f.metrics.cm.tn as f64 / 10.0);
        assert_eq!(f.train_samples, 40);
    }
    let total_tn: u64 = report.folds.iter().map(|f| f.metrics.cm.tn).sum();
    assert_eq!(total_tn, 25);
    assert!((report.mean.accuracy - 0.5).abs() < 1e-12);
}

#[test]
fn aggregates_recompute() {
    let report = cross_validate(|_| Ok(Echo::new()), &marked(23), 5, &TrainConfig::default()).unwrap();
    assert_eq!(report.k, 5);
    let accs: Vec<f64> = report.folds.iter().map(|f| f.metrics.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / 5.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
    assert!((report.mean.accuracy - mean).abs() <= 1e-12);
    assert!((report.std.accuracy - std).abs() <= 1e-12);
    let sizes: Vec<u64> = report.folds.iter().map(|f| f.metrics.cm.total()).collect();
    assert_eq!(sizes.iter().sum::<u64>(), 23);
}

#[test]
fn tiny_model_learns_small_synthetic_corpus() {
    let tok = Tokenizer::Fallback(FallbackTokenizer::c_default(1024).unwrap());
    let data = tokenize_dataset(&synthetic_corpus(480, 21), &tok, 64);
    let (train_set, test_set) = data.split_at(400);
    let config = DetectorConfig::new(EncoderConfig::tiny(), PoolingMode::FinalCls);
    let mut model = VulnDetector::<f32>::init(&config, &mut RngState::new(21)).unwrap();
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        seed: 21,
        ..TrainConfig::default()
    };
    let mut seen = 0;
    let report = direct_protocol(&mut model, train_set, test_set, &cfg, |s, _| {
        seen += 1;
        assert_eq!(s.epoch, seen);
        Ok(())
    })
    .unwrap();
    assert_eq!(report.steps.len(), 3);
    let losses: Vec<f64> = report.steps.iter().map(|s| s.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    let acc = report.steps[2].eval.as_ref().unwrap().accuracy;
    assert!(acc >= 0.9, "test accuracy {acc}, losses {losses:?}");
}
