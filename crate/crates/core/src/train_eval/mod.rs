//! Training loop, evaluation, the direct (per-epoch) protocol and k-fold
//! cross-validation, all generic over [`Classifier`].

mod metrics;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{confusion, metrics, ConfusionMatrix, MetricsReport};

use crate::dataset::{FoldPlan, LabeledDataset};
use crate::encoder::PoolingMode;
use crate::error::TrainError;
use crate::head::{training_loss, VulnPrediction};
use crate::model::Classifier;
use crate::nn::{AdamW, AdamWConfig, Mode, Parameters, RngState};
use crate::tensor::Scalar;
use crate::tokenizer::{TokenizedSample, Tokenizer};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub pooling: PoolingMode,
    /// Evaluate on one thread in sample order. Results are identical either
    /// way; this only removes the thread pool from the picture.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            epochs: 3,
            batch_size: 8,
            seed: 0,
            pooling: PoolingMode::FinalCls,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!("weight decay {}", self.weight_decay)));
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// A tokenized, labeled function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub sample: TokenizedSample,
    pub label: u8,
}

pub fn tokenize_dataset(ds: &LabeledDataset, tokenizer: &Tokenizer, max_length: usize) -> Vec<Example> {
    ds.samples()
        .par_iter()
        .map(|s| Example {
            id: s.id.clone(),
            sample: tokenizer.encode(&s.source, max_length),
            label: s.label,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub seed: u64,
    pub steps: usize,
    /// Mean train-mode loss over the epoch's samples.
    pub train_loss: f64,
    /// Held-out metrics after this epoch, when an eval set was given.
    pub eval: Option<MetricsReport>,
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch AdamW.
///
/// Each batch averages the per-sample loss gradients. `on_epoch` sees the
/// stats and the model after every epoch (for checkpoints) and may abort.
pub fn train<T, M, F>(
    model: &mut M,
    data: &[Example],
    eval: Option<&[Example]>,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>, TrainError>
where
    T: Scalar,
    M: Classifier<T>,
    F: FnMut(&EpochStats, &M) -> Result<(), TrainError>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut optimizer = AdamW::new(cfg.optimizer());
    let mut order_rng = RngState::new(cfg.seed);
    let mut dropout_rng = RngState::new(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(order_rng.rng());
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            model.zero_grad();
            let scale = T::one() / T::c(batch.len() as f64);
            let mut batch_loss = 0.0;
            for &i in batch {
                let ex = &data[i];
                let (logits, cache) = model.forward(&ex.sample, Mode::Train, &mut dropout_rng)?;
                let (loss, dl) = training_loss(logits, ex.label).map_err(crate::error::ModelError::from)?;
                batch_loss += loss.as_f64();
                model.backward(&cache, [dl[0] * scale, dl[1] * scale])?;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    loss: batch_loss,
                    sample_ids: batch.iter().map(|&i| data[i].id.clone()).collect(),
                });
            }
            loss_sum += batch_loss;
            optimizer
                .step(model)
                .map_err(|source| TrainError::Optimizer { epoch, step, source })?;
        }
        let eval = match eval {
            Some(set) => Some(evaluate(model, set, cfg.deterministic)?),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            seed: cfg.seed,
            steps: step,
            train_loss: loss_sum / data.len() as f64,
            eval,
        };
        log::info!("epoch {epoch}: loss {:.6}", stats.train_loss);
        on_epoch(&stats, model)?;
        history.push(stats);
    }
    Ok(history)
}

/// Eval-mode predictions in input order.
pub fn predict_all<T, M>(model: &M, data: &[Example], sequential: bool) -> Result<Vec<VulnPrediction>, TrainError>
where
    T: Scalar,
    M: Classifier<T>,
{
    let run = |ex: &Example| model.predict(&ex.id, &ex.sample).map_err(TrainError::from);
    if sequential {
        data.iter().map(run).collect()
    } else {
        data.par_iter().map(run).collect()
    }
}

pub fn evaluate<T, M>(model: &M, data: &[Example], sequential: bool) -> Result<MetricsReport, TrainError>
where
    T: Scalar,
    M: Classifier<T>,
{
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let preds = predict_all(model, data, sequential)?;
    let verdicts: Vec<_> = preds.iter().map(|p| p.verdict).collect();
    let labels: Vec<u8> = data.iter().map(|e| e.label).collect();
    metrics(confusion(&verdicts, &labels)?)
}

/// The direct protocol: one training run, evaluated on the test set after
/// every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectReport {
    pub schema_version: u32,
    pub seed: u64,
    pub steps: Vec<EpochStats>,
}

pub fn direct_protocol<T, M, F>(
    model: &mut M,
    train_set: &[Example],
    test_set: &[Example],
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<DirectReport, TrainError>
where
    T: Scalar,
    M: Classifier<T>,
    F: FnMut(&EpochStats, &M) -> Result<(), TrainError>,
{
    let steps = train(model, train_set, Some(test_set), cfg, on_epoch)?;
    Ok(DirectReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub recall: f64,
}

impl MetricSummary {
    fn of(m: &MetricsReport) -> Self {
        Self {
            accuracy: m.accuracy,
            precision: m.precision,
            f1: m.f1,
            recall: m.recall,
        }
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            accuracy: f(self.accuracy),
            precision: f(self.precision),
            f1: f(self.f1),
            recall: f(self.recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_samples: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub schema_version: u32,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean: MetricSummary,
    /// Population standard deviation (divisor k).
    pub std: MetricSummary,
}

impl CvReport {
    pub fn from_folds(k: usize, seed: u64, folds: Vec<FoldReport>) -> Self {
        let (mean, std) = aggregate(&folds);
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            k,
            seed,
            folds,
            mean,
            std,
        }
    }
}

/// Mean and population standard deviation of each metric over folds.
pub fn aggregate(folds: &[FoldReport]) -> (MetricSummary, MetricSummary) {
    let n = folds.len() as f64;
    let sum = |f: &dyn Fn(&MetricSummary) -> f64| folds.iter().map(|r| f(&MetricSummary::of(&r.metrics))).sum::<f64>();
    let mean = MetricSummary {
        accuracy: sum(&|m| m.accuracy) / n,
        precision: sum(&|m| m.precision) / n,
        f1: sum(&|m| m.f1) / n,
        recall: sum(&|m| m.recall) / n,
    };
    let var = MetricSummary {
        accuracy: sum(&|m| (m.accuracy - mean.accuracy).powi(2)) / n,
        precision: sum(&|m| (m.precision - mean.precision).powi(2)) / n,
        f1: sum(&|m| (m.f1 - mean.f1).powi(2)) / n,
        recall: sum(&|m| (m.recall - mean.recall).powi(2)) / n,
    };
    (mean, var.map(f64::sqrt))
}

/// k-fold cross-validation: for each fold a fresh model from `factory`
/// (given the fold index), trained on the other folds and evaluated on it.
pub fn cross_validate<T, M, F>(
    mut factory: F,
    data: &[Example],
    k: usize,
    cfg: &TrainConfig,
) -> Result<CvReport, TrainError>
where
    T: Scalar,
    M: Classifier<T>,
    F: FnMut(usize) -> Result<M, TrainError>,
{
    let plan = FoldPlan::new(data.len(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let pick = |idx: Vec<usize>| idx.into_iter().map(|i| data[i].clone()).collect::<Vec<_>>();
        let train_set = pick(plan.train_indices(fold));
        let val_set = pick(plan.validation_indices(fold));
        let mut model = factory(fold)?;
        train(&mut model, &train_set, None, cfg, |_, _| Ok(()))?;
        let m = evaluate(&model, &val_set, cfg.deterministic)?;
        log::info!("fold {fold}: accuracy {:.4}", m.accuracy);
        folds.push(FoldReport {
            fold,
            train_samples: train_set.len(),
            metrics: m,
        });
    }
    Ok(CvReport::from_folds(k, cfg.seed, folds))
}

/// All parameter values concatenated in visit order.
pub fn flat_parameters<T: Scalar>(model: &dyn Parameters<T>) -> Vec<T> {
    let mut out = Vec::new();
    model.visit_params(&mut |p| out.extend_from_slice(p.value.data()));
    out
}

#[cfg(test)]
mod tests;
