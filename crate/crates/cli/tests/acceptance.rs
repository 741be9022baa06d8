//! End-to-end acceptance suite. Each criterion runs in isolation, prints a
//! single `[PASS]`/`[FAIL]` line on stderr, and the test fails if any
//! gating criterion failed. Run with `cargo test --test acceptance`.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use npdscan::baselines::{LstmClassifier, LstmConfig};
use npdscan::checkpoint::{save_checkpoint, Checkpoint, LoadedModel, ModelSpec, TrainingProvenance};
use npdscan::encoder::{pool, EncoderConfig, EncoderLayer, PoolingMode};
use npdscan::head::{training_loss, Head, HeadConfig, Verdict};
use npdscan::model::{Classifier, DetectorConfig, VulnDetector};
use npdscan::nn::gradcheck::{check_parameters, GradCheckReport};
use npdscan::nn::layer_norm::layer_norm_backward;
use npdscan::nn::{
    cross_entropy, dense_backward, dense_forward, dropout, grad_check, layer_norm, GradCheckOptions, Mode, Parameter,
    Parameters, RngState,
};
use npdscan::synth::synthetic_corpus;
use npdscan::tensor::Tensor;
use npdscan::tokenizer::{FallbackTokenizer, TokenizedSample, Tokenizer};
use npdscan::train_eval::{
    confusion, cross_validate, direct_protocol, metrics, tokenize_dataset, ConfusionMatrix, DirectReport, Example,
    FoldReport,
};
use npdscan_cli::config::RunConfig;
use npdscan_cli::scan::{ScanReport, SCAN_SCHEMA_VERSION};
use serde_json::Value;
use tempfile::TempDir;

const SEED: u64 = 2024;

fn report_line(line: &str) {
    // Bypasses the test harness's output capture.
    let mut err = std::io::stderr();
    let _ = writeln!(err, "{line}");
}

fn within(limit: Duration, start: Instant, what: &str) {
    let took = start.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
}

fn random_normal(shape: &[usize], std: f64, seed: u64) -> Tensor<f64> {
    Parameter::<f64>::normal("x", shape, std, &mut RngState::new(seed)).value
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

// 1 ------------------------------------------------------------------------

fn brute_force(preds: &[Verdict], labels: &[u8]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..preds.len() {
        let p = if preds[i] == Verdict::Vulnerable { 1 } else { 0 };
        if p == 1 && labels[i] == 1 {
            tp += 1;
        } else if p == 1 {
            fp += 1;
        } else if labels[i] == 1 {
            fn_ += 1;
        } else {
            tn += 1;
        }
    }
    (tp, fp, tn, fn_)
}

fn criterion_1() {
    let start = Instant::now();
    let mut rng = RngState::new(SEED);
    for trial in 0..20 {
        // Vary the class balance so skewed and degenerate matrices appear.
        let rate = trial as f64 / 19.0;
        let preds: Vec<Verdict> = (0..10_000)
            .map(|_| Verdict::from_label((rng.uniform() < rate) as u8))
            .collect();
        let labels: Vec<u8> = (0..10_000).map(|_| (rng.uniform() < 0.5) as u8).collect();
        let (tp, fp, tn, fn_) = brute_force(&preds, &labels);
        let cm = confusion(&preds, &labels).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp, fp, tn, fn_ }, "trial {trial}");
        let m = metrics(cm).unwrap();
        let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let accuracy = (tp + tn) / 10_000.0;
        assert_eq!(m.precision.to_bits(), precision.to_bits(), "trial {trial}");
        assert_eq!(m.recall.to_bits(), recall.to_bits(), "trial {trial}");
        assert_eq!(m.f1.to_bits(), f1.to_bits(), "trial {trial}");
        assert_eq!(m.accuracy.to_bits(), accuracy.to_bits(), "trial {trial}");
    }
    within(Duration::from_secs(5), start, "metric oracle");
}

// 2 ------------------------------------------------------------------------

fn criterion_2() {
    let m = metrics(ConfusionMatrix {
        tp: 2,
        fp: 1,
        fn_: 1,
        tn: 6,
    })
    .unwrap();
    for (name, got, want) in [
        ("precision", m.precision, 2.0 / 3.0),
        ("recall", m.recall, 2.0 / 3.0),
        ("f1", m.f1, 2.0 / 3.0),
        ("accuracy", m.accuracy, 0.8),
    ] {
        assert!((got - want).abs() <= 1e-12, "{name} = {got}, expected {want}");
    }
    assert!(m.undefined.is_empty());
}

// 3 ------------------------------------------------------------------------

fn expect_gradients(name: &str, r: &GradCheckReport, min_checked: usize) {
    assert!(r.checked >= min_checked, "{name}: only {} coordinates checked ({r:?})", r.checked);
    assert!(r.max_rel_error < 1e-4, "{name}: {r:?}");
}

fn gradcheck_dense() {
    let x = random_normal(&[3, 5], 1.0, 1);
    let w = random_normal(&[5, 4], 0.8, 2);
    let b = random_normal(&[4], 0.5, 3);
    let probe = random_normal(&[3, 4], 1.0, 4);
    let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&dense_forward(x, w, b).unwrap(), &probe);
    let g = dense_backward(&x, &w, &probe).unwrap();
    let o = GradCheckOptions::default();
    let r = grad_check(|d| loss(&Tensor::from_vec(&[3, 5], d.to_vec()).unwrap(), &w, &b), x.data(), g.input.data(), &o)
        .merge(grad_check(|d| loss(&x, &Tensor::from_vec(&[5, 4], d.to_vec()).unwrap(), &b), w.data(), g.weight.data(), &o))
        .merge(grad_check(|d| loss(&x, &w, &Tensor::vector(d.to_vec())), b.data(), g.bias.data(), &o));
    expect_gradients("dense", &r, 15 + 20 + 4);
}

fn gradcheck_layer_norm() {
    let x = random_normal(&[4, 6], 1.5, 5);
    let gamma = random_normal(&[6], 1.0, 6);
    let beta = random_normal(&[6], 1.0, 7);
    let probe = random_normal(&[4, 6], 1.0, 8);
    let loss = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| dot(&layer_norm(x, g, b, 1e-5).0, &probe);
    let (_, cache) = layer_norm(&x, &gamma, &beta, 1e-5);
    let g = layer_norm_backward(&cache, &gamma, &probe);
    let o = GradCheckOptions::default();
    let r = grad_check(|d| loss(&Tensor::from_vec(&[4, 6], d.to_vec()).unwrap(), &gamma, &beta), x.data(), g.input.data(), &o)
        .merge(grad_check(|d| loss(&x, &Tensor::vector(d.to_vec()), &beta), gamma.data(), g.gamma.data(), &o))
        .merge(grad_check(|d| loss(&x, &gamma, &Tensor::vector(d.to_vec())), beta.data(), g.beta.data(), &o));
    expect_gradients("layer norm", &r, 24 + 12);
}

fn gradcheck_cross_entropy() {
    let logits = random_normal(&[8, 2], 2.0, 9);
    let labels = [0, 1, 1, 0, 0, 1, 0, 1];
    let (_, g) = cross_entropy(&logits, &labels).unwrap();
    let r = grad_check(
        |d| cross_entropy(&Tensor::from_vec(&[8, 2], d.to_vec()).unwrap(), &labels).unwrap().0,
        logits.data(),
        g.data(),
        &GradCheckOptions::default(),
    );
    expect_gradients("cross-entropy", &r, 16);
}

fn gradcheck_head() {
    // Dropout is configured but eval mode must bypass it.
    let config = HeadConfig {
        dense_dim: 24,
        dropout_p: 0.3,
        ..HeadConfig::new(8)
    };
    let mut head = Head::<f64>::init(config, &mut RngState::new(10)).unwrap();
    head.visit_params_mut(&mut |p| p.value = p.value.scale(20.0));
    let x = random_normal(&[8], 1.0, 11);
    let loss_of = |h: &Head<f64>, x: &Tensor<f64>| {
        let (l, _) = h.forward(x, Mode::Eval, &mut RngState::new(0)).unwrap();
        training_loss(l, 1).unwrap().0
    };
    head.zero_grad();
    let (l, cache) = head.forward(&x, Mode::Eval, &mut RngState::new(0)).unwrap();
    let dx = head.backward(&cache, training_loss(l, 1).unwrap().1).unwrap();
    let r = check_parameters(&mut head, |h| loss_of(h, &x), &GradCheckOptions::default());
    let rx = grad_check(|d| loss_of(&head, &Tensor::vector(d.to_vec())), x.data(), dx.data(), &GradCheckOptions::default());
    expect_gradients("head", &r.merge(rx), 200);
}

fn gradcheck_encoder_layer() {
    let tiny = EncoderConfig::tiny();
    let mut layer = EncoderLayer::<f64>::init(0, tiny.hidden_dim, tiny.num_heads, tiny.ffn_dim, &mut RngState::new(12));
    layer.visit_params_mut(&mut |p| {
        if p.value.shape().len() == 2 {
            p.value = p.value.scale(10.0);
        }
    });
    let seq = 6;
    let x = random_normal(&[seq, tiny.hidden_dim], 1.0, 13);
    let mask = [1, 1, 1, 1, 0, 0];
    let probe = random_normal(&[seq, tiny.hidden_dim], 1.0, 14);
    let loss_of = |l: &EncoderLayer<f64>, x: &Tensor<f64>| {
        let (y, _) = l.forward(x, &mask, 0.0, Mode::Eval, &mut RngState::new(0)).unwrap();
        dot(&y, &probe)
    };
    layer.zero_grad();
    let (_, cache) = layer.forward(&x, &mask, 0.0, Mode::Eval, &mut RngState::new(0)).unwrap();
    let dx = layer.backward(&cache, &probe).unwrap();
    let r = check_parameters(&mut layer, |l| loss_of(l, &x), &GradCheckOptions::sampled(24, 15));
    let rx = grad_check(
        |d| loss_of(&layer, &Tensor::from_vec(&[seq, tiny.hidden_dim], d.to_vec()).unwrap()),
        x.data(),
        dx.data(),
        &GradCheckOptions::sampled(96, 16),
    );
    expect_gradients("encoder layer", &r.merge(rx), 300);
}

fn gradcheck_lstm() {
    let config = LstmConfig {
        max_vocab_size: 16,
        max_sequence_length: 8,
        embedding_dim: 4,
        units: vec![5, 3],
        dense_dim: 6,
    };
    let mut m = LstmClassifier::<f64>::init(config, &mut RngState::new(17)).unwrap();
    m.visit_params_mut(&mut |p| p.value = p.value.scale(1.5));
    let ids = [3, 11, 3];
    m.zero_grad();
    let (l, cache) = m.logits(&ids).unwrap();
    m.backward_logits(&cache, training_loss(l, 0).unwrap().1).unwrap();
    let r = check_parameters(
        &mut m,
        |m| training_loss(m.logits(&ids).unwrap().0, 0).unwrap().0,
        &GradCheckOptions::default(),
    );
    expect_gradients("lstm", &r, 200);
}

fn criterion_3() {
    let start = Instant::now();
    gradcheck_dense();
    gradcheck_layer_norm();
    gradcheck_cross_entropy();
    gradcheck_head();
    gradcheck_encoder_layer();
    gradcheck_lstm();
    within(Duration::from_secs(120), start, "gradient checks");
}

// 4 ------------------------------------------------------------------------

fn criterion_4() {
    let tiny = EncoderConfig::tiny();
    let len = tiny.max_positions;
    let specials = Tokenizer::Fallback(FallbackTokenizer::c_default(tiny.vocab_size).unwrap()).specials();
    let mut rng = RngState::new(SEED + 4);
    let mut draw = |n: usize| (rng.uniform() * n as f64) as usize;
    let detectors: Vec<VulnDetector<f32>> = PoolingMode::ALL
        .iter()
        .map(|&mode| VulnDetector::init(&DetectorConfig::new(tiny.clone(), mode), &mut RngState::new(SEED)).unwrap())
        .collect();
    for case in 0..100 {
        let content: Vec<u32> = (0..draw(len - 2)).map(|_| 5 + draw(tiny.vocab_size - 5) as u32).collect();
        let clean = TokenizedSample::assemble(&content, &specials, len);
        let mut dirty = clean.clone();
        for id in &mut dirty.token_ids[clean.true_length..] {
            *id = draw(tiny.vocab_size) as u32;
        }
        for (m, mode) in detectors.iter().zip(PoolingMode::ALL) {
            let feature = |s: &TokenizedSample| {
                let acts = m.encoder.encode(s, Mode::Eval, &mut RngState::new(0)).unwrap();
                pool(&acts, mode).unwrap().norm() as f64
            };
            let diff = (feature(&clean) - feature(&dirty)).abs();
            assert!(diff < 1e-6, "case {case}, {mode:?}: pooled norm moved by {diff}");
        }
    }
}

// 5 ------------------------------------------------------------------------

fn criterion_5() {
    let x = random_normal(&[100, 100], 1.0, 18);
    let (y, mask) = dropout(&x, 0.3, Mode::Eval, &mut RngState::new(1)).unwrap();
    assert_eq!(y, x, "eval mode must be the identity");
    assert!(mask.is_none());

    let ones = Tensor::<f64>::full(&[10_000], 1.0);
    let (y, _) = dropout(&ones, 0.3, Mode::Train, &mut RngState::new(SEED)).unwrap();
    let mean = y.sum() / 10_000.0;
    assert!((mean - 1.0).abs() <= 0.02, "train-mode mean {mean}");
    let dropped = y.data().iter().filter(|&&v| v == 0.0).count();
    assert!(dropped > 0 && dropped < 10_000);

    let (_, a) = dropout(&ones, 0.3, Mode::Train, &mut RngState::new(SEED)).unwrap();
    let (_, b) = dropout(&ones, 0.3, Mode::Train, &mut RngState::new(SEED)).unwrap();
    let (_, c) = dropout(&ones, 0.3, Mode::Train, &mut RngState::new(SEED + 1)).unwrap();
    assert_eq!(a, b, "same seed, different mask");
    assert_ne!(a, c, "different seeds gave the same mask");
}

// 6, 8 ---------------------------------------------------------------------

/// The desk-scale regime: tiny encoder, fallback tokenizer, the reference
/// learning rate scaled by 100.
fn desk_config() -> RunConfig {
    RunConfig {
        learning_rate: 2e-5 * 100.0,
        weight_decay: 0.01,
        batch_size: 8,
        num_train_epochs: 3,
        seed: SEED,
        ..RunConfig::default()
    }
}

struct DeskRun {
    model: VulnDetector<f32>,
    report: DirectReport,
    test_set: Vec<Example>,
    tokenizer: Tokenizer,
    config: RunConfig,
}

fn desk_run() -> DeskRun {
    let config = desk_config();
    config.check().unwrap();
    let tokenizer = config.tokenizer().unwrap();
    let data = tokenize_dataset(&synthetic_corpus(2000, SEED), &tokenizer, config.max_length());
    let (train_set, test_set) = data.split_at(1600);
    let mut model = config.build_detector(SEED).unwrap();
    let report = direct_protocol(&mut model, train_set, test_set, &config.train_config(), |_, _| Ok(())).unwrap();
    DeskRun {
        model,
        report,
        test_set: test_set.to_vec(),
        tokenizer,
        config,
    }
}

fn criterion_6(run: &DeskRun, took: Duration) {
    assert!(took < Duration::from_secs(300), "training took {took:?}");
    let losses: Vec<f64> = run.report.steps.iter().map(|s| s.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "losses not strictly decreasing: {losses:?}");
    let acc = run.report.steps[2].eval.as_ref().unwrap().accuracy;
    report_line(&format!("       test accuracy {acc:.4}, losses {losses:.4?}, {took:.1?}"));
    assert!(acc >= 0.95, "test accuracy {acc}");
}

fn criterion_8(first: &DeskRun) {
    let second = desk_run();
    let a = serde_json::to_string(&first.report).unwrap();
    let b = serde_json::to_string(&second.report).unwrap();
    assert_eq!(a, b, "two same-seed runs disagree");
}

// 7 ------------------------------------------------------------------------

fn criterion_7(run: &DeskRun) {
    assert_eq!(run.report.steps.len(), 3);
    let columns = ["accuracy", "precision", "f1", "recall"];
    for step in &run.report.steps {
        let v = serde_json::to_value(step.eval.as_ref().expect("per-step eval")).unwrap();
        for c in columns {
            assert!(v[c].is_f64(), "step {} lacks {c}", step.epoch);
        }
    }

    let config = RunConfig {
        seed: SEED + 7,
        ..desk_config()
    };
    let tokenizer = config.tokenizer().unwrap();
    let data = tokenize_dataset(&synthetic_corpus(400, SEED + 7), &tokenizer, config.max_length());
    let cv = cross_validate(
        |fold| config.build_detector(config.seed + fold as u64).map_err(|e| npdscan::error::TrainError::Config(e.to_string())),
        &data,
        5,
        &config.train_config(),
    )
    .unwrap();
    assert_eq!(cv.folds.len(), 5);
    let v = serde_json::to_value(&cv).unwrap();
    for c in columns {
        for f in v["folds"].as_array().unwrap() {
            assert!(f["metrics"][c].is_f64());
        }
        let per_fold: Vec<f64> = cv.folds.iter().map(|f| metric(f, c)).collect();
        let mean = per_fold.iter().sum::<f64>() / 5.0;
        let std = (per_fold.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0).sqrt();
        let got_mean = v["mean"][c].as_f64().unwrap();
        let got_std = v["std"][c].as_f64().unwrap();
        assert!((got_mean - mean).abs() <= 1e-12, "{c} mean {got_mean} vs {mean}");
        assert!((got_std - std).abs() <= 1e-12, "{c} std {got_std} vs {std}");
    }
}

fn metric(f: &FoldReport, name: &str) -> f64 {
    match name {
        "accuracy" => f.metrics.accuracy,
        "precision" => f.metrics.precision,
        "f1" => f.metrics.f1,
        "recall" => f.metrics.recall,
        _ => unreachable!(),
    }
}

// 9 ------------------------------------------------------------------------

fn save_desk_checkpoint(run: &DeskRun, dir: &Path) {
    let spec = ModelSpec::Transformer {
        config: run.model.config(),
    };
    save_checkpoint(
        dir,
        &run.model,
        spec,
        &run.tokenizer,
        run.config.max_length(),
        TrainingProvenance {
            seed: SEED,
            epoch: Some(3),
            ..TrainingProvenance::default()
        },
    )
    .unwrap();
}

fn criterion_9(run: &DeskRun, dir: &Path) {
    let (loaded, _) = Checkpoint::load(dir).unwrap();
    let LoadedModel::Transformer(model) = &loaded.model else {
        panic!("loaded a different model kind");
    };
    for ex in run.test_set.iter().take(32) {
        let (a, _) = run.model.forward(&ex.sample, Mode::Eval, &mut RngState::new(0)).unwrap();
        let (b, _) = model.forward(&ex.sample, Mode::Eval, &mut RngState::new(0)).unwrap();
        assert_eq!(a.map(f32::to_bits), b.map(f32::to_bits), "{}", ex.id);
        assert_eq!(loaded.model.predict(&ex.id, &ex.sample).unwrap().logits, run.model.predict(&ex.id, &ex.sample).unwrap().logits);
    }
}

// 10 -----------------------------------------------------------------------

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixtures")
}

fn criterion_10(checkpoint: &Path, out_dir: &Path) {
    let report_path = out_dir.join("scan.json");
    let status = Command::new(env!("CARGO_BIN_EXE_npdscan"))
        .arg("scan")
        .arg("--checkpoint")
        .arg(checkpoint)
        .arg("--out")
        .arg(&report_path)
        .arg(fixtures())
        .output()
        .unwrap();
    let text = std::fs::read_to_string(&report_path).unwrap_or_else(|e| {
        panic!("no report ({e}); stderr: {}", String::from_utf8_lossy(&status.stderr))
    });
    let raw: Value = serde_json::from_str(&text).unwrap();
    for key in ["schema_version", "tool", "checkpoint", "config", "entries", "summary", "generated_at"] {
        assert!(raw.get(key).is_some(), "report lacks {key}");
    }
    let report: ScanReport = serde_json::from_value(raw).unwrap();
    assert_eq!(report.schema_version, SCAN_SCHEMA_VERSION);

    let expected = [
        ("deref_without_check.c", "config_retries"),
        ("deref_without_check.c", "config_retries_checked"),
        ("pointer_arithmetic.c", "fill_window"),
        ("pointer_arithmetic.c", "sum_tail"),
        ("uninitialized_pointer.c", "print_ids"),
        ("uninitialized_pointer.c", "record_id"),
    ];
    let mut got: Vec<(String, String)> = report
        .entries
        .iter()
        .map(|e| {
            let file = Path::new(&e.file).file_name().unwrap().to_string_lossy().into_owned();
            (file, e.function.clone())
        })
        .collect();
    got.sort();
    let want: Vec<(String, String)> = expected.iter().map(|(f, n)| (f.to_string(), n.to_string())).collect();
    assert_eq!(got, want, "one entry per fixture function");
    for e in &report.entries {
        assert!(e.confidence > 0.0 && e.confidence < 1.0, "{e:?}");
        assert!(e.start_byte < e.end_byte && e.line >= 1);
        assert_eq!(e.verdict == Verdict::Vulnerable, e.logits[1] > e.logits[0]);
        assert_eq!(e.finding, e.verdict == Verdict::Vulnerable && e.confidence >= report.config.threshold);
    }
    assert_eq!(report.summary.files, 3);
    assert_eq!(report.summary.functions, 6);
    assert_eq!(report.summary.vulnerable + report.summary.non_vulnerable, 6);
    let expected_code = if report.has_findings() { 1 } else { 0 };
    assert_eq!(status.status.code(), Some(expected_code), "exit code against {} findings", report.summary.findings);
}

// 11 -----------------------------------------------------------------------

/// Full-scale run, only when the external inputs are provided:
/// `NPDSCAN_FULL_DATA` (an `ingest` directory), `NPDSCAN_PRETRAINED`
/// (RoBERTa-layout safetensors), `NPDSCAN_VOCAB` and `NPDSCAN_MERGES`.
fn criterion_11() -> Option<String> {
    let var = |k: &str| std::env::var_os(k).map(PathBuf::from);
    let (data, weights, vocab, merges) = (
        var("NPDSCAN_FULL_DATA")?,
        var("NPDSCAN_PRETRAINED")?,
        var("NPDSCAN_VOCAB")?,
        var("NPDSCAN_MERGES")?,
    );
    let dir = TempDir::new().unwrap();
    let config = RunConfig {
        preset: "codebert-base".into(),
        max_length: Some(512),
        vocab_file: Some(vocab),
        merges_file: Some(merges),
        pretrained_weights: Some(weights),
        ..RunConfig::default()
    };
    let config_path = dir.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = dir.path().join("run");
    let status = Command::new(env!("CARGO_BIN_EXE_npdscan"))
        .arg("train")
        .arg("--config")
        .arg(&config_path)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    if !status.success() {
        return Some(format!("training exited with {status}"));
    }
    let text = std::fs::read_to_string(out.join("metrics.json")).unwrap();
    let report: DirectReport = serde_json::from_str(&text).unwrap();
    let m = report.steps.last().and_then(|s| s.eval.clone())?;
    let near = (m.accuracy - 0.871).abs() <= 0.05 && (m.precision - 0.881).abs() <= 0.05;
    Some(format!(
        "accuracy {:.4}, precision {:.4} ({} the reference within 0.05)",
        m.accuracy,
        m.precision,
        if near { "matches" } else { "misses" }
    ))
}

// --------------------------------------------------------------------------

fn check(results: &mut Vec<(u32, bool)>, n: u32, title: &str, f: impl FnOnce()) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let ok = outcome.is_ok();
    let detail = match &outcome {
        Ok(()) => String::new(),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            format!(": {msg}")
        }
    };
    report_line(&format!(
        "[{}] {n:>2} {title} ({took:.1?}){detail}",
        if ok { "PASS" } else { "FAIL" }
    ));
    results.push((n, ok));
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    check(&mut results, 1, "metric oracle equivalence", criterion_1);
    check(&mut results, 2, "metric formula spot checks", criterion_2);
    check(&mut results, 3, "gradient checks", criterion_3);
    check(&mut results, 4, "masking invariant", criterion_4);
    check(&mut results, 5, "dropout contract", criterion_5);

    let mut desk = None;
    check(&mut results, 6, "desk-scale training", || {
        let start = Instant::now();
        let run = desk_run();
        let took = start.elapsed();
        criterion_6(desk.insert(run), took);
    });
    match &desk {
        Some(run) => {
            let dir = TempDir::new().unwrap();
            let ck = dir.path().join("checkpoint");
            check(&mut results, 7, "protocol shapes", || criterion_7(run));
            check(&mut results, 8, "determinism", || criterion_8(run));
            check(&mut results, 9, "checkpoint round trip", || {
                save_desk_checkpoint(run, &ck);
                criterion_9(run, &ck);
            });
            check(&mut results, 10, "scan smoke test", || criterion_10(&ck, dir.path()));
        }
        None => {
            for (n, title) in [
                (7, "protocol shapes"),
                (8, "determinism"),
                (9, "checkpoint round trip"),
                (10, "scan smoke test"),
            ] {
                check(&mut results, n, title, || panic!("no desk-scale model to work with"));
            }
        }
    }

    match criterion_11() {
        Some(summary) => report_line(&format!("[INFO] 11 full-scale run (non-gating): {summary}")),
        None => report_line("[SKIP] 11 full-scale run (set NPDSCAN_FULL_DATA, NPDSCAN_PRETRAINED, NPDSCAN_VOCAB, NPDSCAN_MERGES)"),
    }

    let failed: Vec<u32> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert_eq!(results.len(), 10);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
