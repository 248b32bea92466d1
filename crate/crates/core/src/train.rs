//! Training loop and per-epoch evaluation.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batch;
use crate::data::{self, Dataset};
use crate::error::{ensure, Error, Result};
use crate::info::{LogBase, ProbVector};
use crate::losses::{self, LossConfig, LossKind, LossOutput};
use crate::nn::{self, InitScheme, MlpModel};

/// Where the label marginal `P̂_Y` of the MI objective comes from during
/// training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginalScope {
    /// Label frequencies of the current minibatch.
    Batch,
    /// Label frequencies of the whole training split.
    Dataset,
}

impl std::str::FromStr for MarginalScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Self::Batch),
            "dataset" => Ok(Self::Dataset),
            _ => Err(Error::Validation(format!(
                "unknown marginal scope `{s}` (expected batch or dataset)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub epsilon: f64,
    pub lambda_ent: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub init: InitScheme,
    pub marginal_scope: MarginalScope,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Cel,
            epsilon: 0.1,
            lambda_ent: 50.0,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 512,
            epochs: 77,
            seed: 0,
            layer_sizes: vec![784, 64, 64, 10],
            init: InitScheme::FanIn,
            marginal_scope: MarginalScope::Batch,
            checkpoint_every: 0,
            checkpoint_dir: None,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl TrainConfig {
    /// Keys accepted by [`TrainConfig::set`], in `lower_snake_case`.
    pub const KEYS: &'static [&'static str] = &[
        "loss_kind",
        "epsilon",
        "lambda_ent",
        "learning_rate",
        "momentum",
        "batch_size",
        "epochs",
        "seed",
        "layer_sizes",
        "init",
        "marginal_scope",
        "checkpoint_every",
        "checkpoint_dir",
        "train_images",
        "train_labels",
        "test_images",
        "test_labels",
    ];

    /// Set one field from its textual form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Validation(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "loss_kind" => self.loss_kind = value.parse()?,
            "epsilon" => self.epsilon = num(key, value)?,
            "lambda_ent" => self.lambda_ent = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "layer_sizes" => {
                self.layer_sizes = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "init" => self.init = value.parse()?,
            "marginal_scope" => self.marginal_scope = value.parse()?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "checkpoint_dir" => self.checkpoint_dir = Some(value.into()),
            "train_images" => self.train_images = Some(value.into()),
            "train_labels" => self.train_labels = Some(value.into()),
            "test_images" => self.test_images = Some(value.into()),
            "test_labels" => self.test_labels = Some(value.into()),
            _ => return Err(Error::Validation(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            epsilon: self.epsilon,
            lambda_ent: self.lambda_ent,
            base: LogBase::Nats,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch_size must be positive");
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be > 0"
        );
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            "momentum must lie in [0, 1)"
        );
        ensure!(
            (0.0..=1.0).contains(&self.epsilon),
            "epsilon must lie in [0, 1]"
        );
        ensure!(
            self.lambda_ent.is_finite() && self.lambda_ent >= 0.0,
            "lambda_ent must be >= 0"
        );
        ensure!(
            self.layer_sizes.len() >= 2,
            "layer_sizes needs at least two entries"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Metrics of one split after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub error_rate: f64,
    pub loss_nats: f64,
    pub mi_bits: f64,
    pub h_y_bits: f64,
    pub h_y_given_x_bits: f64,
}

/// Split-level quantities computed by [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub error_rate: f64,
    /// Training objective over the whole split, nats.
    pub loss_nats: f64,
    /// `H(P̂_Y, Q_Y)` with the split's label frequencies and predicted marginal.
    pub h_y_bits: f64,
    /// Mean one-hot cross entropy.
    pub h_y_given_x_bits: f64,
    /// `h_y_bits - h_y_given_x_bits`.
    pub mi_bits: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        1.0 - self.error_rate
    }

    fn into_metrics(self, epoch: usize, split: Split) -> EpochMetrics {
        EpochMetrics {
            epoch,
            split,
            error_rate: self.error_rate,
            loss_nats: self.loss_nats,
            mi_bits: self.mi_bits,
            h_y_bits: self.h_y_bits,
            h_y_given_x_bits: self.h_y_given_x_bits,
        }
    }
}

const EVAL_CHUNK: usize = 4096;

/// Logits of a whole dataset, computed in fixed-size chunks.
pub fn dataset_logits(model: &MlpModel, dataset: &Dataset) -> Result<Vec<f64>> {
    ensure!(
        dataset.width() == model.input_width(),
        "dataset width {} does not match model input width {}",
        dataset.width(),
        model.input_width()
    );
    let mut out = Vec::with_capacity(dataset.len() * model.classes());
    for chunk in dataset.inputs().chunks(EVAL_CHUNK * dataset.width()) {
        out.extend(model.logits(chunk)?);
    }
    Ok(out)
}

/// Error rate and information quantities of `model` on `dataset`, with the
/// label marginal taken over the whole split.
pub fn evaluate(
    model: &MlpModel,
    dataset: &Dataset,
    kind: LossKind,
    config: &LossConfig,
) -> Result<Evaluation> {
    ensure!(!dataset.is_empty(), "cannot evaluate on an empty dataset");
    ensure!(
        dataset.classes() == model.classes(),
        "dataset has {} classes, model outputs {}",
        dataset.classes(),
        model.classes()
    );
    let logits = dataset_logits(model, dataset)?;
    let classes = model.classes();
    let predicted = nn::predict(&logits, classes);
    let wrong = predicted
        .iter()
        .zip(dataset.labels())
        .filter(|(p, y)| p != y)
        .count();
    let preds = losses::softmax(&logits, classes)?;
    let targets = batch::one_hot_targets(dataset.labels(), classes)?;
    let info = batch::mi_components(&preds, &targets, LogBase::Bits)?;
    let nats = LossConfig {
        base: LogBase::Nats,
        ..*config
    };
    let loss = losses::compute_loss(kind, &logits, dataset.labels(), &nats)?;
    Ok(Evaluation {
        error_rate: wrong as f64 / dataset.len() as f64,
        loss_nats: loss.value,
        h_y_bits: info.h_y,
        h_y_given_x_bits: info.h_y_given_x,
        mi_bits: info.mi,
    })
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: MlpModel,
    pub metrics: Vec<EpochMetrics>,
    /// Checkpoints written, in order.
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.metrics
            .iter()
            .rev()
            .find(|m| m.split == Split::Test)
            .map(|m| 1.0 - m.error_rate)
    }

    /// Best test accuracy and the epoch reaching it first.
    pub fn best_test_accuracy(&self) -> Option<(f64, usize)> {
        self.metrics.iter().filter(|m| m.split == Split::Test).fold(
            None,
            |best: Option<(f64, usize)>, m| {
                let acc = 1.0 - m.error_rate;
                match best {
                    Some((b, _)) if b >= acc => best,
                    _ => Some((acc, m.epoch)),
                }
            },
        )
    }
}

fn batch_loss(
    config: &TrainConfig,
    loss_config: &LossConfig,
    dataset_marginal: Option<&ProbVector>,
    logits: &[f64],
    labels: &[usize],
) -> Result<LossOutput> {
    match (config.loss_kind, dataset_marginal) {
        (LossKind::Mil, Some(p_y)) => {
            losses::mil_loss_with_marginal(logits, labels, p_y, loss_config)
        }
        (kind, _) => losses::compute_loss(kind, logits, labels, loss_config),
    }
}

/// Train a fresh model from `config.seed`.
///
/// After every epoch both splits are evaluated and `on_epoch` sees the
/// metrics log so far. The whole run is a deterministic function of the
/// configuration and the datasets.
pub fn train(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    mut on_epoch: impl FnMut(&[EpochMetrics]),
) -> Result<TrainReport> {
    config.validate()?;
    let mut model = nn::init_mlp_with(&config.layer_sizes, config.seed, config.init)?;
    for (name, ds) in [("train", train_set), ("test", test_set)] {
        ensure!(
            ds.width() == model.input_width() && ds.classes() == model.classes(),
            "{name} split is {}-wide with {} classes; model expects {} inputs and {} classes",
            ds.width(),
            ds.classes(),
            model.input_width(),
            model.classes()
        );
    }
    let loss_config = config.loss_config();
    let dataset_marginal = match config.marginal_scope {
        MarginalScope::Dataset => Some(batch::empirical_label_dist(
            train_set.labels(),
            train_set.classes(),
        )?),
        MarginalScope::Batch => None,
    };
    if config.loss_kind == LossKind::Mil && train_set.len() % config.batch_size == 1 {
        log::warn!(
            "final training batch holds a single sample; its label-marginal term is degenerate"
        );
    }

    let mut metrics = Vec::with_capacity(2 * config.epochs);
    let mut checkpoints = Vec::new();
    for epoch in 0..config.epochs {
        for (b, batch) in
            data::batch_iter(train_set, config.batch_size, config.seed, epoch as u64)?.enumerate()
        {
            let (logits, cache) = nn::forward(&model, batch.inputs())?;
            let out = batch_loss(
                config,
                &loss_config,
                dataset_marginal.as_ref(),
                &logits,
                batch.labels(),
            )?;
            if !out.value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {} at epoch {} batch {b}",
                    out.value,
                    epoch + 1
                )));
            }
            let grads = nn::backward(&model, &cache, &out.grad_logits)?;
            nn::sgd_step(&mut model, &grads, config.learning_rate, config.momentum).map_err(
                |e| match e {
                    Error::Numeric(msg) => {
                        Error::Numeric(format!("{msg} (epoch {} batch {b})", epoch + 1))
                    }
                    other => other,
                },
            )?;
        }
        let done = epoch + 1;
        for (split, ds) in [(Split::Train, train_set), (Split::Test, test_set)] {
            let eval = evaluate(&model, ds, config.loss_kind, &loss_config)?;
            if split == Split::Train && !eval.loss_nats.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss after epoch {done}"
                )));
            }
            metrics.push(eval.into_metrics(done, split));
        }
        if let [.., tr, te] = metrics.as_slice() {
            log::info!(
                "epoch {done}/{}: train error {:.4}, test error {:.4}, test mi {:.4} bits",
                config.epochs,
                tr.error_rate,
                te.error_rate,
                te.mi_bits
            );
        }
        on_epoch(&metrics);
        let last = done == config.epochs;
        let periodic = config.checkpoint_every > 0 && done % config.checkpoint_every == 0;
        if let Some(dir) = &config.checkpoint_dir {
            if last || periodic {
                checkpoints.push(write_checkpoint(dir, &model, done, last)?);
            }
        }
    }
    Ok(TrainReport {
        model,
        metrics,
        checkpoints,
    })
}

fn write_checkpoint(dir: &Path, model: &MlpModel, epoch: usize, last: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = if last {
        dir.join("model.ckpt")
    } else {
        dir.join(format!("model-epoch{epoch:03}.ckpt"))
    };
    nn::save_checkpoint(model, epoch as u64, &path)?;
    Ok(path)
}

/// Header of the metrics CSV.
pub const METRICS_HEADER: &str =
    "epoch,split,error_rate,loss_nats,mi_bits,h_y_bits,h_y_given_x_bits";

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// One CSV line (no terminator). The entropy columns are rounded to six
/// decimals first and `mi_bits` is their difference, so the logged columns
/// satisfy `mi_bits = h_y_bits - h_y_given_x_bits` exactly.
pub fn metrics_csv_row(m: &EpochMetrics) -> String {
    let h_y = round6(m.h_y_bits);
    let h_cond = round6(m.h_y_given_x_bits);
    format!(
        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.epoch,
        m.split.name(),
        m.error_rate,
        m.loss_nats,
        h_y - h_cond,
        h_y,
        h_cond
    )
}

pub fn write_metrics_csv(mut out: impl Write, metrics: &[EpochMetrics]) -> Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in metrics {
        writeln!(out, "{}", metrics_csv_row(m))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blob_dataset() -> Dataset {
        // Class 0 near (0.1, 0.1), class 1 near (0.9, 0.9); two features.
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..64 {
            let y = i % 2;
            let off = (i as f64 * 0.618).fract() * 0.1;
            let base = if y == 0 { 0.1 } else { 0.9 };
            inputs.extend([base + off - 0.05, base - off + 0.05]);
            labels.push(y);
        }
        Dataset::new(inputs, 2, labels, 2, "blobs").unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let ds = two_blob_dataset();
        let cfg = TrainConfig {
            epochs: 0,
            layer_sizes: vec![2, 4, 2],
            ..TrainConfig::default()
        };
        let report = train(&cfg, &ds, &ds, |_| {}).unwrap();
        assert!(report.metrics.is_empty());
        assert_eq!(
            report.model,
            nn::init_mlp_with(&[2, 4, 2], 0, InitScheme::FanIn).unwrap()
        );
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let ds = two_blob_dataset();
        let cfg = TrainConfig {
            epochs: 1,
            layer_sizes: vec![3, 2],
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&cfg, &ds, &ds, |_| {}),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn perfect_and_constant_models() {
        // Single linear layer: logits = (x0 - 0.5, 0.5 - x0) * 100 classifies perfectly.
        let ds = two_blob_dataset();
        let mut m = nn::init_mlp(&[2, 2], 0).unwrap();
        m.layers_mut()[0].weights = vec![-100.0, 100.0, 0.0, 0.0];
        m.layers_mut()[0].biases = vec![50.0, -50.0];
        let e = evaluate(&m, &ds, LossKind::Cel, &LossConfig::default()).unwrap();
        assert_eq!(e.error_rate, 0.0);
        assert!((e.h_y_bits - 1.0).abs() < 1e-9);
        assert!(e.h_y_given_x_bits.abs() < 1e-9);
        assert!((e.mi_bits - 1.0).abs() < 1e-9);

        // Constant model on a 3:1 label split.
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 4 == 0)).collect();
        let skewed = Dataset::new(vec![0.5; 80], 2, labels, 2, "skewed").unwrap();
        let mut c = nn::init_mlp(&[2, 2], 0).unwrap();
        c.layers_mut()[0].weights = vec![0.0; 4];
        c.layers_mut()[0].biases = vec![0.75f64.ln(), 0.25f64.ln()];
        let e = evaluate(&c, &skewed, LossKind::Cel, &LossConfig::default()).unwrap();
        assert!((e.error_rate - 0.25).abs() < 1e-12);
        assert!(e.mi_bits.abs() < 1e-12);
        assert_eq!(
            e,
            evaluate(&c, &skewed, LossKind::Cel, &LossConfig::default()).unwrap()
        );
    }

    #[test]
    fn evaluate_rejects_mismatch() {
        let ds = two_blob_dataset();
        let m = nn::init_mlp(&[3, 2], 0).unwrap();
        assert!(evaluate(&m, &ds, LossKind::Cel, &LossConfig::default()).is_err());
    }

    #[test]
    fn short_run_logs_every_epoch_and_checkpoints() {
        let ds = two_blob_dataset();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            loss_kind: LossKind::Mil,
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.05,
            layer_sizes: vec![2, 8, 2],
            checkpoint_every: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let mut calls = 0;
        let report = train(&cfg, &ds, &ds, |_| calls += 1).unwrap();
        assert_eq!(calls, 4);
        assert_eq!(report.metrics.len(), 8);
        assert_eq!(report.checkpoints.len(), 2);
        let ck = nn::load_checkpoint(&dir.path().join("model.ckpt")).unwrap();
        assert_eq!(ck.epoch, 4);
        assert_eq!(ck.model, report.model);
        for m in &report.metrics {
            assert!((m.mi_bits - (m.h_y_bits - m.h_y_given_x_bits)).abs() < 1e-12);
            assert!(m.loss_nats.is_finite());
        }
    }

    #[test]
    fn csv_rows_satisfy_identity_exactly() {
        let m = EpochMetrics {
            epoch: 3,
            split: Split::Test,
            error_rate: 0.0625,
            loss_nats: 1.23456789,
            mi_bits: 0.0,
            h_y_bits: std::f64::consts::LOG2_10,
            h_y_given_x_bits: 0.4142135623730951,
        };
        let row = metrics_csv_row(&m);
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[1], "test");
        let f = |i: usize| cols[i].parse::<f64>().unwrap();
        assert_eq!(cols[4], format!("{:.6}", f(5) - f(6)));
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[m]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(METRICS_HEADER));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn config_keys() {
        let mut cfg = TrainConfig::default();
        for key in TrainConfig::KEYS {
            let value = match *key {
                "loss_kind" => "mil",
                "layer_sizes" => "4, 3, 2",
                "marginal_scope" => "dataset",
                "init" => "glorot",
                k if k.ends_with("images") || k.ends_with("labels") || k.ends_with("dir") => {
                    "/tmp/x"
                }
                "momentum" | "epsilon" | "learning_rate" => "0.5",
                _ => "3",
            };
            cfg.set(key, value).unwrap();
        }
        assert_eq!(cfg.layer_sizes, vec![4, 3, 2]);
        assert_eq!(cfg.loss_kind, LossKind::Mil);
        assert!(cfg.set("weight_decay", "0").is_err());
        assert!(cfg.set("epochs", "many").is_err());
    }

    #[test]
    fn defaults_match_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.batch_size, 512);
        assert_eq!(cfg.epochs, 77);
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.lambda_ent, 50.0);
        assert_eq!(cfg.layer_sizes, vec![784, 64, 64, 10]);
    }
}
