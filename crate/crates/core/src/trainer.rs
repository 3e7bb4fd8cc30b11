//! Mini-batch SGD over mixed labeled and unlabeled examples, with input
//! corruption, a plateau-then-linear learning-rate schedule and
//! validation-driven snapshot selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::data::{CollapseMap, StackedDataset};
use crate::error::{Error, Result};
use crate::evaluation::frame_accuracy;
use crate::model::{ModelParams, ModelShape};
use crate::objective::{backward, batch_loss, Batch, Gradients, LossSettings, LossTerms};
use crate::tensor::{derive_seed, Matrix, Rng};

pub use crate::objective::corrupt;

// Sub-streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_CORRUPT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_decay_start_epoch: usize,
    pub lr_floor: f64,
    pub corruption_rate: f64,
    /// L1 activity penalty on the hidden code; 0 disables it.
    pub sparsity: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            batch_size: 128,
            epochs: 50,
            lr_initial: 0.05,
            lr_decay_start_epoch: 25,
            lr_floor: 1e-4,
            corruption_rate: 0.2,
            sparsity: 0.0,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be a finite value ≥ 0, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr_initial > 0.0 && self.lr_initial.is_finite()) {
            return fail(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor <= self.lr_initial) {
            return fail(format!("lr_floor {} must lie in [0, lr_initial]", self.lr_floor));
        }
        if self.lr_decay_start_epoch > self.epochs {
            return fail(format!(
                "lr_decay_start_epoch {} exceeds epochs {}",
                self.lr_decay_start_epoch, self.epochs
            ));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return fail(format!("corruption_rate {} outside [0, 1]", self.corruption_rate));
        }
        if !(self.sparsity >= 0.0 && self.sparsity.is_finite()) {
            return fail(format!("sparsity must be a finite value ≥ 0, got {}", self.sparsity));
        }
        if self.patience == Some(0) {
            return fail("patience must be at least 1".into());
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in the spelling the config file uses.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_initial", self.lr_initial.to_string()),
            ("lr_decay_start_epoch", self.lr_decay_start_epoch.to_string()),
            ("lr_floor", self.lr_floor.to_string()),
            ("corruption_rate", self.corruption_rate.to_string()),
            ("sparsity", self.sparsity.to_string()),
            ("seed", self.seed.to_string()),
            (
                "patience",
                self.patience.map_or_else(|| "none".to_string(), |p| p.to_string()),
            ),
        ]
    }
}

/// `lr_initial` up to the decay start, then a straight line that would
/// reach `lr_floor` at epoch `epochs`.
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    let start = config.lr_decay_start_epoch;
    if epoch < start || config.epochs <= start {
        return config.lr_initial;
    }
    let t = (epoch - start) as f64 / (config.epochs - start) as f64;
    config.lr_initial + (config.lr_floor - config.lr_initial) * t
}

/// Freshly initialized parameters for a run with `seed`.
pub fn init_params(shape: ModelShape, seed: u64) -> ModelParams {
    ModelParams::init(shape, &mut Rng::new(derive_seed(seed, &[STREAM_INIT])))
}

/// `θ ← θ − lr · g` for every parameter.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64) {
    for (theta, g) in params.arrays_mut().into_iter().zip(grads.arrays()) {
        for (t, d) in theta.iter_mut().zip(g) {
            *t -= lr * d;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Example-weighted mean over the epoch's batches.
    pub e_r: f64,
    /// Mean over the epoch's labeled examples.
    pub e_c: f64,
    pub e_total: f64,
    pub valid_accuracy: f64,
    pub seconds: f64,
}

pub const LOG_COLUMNS: &str = "epoch,learning_rate,e_r,e_c,e_total,valid_accuracy,seconds";

impl EpochRecord {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.learning_rate, self.e_r, self.e_c, self.e_total, self.valid_accuracy, self.seconds
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub header: Vec<(String, String)>,
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn best_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.records[e].valid_accuracy)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        write_log_header(&mut w, &self.header)?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

fn write_log_header(w: &mut impl Write, header: &[(String, String)]) -> Result<()> {
    for (k, v) in header {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "{LOG_COLUMNS}")?;
    Ok(())
}

/// What [`Trainer::train_observed`] reports while it runs.
pub enum TrainEvent<'a> {
    Step {
        epoch: usize,
        batch: usize,
        params: &'a ModelParams,
    },
    Epoch {
        record: &'a EpochRecord,
        params: &'a ModelParams,
    },
}

pub struct Trainer<'a> {
    config: TrainConfig,
    terms: LossTerms,
    collapse: Option<&'a CollapseMap>,
    log_path: Option<&'a Path>,
    extra_header: Vec<(String, String)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig) -> Self {
        Trainer {
            config,
            terms: LossTerms::JOINT,
            collapse: None,
            log_path: None,
            extra_header: Vec::new(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn terms(mut self, terms: LossTerms) -> Self {
        self.terms = terms;
        self
    }

    /// Score validation accuracy after folding through `map`.
    pub fn collapse_map(mut self, map: &'a CollapseMap) -> Self {
        self.collapse = Some(map);
        self
    }

    /// Append each epoch's record to this file as soon as it completes.
    pub fn log_to(mut self, path: &'a Path) -> Self {
        self.log_path = Some(path);
        self
    }

    /// Extra `key = value` lines for the log header.
    pub fn header(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.extra_header.push((key.into(), value.into()));
        self
    }

    pub fn train(&self, init: ModelParams, train: &StackedDataset, valid: &StackedDataset) -> Result<(ModelParams, TrainLog)> {
        self.train_observed(init, train, valid, |_| {})
    }

    pub fn train_observed(
        &self,
        init: ModelParams,
        train: &StackedDataset,
        valid: &StackedDataset,
        mut observe: impl FnMut(TrainEvent<'_>),
    ) -> Result<(ModelParams, TrainLog)> {
        let cfg = &self.config;
        cfg.validate()?;
        init.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        if valid.is_empty() {
            return Err(Error::Config("validation set is empty".into()));
        }
        let shape = init.shape();
        for (name, ds) in [("training", train), ("validation", valid)] {
            if ds.input_dim() != shape.input_dim {
                return Err(Error::Config(format!(
                    "{name} inputs have {} dimensions, the model expects {}",
                    ds.input_dim(),
                    shape.input_dim
                )));
            }
            if ds.label_bound() > shape.num_classes {
                return Err(Error::Config(format!(
                    "{name} labels reach {}, the model has {} classes",
                    ds.label_bound() - 1,
                    shape.num_classes
                )));
            }
        }
        let settings = LossSettings {
            alpha: cfg.alpha,
            sparsity: cfg.sparsity,
            terms: self.terms,
        };

        let mut header: Vec<(String, String)> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        header.push(("terms".into(), terms_name(self.terms).into()));
        header.push(("input_dim".into(), shape.input_dim.to_string()));
        header.push(("hidden_dim".into(), shape.hidden_dim.to_string()));
        header.push(("num_classes".into(), shape.num_classes.to_string()));
        header.push(("train_examples".into(), train.len().to_string()));
        header.push(("train_labeled".into(), train.labeled_count().to_string()));
        header.extend(self.extra_header.iter().cloned());

        let mut sink = match self.log_path {
            Some(path) => {
                let mut w = BufWriter::new(File::create(path)?);
                write_log_header(&mut w, &header)?;
                w.flush()?;
                Some(w)
            }
            None => None,
        };

        let mut log = TrainLog {
            header,
            records: Vec::new(),
            best_epoch: None,
        };
        let mut params = init.clone();
        let mut best = init;
        let mut best_acc = f64::NEG_INFINITY;
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, &[STREAM_SHUFFLE]));
        let mut corrupt_rng = Rng::new(derive_seed(cfg.seed, &[STREAM_CORRUPT]));
        let mut order: Vec<usize> = (0..train.len()).collect();

        for epoch in 0..cfg.epochs {
            let clock = Instant::now();
            let lr = learning_rate(cfg, epoch);
            shuffle_rng.shuffle(&mut order);
            let (mut sum_r, mut sum_c, mut sum_s) = (0.0, 0.0, 0.0);
            let mut labeled_seen = 0usize;
            for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let batch = gather_batch(train, chunk)?;
                let (loss, cache) = batch_loss(&params, &batch, &settings, &mut corrupt_rng, cfg.corruption_rate)?;
                if !loss.e_total.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: b,
                        detail: format!("e_r = {}, e_c = {}, e_total = {}", loss.e_r, loss.e_c, loss.e_total),
                    });
                }
                let grads = backward(&params, &batch, &cache, &settings)?;
                sgd_step(&mut params, &grads, lr);
                if !params.is_finite() {
                    return Err(Error::NonFinite {
                        epoch,
                        batch: b,
                        detail: "parameters left the finite range after the update".into(),
                    });
                }
                sum_r += loss.e_r * chunk.len() as f64;
                sum_s += loss.e_sparsity * chunk.len() as f64;
                sum_c += loss.e_c * loss.labeled_count as f64;
                labeled_seen += loss.labeled_count;
                observe(TrainEvent::Step {
                    epoch,
                    batch: b,
                    params: &params,
                });
            }
            let n = train.len() as f64;
            let e_r = sum_r / n;
            let e_c = if labeled_seen > 0 && self.terms.classification {
                sum_c / labeled_seen as f64
            } else {
                0.0
            };
            let mut e_total = if self.terms.reconstruction { e_r } else { 0.0 } + cfg.alpha * e_c;
            if cfg.sparsity != 0.0 {
                e_total += cfg.sparsity * sum_s / n;
            }
            let valid_accuracy = frame_accuracy(&params, valid, self.collapse)?;
            let record = EpochRecord {
                epoch,
                learning_rate: lr,
                e_r,
                e_c,
                e_total,
                valid_accuracy,
                seconds: clock.elapsed().as_secs_f64(),
            };
            if let Some(w) = sink.as_mut() {
                writeln!(w, "{}", record.csv_row())?;
                w.flush()?;
            }
            observe(TrainEvent::Epoch {
                record: &record,
                params: &params,
            });
            if valid_accuracy > best_acc {
                best_acc = valid_accuracy;
                best = params.clone();
                log.best_epoch = Some(epoch);
            }
            log.records.push(record);
            if let (Some(p), Some(b)) = (cfg.patience, log.best_epoch) {
                if epoch - b >= p {
                    break;
                }
            }
        }
        Ok((best, log))
    }
}

fn terms_name(terms: LossTerms) -> &'static str {
    match (terms.reconstruction, terms.classification) {
        (true, true) => "joint",
        (true, false) => "autoencoder",
        (false, true) => "classifier",
        (false, false) => "none",
    }
}

fn gather_batch(ds: &StackedDataset, indices: &[usize]) -> Result<Batch> {
    let mut x = Matrix::zeros(indices.len(), ds.input_dim());
    for (r, &i) in indices.iter().enumerate() {
        x.row_mut(r).copy_from_slice(ds.input(i));
    }
    Batch::new(x, indices.iter().map(|&i| ds.training_label(i)).collect())
}

/// A tanh-hidden-layer softmax classifier trained by cross-entropy on the
/// labeled examples of `train` only: no decoder, no corruption, `α = 1`.
/// The remaining settings come from `config`.
pub fn train_supervised_baseline(
    init: ModelParams,
    train: &StackedDataset,
    valid: &StackedDataset,
    config: &TrainConfig,
    collapse: Option<&CollapseMap>,
) -> Result<(ModelParams, TrainLog)> {
    let labeled = train.labeled_subset();
    if labeled.is_empty() {
        return Err(Error::Config("the supervised baseline needs at least one labeled example".into()));
    }
    let config = TrainConfig {
        alpha: 1.0,
        corruption_rate: 0.0,
        sparsity: 0.0,
        ..config.clone()
    };
    let mut trainer = Trainer::new(config).terms(LossTerms::CLASSIFIER);
    if let Some(map) = collapse {
        trainer = trainer.collapse_map(map);
    }
    trainer.train(init, &labeled, valid)
}
