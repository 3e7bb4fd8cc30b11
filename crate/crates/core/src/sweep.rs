//! Labeled-fraction sweeps: for each fraction, split the labels once, train
//! the supervised baseline and one semi-supervised model per α candidate,
//! pick α on validation accuracy and report test accuracy for both.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{split_labels, CollapseMap, StackedDataset};
use crate::error::{Error, Result};
use crate::evaluation::frame_accuracy;
use crate::model::ModelShape;
use crate::tensor::derive_seed;
use crate::trainer::{init_params, train_supervised_baseline, TrainConfig, Trainer};

/// Column header of the main results table.
pub const TABLE_COLUMNS: &str = "labeled_pct,labeled_count,nn_valid_acc,nn_test_acc,sssae_valid_acc,sssae_test_acc,alpha";
pub const GRID_COLUMNS: &str = "labeled_pct,labeled_count,alpha,valid_acc,test_acc,status";
pub const CURVE_COLUMNS: &str = "labeled_pct,nn_test_acc,sssae_test_acc";

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.01, 0.03, 0.05, 0.10, 0.20, 0.30];

const TAG_SPLIT: u64 = 0x5350;
const TAG_BASELINE: u64 = 0x4e4e;
const TAG_JOINT: u64 = 0x5353;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
    pub alphas: Vec<f64>,
    pub hidden_dim: usize,
    pub baseline_hidden_dim: usize,
    pub num_classes: usize,
    /// Template for the semi-supervised runs; `alpha` and `seed` are
    /// replaced per run.
    pub sssae: TrainConfig,
    /// Template for the baseline runs; `seed` is replaced per run.
    pub baseline: TrainConfig,
    pub seed: u64,
    pub workers: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::Config(format!("fractions must be a nonempty list in (0, 1], got {:?}", self.fractions)));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Config(format!("alphas must be a nonempty list of values ≥ 0, got {:?}", self.alphas)));
        }
        if self.hidden_dim == 0 || self.baseline_hidden_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("hidden sizes and class count must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.sssae.validate()?;
        self.baseline.validate()
    }

    /// Every effective setting, in `key = value` spelling.
    pub fn entries(&self) -> Vec<(String, String)> {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("fractions".to_string(), list(&self.fractions)),
            ("alphas".to_string(), list(&self.alphas)),
            ("hidden_dim".to_string(), self.hidden_dim.to_string()),
            ("baseline_hidden_dim".to_string(), self.baseline_hidden_dim.to_string()),
            ("num_classes".to_string(), self.num_classes.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("workers".to_string(), self.workers.to_string()),
        ];
        for (k, v) in self.sssae.entries() {
            if k != "alpha" && k != "seed" {
                out.push((k.to_string(), v));
            }
        }
        for (k, v) in self.baseline.entries() {
            if k != "alpha" && k != "seed" && k != "corruption_rate" && k != "sparsity" {
                out.push((format!("baseline.{k}"), v));
            }
        }
        out
    }
}

/// The data a sweep runs on. `train` must be fully labeled.
pub struct SweepData<'a> {
    pub train: &'a StackedDataset,
    pub valid: &'a StackedDataset,
    pub test: &'a StackedDataset,
    /// Fold accuracies through this map when given.
    pub collapse: Option<&'a CollapseMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub valid: f64,
    pub test: f64,
}

/// Why a sub-run produced no scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFailure {
    pub message: String,
    /// Process exit code the failure maps to.
    pub exit_code: u8,
}

pub type RunOutcome = std::result::Result<Scores, RunFailure>;

#[derive(Clone, Debug, PartialEq)]
pub struct AlphaRun {
    pub alpha: f64,
    pub scores: RunOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FractionResult {
    pub fraction: f64,
    pub labeled_count: usize,
    pub baseline: RunOutcome,
    /// In ascending α order.
    pub runs: Vec<AlphaRun>,
    /// Index into `runs` of the best validation accuracy (ties → smallest α).
    pub best: Option<usize>,
}

impl FractionResult {
    pub fn best_run(&self) -> Option<(&AlphaRun, &Scores)> {
        let run = &self.runs[self.best?];
        run.scores.as_ref().ok().map(|s| (run, s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<FractionResult>,
}

impl SweepResult {
    /// `(description, failure)` for every sub-run that failed.
    pub fn failures(&self) -> Vec<(String, &RunFailure)> {
        let mut out = Vec::new();
        for row in &self.rows {
            if let Err(e) = &row.baseline {
                out.push((format!("fraction {}, baseline", row.fraction), e));
            }
            for r in &row.runs {
                if let Err(e) = &r.scores {
                    out.push((format!("fraction {}, alpha {}", row.fraction, r.alpha), e));
                }
            }
        }
        out
    }

    pub fn write_table(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{TABLE_COLUMNS}")?;
        for row in &self.rows {
            let (nv, nt) = pct_pair(row.baseline.as_ref().ok());
            let best = row.best_run();
            let (sv, st) = pct_pair(best.map(|(_, s)| s));
            let alpha = best.map_or_else(|| "NA".to_string(), |(r, _)| r.alpha.to_string());
            writeln!(w, "{},{},{nv},{nt},{sv},{st},{alpha}", pct(row.fraction), row.labeled_count)?;
        }
        Ok(())
    }

    pub fn write_alpha_grid(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{GRID_COLUMNS}")?;
        for row in &self.rows {
            let mut line = |alpha: &str, scores: &RunOutcome| -> Result<()> {
                let (v, t) = pct_pair(scores.as_ref().ok());
                let status = if scores.is_ok() { "ok" } else { "failed" };
                writeln!(w, "{},{},{alpha},{v},{t},{status}", pct(row.fraction), row.labeled_count)?;
                Ok(())
            };
            line("baseline", &row.baseline)?;
            for r in &row.runs {
                line(&r.alpha.to_string(), &r.scores)?;
            }
        }
        Ok(())
    }

    pub fn write_curve(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{CURVE_COLUMNS}")?;
        for row in &self.rows {
            let (_, nt) = pct_pair(row.baseline.as_ref().ok());
            let (_, st) = pct_pair(row.best_run().map(|(_, s)| s));
            writeln!(w, "{},{nt},{st}", pct(row.fraction))?;
        }
        Ok(())
    }
}

fn pct(fraction: f64) -> String {
    // fractions like 0.07 are not exact in binary; four decimals hide that
    let p = format!("{:.4}", fraction * 100.0);
    p.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn pct_pair(s: Option<&Scores>) -> (String, String) {
    match s {
        Some(s) => (format!("{:.2}", 100.0 * s.valid), format!("{:.2}", 100.0 * s.test)),
        None => ("NA".into(), "NA".into()),
    }
}

/// Seed of the label split for `fraction`.
pub fn split_seed(master: u64, fraction: f64) -> u64 {
    derive_seed(master, &[TAG_SPLIT, fraction.to_bits()])
}

/// Seed of the baseline run at `fraction`.
pub fn baseline_seed(master: u64, fraction: f64) -> u64 {
    derive_seed(master, &[TAG_BASELINE, fraction.to_bits()])
}

/// Seed of the semi-supervised run at `fraction` and `alpha`.
pub fn joint_seed(master: u64, fraction: f64, alpha: f64) -> u64 {
    derive_seed(master, &[TAG_JOINT, fraction.to_bits(), alpha.to_bits()])
}

enum Job {
    Baseline,
    Joint(f64),
}

/// Runs the whole sweep. Sub-runs of one fraction execute in parallel on
/// up to `spec.workers` threads; results do not depend on the worker count.
pub fn run_sweep(spec: &SweepSpec, data: &SweepData<'_>, progress: &(dyn Fn(&str) + Sync)) -> Result<SweepResult> {
    spec.validate()?;
    if data.train.labeled_count() != data.train.len() {
        return Err(Error::Config("the sweep splits labels itself and needs a fully labeled training set".into()));
    }
    let mut alphas = spec.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", spec.workers)))?;

    let input_dim = data.train.input_dim();
    let joint_shape = ModelShape::new(input_dim, spec.hidden_dim, spec.num_classes)?;
    let baseline_shape = ModelShape::new(input_dim, spec.baseline_hidden_dim, spec.num_classes)?;

    let mut rows = Vec::with_capacity(spec.fractions.len());
    for &fraction in &spec.fractions {
        let split = split_labels(data.train, fraction, split_seed(spec.seed, fraction))?;
        let jobs: Vec<Job> = std::iter::once(Job::Baseline)
            .chain(alphas.iter().map(|&a| Job::Joint(a)))
            .collect();
        let outcomes: Vec<RunOutcome> = pool.install(|| {
            jobs.par_iter()
                .map(|job| {
                    let (label, outcome) = match *job {
                        Job::Baseline => {
                            let seed = baseline_seed(spec.seed, fraction);
                            let config = TrainConfig { seed, ..spec.baseline.clone() };
                            let run = train_supervised_baseline(init_params(baseline_shape, seed), &split, data.valid, &config, data.collapse);
                            ("baseline".to_string(), run.and_then(|(p, _)| score(&p, data)))
                        }
                        Job::Joint(alpha) => {
                            let seed = joint_seed(spec.seed, fraction, alpha);
                            let config = TrainConfig { alpha, seed, ..spec.sssae.clone() };
                            let mut trainer = Trainer::new(config);
                            if let Some(map) = data.collapse {
                                trainer = trainer.collapse_map(map);
                            }
                            let run = trainer.train(init_params(joint_shape, seed), &split, data.valid);
                            (format!("alpha {alpha}"), run.and_then(|(p, _)| score(&p, data)))
                        }
                    };
                    match &outcome {
                        Ok(s) => progress(&format!(
                            "fraction {fraction}, {label}: valid {:.2}%, test {:.2}%",
                            100.0 * s.valid,
                            100.0 * s.test
                        )),
                        Err(e) => progress(&format!("fraction {fraction}, {label}: failed: {e}")),
                    }
                    outcome.map_err(|e| RunFailure {
                        message: e.to_string(),
                        exit_code: e.exit_code(),
                    })
                })
                .collect()
        });
        let mut outcomes = outcomes.into_iter();
        let baseline = outcomes.next().expect("baseline job");
        let runs: Vec<AlphaRun> = alphas
            .iter()
            .zip(outcomes)
            .map(|(&alpha, scores)| AlphaRun { alpha, scores })
            .collect();
        rows.push(FractionResult {
            fraction,
            labeled_count: split.labeled_count(),
            baseline,
            best: select_best(&runs),
            runs,
        });
    }
    Ok(SweepResult { rows })
}

fn score(params: &crate::model::ModelParams, data: &SweepData<'_>) -> Result<Scores> {
    Ok(Scores {
        valid: frame_accuracy(params, data.valid, data.collapse)?,
        test: frame_accuracy(params, data.test, data.collapse)?,
    })
}

/// Highest validation accuracy; `runs` is in ascending α order, so the
/// first maximum is the smallest α.
fn select_best(runs: &[AlphaRun]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in runs.iter().enumerate() {
        if let Ok(s) = &r.scores {
            if best.is_none_or(|(_, v)| s.valid > v) {
                best = Some((i, s.valid));
            }
        }
    }
    best.map(|(i, _)| i)
}
