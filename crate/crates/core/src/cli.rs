//! The `sssae` command line.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, Settings};
use crate::data::{
    file_digest, prepare_synthetic, prepare_table, split_labels, CollapseMap, FrameTable, StackedDataset,
    SynthCorpusConfig, DEFAULT_CONTEXT,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_dataset, frame_accuracy};
use crate::model::{ModelParams, ModelShape};
use crate::objective::{backward, batch_loss, finite_difference_gradient, max_relative_error, Batch, LossSettings};
use crate::sweep::{run_sweep, SweepData, SweepSpec, DEFAULT_FRACTIONS};
use crate::tensor::{derive_seed, Rng};
use crate::trainer::{init_params, TrainConfig, Trainer};

/// Frame counts of the reference corpus splits. Two training counts are
/// in circulation for the same corpus; either is accepted.
pub const REFERENCE_TRAIN_FRAMES: [usize; 2] = [1_068_816, 1_068_818];
pub const REFERENCE_VALID_FRAMES: usize = 56_005;
pub const REFERENCE_TEST_FRAMES: usize = 57_919;

const DEFAULT_HIDDEN: usize = 1000;
const DEFAULT_BASELINE_HIDDEN: usize = 2000;

#[derive(Parser, Debug)]
#[command(
    name = "sssae",
    version,
    about = "Semi-supervised sparse autoencoder for frame-level phone classification"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Settings file of `key = value` lines
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Override a setting, e.g. `--set epochs=20`; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize, scale and context-stack frame tables into dataset caches
    Prepare(PrepareArgs),
    /// Train one model on prepared caches
    Train(TrainArgs),
    /// Score a checkpoint on a prepared cache
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
    /// Sweep labeled fractions and α, against the supervised baseline
    Sweep(SweepArgs),
    /// Write a synthetic speech-like corpus as frame tables
    Synth,
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Training frame table (key `train`)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation frame table (key `valid`)
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test frame table (key `test`)
    #[arg(long)]
    test: Option<PathBuf>,
    /// 48→39 phone map; the standard folding when omitted (key `map`)
    #[arg(long)]
    map: Option<PathBuf>,
    /// Frames of context on each side (key `context`, default 5)
    #[arg(long)]
    context: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training cache (key `train`)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation cache (key `valid`)
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Hidden units (key `hidden_dim`, default 1000)
    #[arg(long)]
    hidden: Option<usize>,
    /// Output classes (key `num_classes`, default 48)
    #[arg(long)]
    classes: Option<usize>,
    /// Weight of the classification term (key `alpha`, default 1)
    #[arg(long)]
    alpha: Option<f64>,
    /// Epochs (key `epochs`, default 50)
    #[arg(long)]
    epochs: Option<usize>,
    /// Keep only this fraction of training labels (key `fraction`)
    #[arg(long)]
    fraction: Option<f64>,
    /// joint, autoencoder or classifier (key `terms`, default joint)
    #[arg(long)]
    terms: Option<String>,
    /// Phone map for scoring validation (key `map`)
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint (key `model`)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset cache to score (key `data`)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Phone map (key `map`)
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Input dimension (key `input_dim`, default 8)
    #[arg(long)]
    input: Option<usize>,
    /// Hidden units (key `hidden_dim`, default 16)
    #[arg(long)]
    hidden: Option<usize>,
    /// Classes (key `num_classes`, default 4)
    #[arg(long)]
    classes: Option<usize>,
    /// Batch size (key `batch`, default 6)
    #[arg(long)]
    batch: Option<usize>,
    /// Labeled examples in the batch (key `labeled`, default 3)
    #[arg(long)]
    labeled: Option<usize>,
    /// Comma-separated α values (key `alphas`, default 0,1,100)
    #[arg(long)]
    alpha: Option<String>,
    /// Finite-difference step (key `step`, default 1e-5)
    #[arg(long)]
    step: Option<f64>,
    /// Largest acceptable relative error (key `threshold`, default 1e-6)
    #[arg(long)]
    threshold: Option<f64>,
    /// Add this to one analytic gradient entry before comparing
    #[arg(long, hide = true)]
    perturb: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Training cache, fully labeled (key `train`)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation cache (key `valid`)
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test cache (key `test`)
    #[arg(long)]
    test: Option<PathBuf>,
    /// Generate the data from the `synth.*` settings instead of caches
    #[arg(long)]
    synthetic: bool,
    /// Comma-separated labeled fractions (key `fractions`)
    #[arg(long)]
    fractions: Option<String>,
    /// Comma-separated α candidates (key `alphas`)
    #[arg(long)]
    alphas: Option<String>,
    /// Hidden units of the semi-supervised model (key `hidden_dim`)
    #[arg(long)]
    hidden: Option<usize>,
    /// Hidden units of the baseline (key `baseline_hidden_dim`)
    #[arg(long)]
    baseline_hidden: Option<usize>,
    /// Parallel sub-runs (key `workers`, default 1)
    #[arg(long)]
    workers: Option<usize>,
    /// Phone map (key `map`)
    #[arg(long)]
    map: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 user or configuration error, 2
/// numerical failure.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    let mut settings = match &cli.common.config {
        Some(path) => Settings::load(path)?,
        None => Settings::new(),
    };
    if let Some(seed) = cli.common.seed {
        settings.set("seed", seed, "command line");
    }
    let out = cli.common.out.clone();
    let overrides = cli.common.set.clone();
    let apply = |settings: &mut Settings, flags: Vec<(&str, Option<String>)>| -> Result<()> {
        for (k, v) in flags {
            if let Some(v) = v {
                settings.set(k, v, "command line");
            }
        }
        for pair in &overrides {
            settings.set_pair(pair)?;
        }
        Ok(())
    };
    let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
    let n = |v: Option<usize>| v.map(|x| x.to_string());
    match cli.command {
        Command::Prepare(a) => {
            apply(
                &mut settings,
                vec![
                    ("train", s(&a.train)),
                    ("valid", s(&a.valid)),
                    ("test", s(&a.test)),
                    ("map", s(&a.map)),
                    ("context", n(a.context)),
                ],
            )?;
            cmd_prepare(settings, &out)
        }
        Command::Train(a) => {
            apply(
                &mut settings,
                vec![
                    ("train", s(&a.train)),
                    ("valid", s(&a.valid)),
                    ("hidden_dim", n(a.hidden)),
                    ("num_classes", n(a.classes)),
                    ("alpha", a.alpha.map(|x| x.to_string())),
                    ("epochs", n(a.epochs)),
                    ("fraction", a.fraction.map(|x| x.to_string())),
                    ("terms", a.terms.clone()),
                    ("map", s(&a.map)),
                ],
            )?;
            cmd_train(settings, &out)
        }
        Command::Eval(a) => {
            apply(
                &mut settings,
                vec![("model", s(&a.model)), ("data", s(&a.data)), ("map", s(&a.map))],
            )?;
            cmd_eval(settings, &out)
        }
        Command::Gradcheck(a) => {
            apply(
                &mut settings,
                vec![
                    ("input_dim", n(a.input)),
                    ("hidden_dim", n(a.hidden)),
                    ("num_classes", n(a.classes)),
                    ("batch", n(a.batch)),
                    ("labeled", n(a.labeled)),
                    ("alphas", a.alpha.clone()),
                    ("step", a.step.map(|x| x.to_string())),
                    ("threshold", a.threshold.map(|x| x.to_string())),
                ],
            )?;
            cmd_gradcheck(settings, a.perturb)
        }
        Command::Sweep(a) => {
            apply(
                &mut settings,
                vec![
                    ("train", s(&a.train)),
                    ("valid", s(&a.valid)),
                    ("test", s(&a.test)),
                    ("fractions", a.fractions.clone()),
                    ("alphas", a.alphas.clone()),
                    ("hidden_dim", n(a.hidden)),
                    ("baseline_hidden_dim", n(a.baseline_hidden)),
                    ("workers", n(a.workers)),
                    ("map", s(&a.map)),
                ],
            )?;
            cmd_sweep(settings, &out, a.synthetic)
        }
        Command::Synth => {
            apply(&mut settings, Vec::new())?;
            cmd_synth(settings, &out)
        }
    }
}

fn required(settings: &mut Settings, key: &str, what: &str) -> Result<PathBuf> {
    settings
        .take::<PathBuf>(key)?
        .ok_or_else(|| Error::Config(format!("{what} is required (`--{key}` or `{key} = ...`)")))
}

fn load_map(settings: &mut Settings) -> Result<CollapseMap> {
    match settings.take::<PathBuf>("map")? {
        Some(path) => CollapseMap::load(path),
        None => Ok(CollapseMap::standard()),
    }
}

/// Writes through a temporary sibling and renames, so a failed write
/// never leaves a partial file behind.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn count_note(count: usize, reference: &[usize]) -> String {
    if reference.contains(&count) {
        format!(" (matches the reference corpus count {count})")
    } else {
        String::new()
    }
}

fn cmd_prepare(mut settings: Settings, out: &Path) -> Result<u8> {
    let train = required(&mut settings, "train", "a training frame table")?;
    let valid = settings.take::<PathBuf>("valid")?;
    let test = settings.take::<PathBuf>("test")?;
    let context = settings.take_or("context", DEFAULT_CONTEXT)?;
    let map = load_map(&mut settings)?;
    settings.finish()?;

    // read everything before writing anything
    let mut inputs = vec![("train", train, &REFERENCE_TRAIN_FRAMES[..])];
    if let Some(p) = valid {
        inputs.push(("valid", p, &[REFERENCE_VALID_FRAMES][..]));
    }
    if let Some(p) = test {
        inputs.push(("test", p, &[REFERENCE_TEST_FRAMES][..]));
    }
    let mut prepared = Vec::new();
    for (name, path, reference) in inputs {
        let table = FrameTable::load(&path, &map)?;
        if table.is_empty() {
            return Err(Error::Config(format!("{} has no frames", path.display())));
        }
        let ds = prepare_table(&table, context, context, file_digest(&path)?);
        prepared.push((name, ds, table.utterances().len(), reference));
    }
    fs::create_dir_all(out)?;
    for (name, ds, utterances, reference) in &prepared {
        let path = out.join(format!("{name}.ds"));
        write_file(&path, |w| ds.write_to(w))?;
        println!(
            "{name}: {} frames in {utterances} utterances, {} inputs per frame{} -> {}",
            ds.len(),
            ds.input_dim(),
            count_note(ds.len(), reference),
            path.display()
        );
    }
    Ok(0)
}

fn parse_terms(name: &str) -> Result<crate::objective::LossTerms> {
    use crate::objective::LossTerms;
    match name {
        "joint" => Ok(LossTerms::JOINT),
        "autoencoder" => Ok(LossTerms::AUTOENCODER),
        "classifier" => Ok(LossTerms::CLASSIFIER),
        other => Err(Error::Config(format!(
            "terms must be joint, autoencoder or classifier, got `{other}`"
        ))),
    }
}

/// Uses the phone map for scoring when the labels are phone indices.
fn scoring_map(map: &CollapseMap, num_classes: usize) -> Option<&CollapseMap> {
    (num_classes <= map.num_training()).then_some(map)
}

fn cmd_train(mut settings: Settings, out: &Path) -> Result<u8> {
    let train_path = required(&mut settings, "train", "a training cache")?;
    let valid_path = required(&mut settings, "valid", "a validation cache")?;
    let hidden = settings.take_or("hidden_dim", DEFAULT_HIDDEN)?;
    let classes = settings.take_or("num_classes", crate::data::phones::TRAINING_PHONES)?;
    let fraction = settings.take::<f64>("fraction")?;
    let terms_name = settings.take_or("terms", "joint".to_string())?;
    let terms = parse_terms(&terms_name)?;
    let map = load_map(&mut settings)?;
    let config = config::take_train_config(&mut settings, "", &TrainConfig::default())?;
    settings.finish()?;

    let mut train = StackedDataset::load(&train_path)?;
    let valid = StackedDataset::load(&valid_path)?;
    if let Some(f) = fraction {
        train = split_labels(&train, f, derive_seed(config.seed, &[0x5350]))?;
    }
    let shape = ModelShape::new(train.input_dim(), hidden, classes)?;
    fs::create_dir_all(out)?;
    let log_path = out.join("train_log.csv");
    let mut trainer = Trainer::new(config.clone())
        .terms(terms)
        .log_to(&log_path)
        .header("train_cache", train_path.display().to_string())
        .header("valid_cache", valid_path.display().to_string())
        .header("train_source", train.provenance().source_digest.clone())
        .header("fraction", fraction.map_or("1".into(), |f| f.to_string()));
    if let Some(m) = scoring_map(&map, classes) {
        trainer = trainer.collapse_map(m);
    }
    let (params, log) = trainer.train(init_params(shape, config.seed), &train, &valid)?;
    let ckpt = out.join("model.ckpt");
    write_file(&ckpt, |w| params.write_to(w))?;
    match (log.best_epoch, log.best_accuracy()) {
        (Some(e), Some(acc)) => println!(
            "validation accuracy {:.2}% at epoch {e}; checkpoint {}",
            100.0 * acc,
            ckpt.display()
        ),
        _ => println!(
            "no epochs run; validation accuracy {:.2}%; checkpoint {}",
            100.0 * frame_accuracy(&params, &valid, scoring_map(&map, classes))?,
            ckpt.display()
        ),
    }
    Ok(0)
}

fn cmd_eval(mut settings: Settings, out: &Path) -> Result<u8> {
    let model = required(&mut settings, "model", "a checkpoint")?;
    let data = required(&mut settings, "data", "a dataset cache")?;
    let map = load_map(&mut settings)?;
    settings.take::<u64>("seed")?;
    settings.finish()?;
    let params = ModelParams::load(&model)?;
    let ds = StackedDataset::load(&data)?;
    let report = evaluate_dataset(&params, &ds, &map)?;
    fs::create_dir_all(out)?;
    let path = out.join("eval.csv");
    write_file(&path, |w| report.write_csv(w))?;
    println!(
        "frame accuracy {:.2}% over {} frames ({:.2}% before folding); report {}",
        100.0 * report.frame_accuracy_collapsed,
        report.num_frames,
        100.0 * report.frame_accuracy_raw,
        path.display()
    );
    Ok(0)
}

fn cmd_gradcheck(mut settings: Settings, perturb: Option<f64>) -> Result<u8> {
    let input = settings.take_or("input_dim", 8usize)?;
    let hidden = settings.take_or("hidden_dim", 16usize)?;
    let classes = settings.take_or("num_classes", 4usize)?;
    let batch_size = settings.take_or("batch", 6usize)?;
    let labeled = settings.take_or("labeled", 3usize)?;
    let alphas = settings.take_list::<f64>("alphas")?.unwrap_or(vec![0.0, 1.0, 100.0]);
    let step: f64 = settings.take_or("step", 1e-5)?;
    let threshold = settings.take_or("threshold", 1e-6)?;
    let corruption = settings.take_or("corruption_rate", 0.2)?;
    let seed = settings.take_or("seed", 0u64)?;
    settings.finish()?;
    if labeled > batch_size || batch_size == 0 || step.is_nan() || step <= 0.0 {
        return Err(Error::Config(format!(
            "need 0 < batch, labeled ≤ batch and step > 0 (batch {batch_size}, labeled {labeled}, step {step})"
        )));
    }

    let shape = ModelShape::new(input, hidden, classes)?;
    let mut rng = Rng::new(derive_seed(seed, &[1]));
    let mut params = ModelParams::init(shape, &mut rng);
    for a in params.arrays_mut() {
        for v in a.iter_mut() {
            *v += rng.uniform(-0.3, 0.3);
        }
    }
    let rows: Vec<Vec<f64>> = (0..batch_size)
        .map(|_| (0..input).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect();
    let labels = (0..batch_size)
        .map(|i| (i < labeled).then(|| rng.below(classes as u64) as usize))
        .collect();
    let batch = Batch::from_rows(&rows, labels)?;
    let corruption_seed = derive_seed(seed, &[2]);

    let mut worst: Option<(f64, String)> = None;
    for &alpha in &alphas {
        let settings = LossSettings::joint(alpha);
        let (_, cache) = batch_loss(&params, &batch, &settings, &mut Rng::new(corruption_seed), corruption)?;
        let mut analytic = backward(&params, &batch, &cache, &settings)?;
        if let Some(delta) = perturb {
            analytic.w_enc.as_mut_slice()[0] += delta;
        }
        let numeric = finite_difference_gradient(&params, &batch, &settings, step, corruption, corruption_seed)?;
        let d = max_relative_error(&analytic, &numeric);
        let failed = d.max_relative_error.is_nan() || d.max_relative_error >= threshold;
        let verdict = if failed { "FAILED" } else { "ok" };
        println!(
            "alpha {alpha}: max relative error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}) {verdict}",
            d.max_relative_error, d.param, d.index, d.lhs, d.rhs
        );
        if failed && worst.as_ref().is_none_or(|(e, _)| d.max_relative_error > *e) {
            worst = Some((
                d.max_relative_error,
                format!(
                    "alpha {alpha}: relative error {:.3e} at {}[{}] exceeds {threshold:e}",
                    d.max_relative_error, d.param, d.index
                ),
            ));
        }
    }
    match worst {
        None => Ok(0),
        Some((_, msg)) => Err(Error::GradientCheck(msg)),
    }
}

fn cmd_synth(mut settings: Settings, out: &Path) -> Result<u8> {
    let mut base = SynthCorpusConfig::default();
    if let Some(seed) = settings.take::<u64>("seed")? {
        base.seed = seed;
    }
    let config = config::take_synth_config(&mut settings, &base)?;
    let map = load_map(&mut settings)?;
    settings.finish()?;
    let corpus = crate::data::generate_corpus(&config, &map)?;
    fs::create_dir_all(out)?;
    for (name, table) in [("train", &corpus.train), ("valid", &corpus.valid), ("test", &corpus.test)] {
        let path = out.join(format!("{name}.csv"));
        write_file(&path, |w| table.write_csv(w, &map))?;
        println!("{name}: {} frames in {} utterances -> {}", table.len(), table.utterances().len(), path.display());
    }
    write_file(&out.join("synth_config.txt"), |w| {
        Ok(w.write_all(config::render(&config::synth_entries(&config)).as_bytes())?)
    })?;
    Ok(0)
}

fn cmd_sweep(mut settings: Settings, out: &Path, synthetic: bool) -> Result<u8> {
    let seed = settings.take_or("seed", 0u64)?;
    let fractions = settings.take_list::<f64>("fractions")?.unwrap_or(DEFAULT_FRACTIONS.to_vec());
    let alphas = settings
        .take_list::<f64>("alphas")?
        .unwrap_or(vec![0.0, 1.0, 10.0, 100.0, 1000.0]);
    let hidden_dim = settings.take_or("hidden_dim", DEFAULT_HIDDEN)?;
    let baseline_hidden_dim = settings.take_or("baseline_hidden_dim", DEFAULT_BASELINE_HIDDEN)?;
    let num_classes = settings.take_or("num_classes", crate::data::phones::TRAINING_PHONES)?;
    let workers = settings.take_or("workers", 1usize)?;
    let context = settings.take_or("context", DEFAULT_CONTEXT)?;
    let map = load_map(&mut settings)?;
    let sssae = config::take_train_config(&mut settings, "", &TrainConfig::default())?;
    let baseline = config::take_train_config(&mut settings, "baseline.", &sssae)?;

    let mut effective = Vec::new();
    let [train, valid, test] = if synthetic {
        let synth = config::take_synth_config(
            &mut settings,
            &SynthCorpusConfig {
                seed,
                ..SynthCorpusConfig::default()
            },
        )?;
        settings.finish()?;
        effective.extend(config::synth_entries(&synth));
        prepare_synthetic(&synth, &map, context)?
    } else {
        let paths = [
            required(&mut settings, "train", "a training cache")?,
            required(&mut settings, "valid", "a validation cache")?,
            required(&mut settings, "test", "a test cache")?,
        ];
        settings.finish()?;
        for (k, p) in ["train", "valid", "test"].iter().zip(&paths) {
            effective.push((k.to_string(), p.display().to_string()));
        }
        let [a, b, c] = paths;
        [StackedDataset::load(a)?, StackedDataset::load(b)?, StackedDataset::load(c)?]
    };

    let spec = SweepSpec {
        fractions,
        alphas,
        hidden_dim,
        baseline_hidden_dim,
        num_classes,
        sssae,
        baseline,
        seed,
        workers,
    };
    spec.validate()?;
    let mut entries = spec.entries();
    entries.push(("context".into(), context.to_string()));
    entries.extend(effective);

    fs::create_dir_all(out)?;
    write_file(&out.join("sweep_config.txt"), |w| Ok(w.write_all(config::render(&entries).as_bytes())?))?;
    let data = SweepData {
        train: &train,
        valid: &valid,
        test: &test,
        collapse: scoring_map(&map, num_classes),
    };
    let result = run_sweep(&spec, &data, &|line| eprintln!("{line}"))?;
    write_file(&out.join("sweep.csv"), |w| result.write_table(w))?;
    write_file(&out.join("alpha_grid.csv"), |w| result.write_alpha_grid(w))?;
    write_file(&out.join("curve.csv"), |w| result.write_curve(w))?;
    let mut table = Vec::new();
    result.write_table(&mut table)?;
    print!("{}", String::from_utf8_lossy(&table));

    let failures = result.failures();
    for (what, f) in &failures {
        eprintln!("failed: {what}: {}", f.message);
    }
    Ok(failures.iter().map(|(_, f)| f.exit_code).max().unwrap_or(0))
}
