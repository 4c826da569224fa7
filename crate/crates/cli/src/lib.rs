//! The `dcnn` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or I/O
//! error, 4 numeric failure (divergence, failed gradient check).

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcnn::data::{generate_synthetic, load_dataset, load_image, rescale, split, write_dataset, LabeledDataset, SplitSpec};
use dcnn::gradcheck::{run_gradcheck, GradcheckOptions};
use dcnn::metrics::evaluate;
use dcnn::network::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint};
use dcnn::training::{train, TrainError};
use dcnn::{Network, Rng};

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "dcnn", version, about = "Train and evaluate a convolutional CT-slice classifier")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Directory holding labels.csv and the images
    #[arg(long, global = true, value_name = "PATH")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to load
    #[arg(long, global = true, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Decision threshold on p(cancer)
    #[arg(long, global = true, value_name = "FLOAT")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write checkpoints, curves.csv and val_report.json
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset
    Eval(EvalArgs),
    /// Classify a single PNG image
    Predict(PredictArgs),
    /// Write a synthetic disk/no-disk dataset
    Synth(SynthArgs),
    /// Check every analytical gradient against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, conflicts_with = "iterations")]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    /// Record wall-clock milliseconds in curves.csv (makes it non-reproducible)
    #[arg(long)]
    pub record_timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    pub image: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of images; must be even
    #[arg(long)]
    pub n: usize,
    /// Image side length in pixels
    #[arg(long, default_value_t = 120)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, hide = true)]
    pub perturb: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] dcnn::Error),
    #[error("training diverged at iteration {iteration} (loss {loss}); last good network saved to {saved}")]
    Diverged { iteration: usize, loss: f64, saved: String },
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use dcnn::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Config(_) | E::LayerConfig { .. } | E::Argument(_) => 2,
                E::Shape(_) | E::Format { .. } | E::Load(_) | E::Io { .. } => 3,
                E::Numeric(_) | E::State(_) => 4,
            },
            CliError::Diverged { .. } | CliError::GradcheckFailed(_) => 4,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&cli.common, a),
        Command::Eval(a) => cmd_eval(&cli.common, a),
        Command::Predict(a) => cmd_predict(&cli.common, a),
        Command::Synth(a) => cmd_synth(&cli.common, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn require<'a>(v: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn load_for(dir: &Path, hw: (usize, usize)) -> CliResult<LabeledDataset> {
    Ok(load_dataset(dir)?.rescaled(hw)?)
}

fn split_metadata(cfg: &RunConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("run.seed".to_string(), cfg.seed.to_string()),
        ("run.threshold".to_string(), cfg.threshold.to_string()),
        ("split.seed".to_string(), cfg.split.seed.to_string()),
        ("split.train".to_string(), cfg.split.train_frac.to_string()),
        ("split.val".to_string(), cfg.split.val_frac.to_string()),
        ("split.test".to_string(), cfg.split.test_frac.to_string()),
    ])
}

fn split_from_metadata(meta: &BTreeMap<String, String>) -> Option<SplitSpec> {
    let f = |k: &str| meta.get(k)?.parse::<f64>().ok();
    Some(SplitSpec {
        train_frac: f("split.train")?,
        val_frac: f("split.val")?,
        test_frac: f("split.test")?,
        seed: meta.get("split.seed")?.parse().ok()?,
    })
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> CliResult<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Core(dcnn::Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|source| {
        CliError::Core(dcnn::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

fn cmd_train(common: &CommonArgs, args: &TrainArgs) -> CliResult<()> {
    let overrides = Overrides {
        seed: common.seed,
        data_dir: common.data_dir.clone(),
        out_dir: common.out_dir.clone(),
        threshold: common.threshold,
        iterations: args.iterations,
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        record_timing: args.record_timing,
    };
    let cfg = RunConfig::resolve(common.config.as_deref(), &overrides)?;
    if cfg.network.input_channels != 1 {
        return Err(CliError::Usage("images are grayscale; network.input_channels must be 1".into()));
    }
    let data_dir = require(&cfg.data_dir, "--data-dir (or run.data_dir)")?;
    let out_dir = require(&cfg.out_dir, "--out-dir (or run.out_dir)")?;

    let ds = load_for(data_dir, cfg.network.input_hw)?;
    let splits = split(&ds, &cfg.split)?;
    for w in &splits.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out_dir).map_err(|source| dcnn::Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let net = Network::build(cfg.network.clone(), &mut Rng::new(cfg.init_seed()))?;
    let meta = split_metadata(&cfg);

    let outcome = match train(net, &splits.train, &splits.val, &cfg.training) {
        Ok(o) => o,
        Err(TrainError::Invalid(e)) => return Err(e.into()),
        Err(TrainError::Diverged { iteration, loss, last_good, log }) => {
            let path = out_dir.join("best.ckpt");
            save_checkpoint(&last_good, &meta, &path)?;
            write_file(&out_dir.join("curves.csv"), &log.to_csv())?;
            return Err(CliError::Diverged {
                iteration,
                loss,
                saved: path.display().to_string(),
            });
        }
    };

    let mut best_meta = meta.clone();
    best_meta.insert("train.iteration".into(), outcome.best_iteration.to_string());
    save_checkpoint(&outcome.best, &best_meta, &out_dir.join("best.ckpt"))?;
    let mut final_meta = meta;
    let last_iter = outcome.log.records.last().map_or(0, |r| r.iteration);
    final_meta.insert("train.iteration".into(), last_iter.to_string());
    save_checkpoint(&outcome.last, &final_meta, &out_dir.join("final.ckpt"))?;
    write_file(&out_dir.join("curves.csv"), &outcome.log.to_csv())?;
    let report = evaluate(&outcome.best, &splits.val, cfg.threshold)?;
    write_file(&out_dir.join("val_report.json"), &(report.to_json() + "\n"))?;

    emit(&format!(
        "train={} val={} test={}\nbest_iteration={}\nbest_val_loss={}\nwrote {}\n",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        outcome.best_iteration,
        outcome.best_val_loss,
        out_dir.display()
    ))
}

fn cmd_eval(common: &CommonArgs, args: &EvalArgs) -> CliResult<()> {
    let model = require(&common.model, "--model")?;
    let cfg = RunConfig::resolve(
        common.config.as_deref(),
        &Overrides {
            data_dir: common.data_dir.clone(),
            ..Default::default()
        },
    )?;
    let data_dir = require(&cfg.data_dir, "--data-dir (or run.data_dir)")?;
    let Checkpoint { network, metadata } = match &common.config {
        Some(_) => load_checkpoint_expecting(model, &cfg.network)?,
        None => load_checkpoint(model)?,
    };
    let threshold = match common.threshold {
        Some(t) => t,
        None => metadata
            .get("run.threshold")
            .and_then(|t| t.parse().ok())
            .unwrap_or(cfg.threshold),
    };
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    // the checkpoint remembers how its data was split; an explicit --seed re-derives it
    let spec = match (common.seed, split_from_metadata(&metadata)) {
        (None, Some(spec)) => spec,
        _ => {
            let mut c = cfg.clone();
            c.set_seed(common.seed.unwrap_or(cfg.seed));
            c.split
        }
    };

    let ds = load_for(data_dir, network.config().input_hw)?;
    let subset = match args.split {
        SplitName::All => ds,
        other => {
            let s = split(&ds, &spec)?;
            match other {
                SplitName::Train => s.train,
                SplitName::Val => s.val,
                _ => s.test,
            }
        }
    };
    let report = evaluate(&network, &subset, threshold)?;
    eprint!("{}", report.render_text());
    emit(&(report.to_json() + "\n"))
}

fn cmd_predict(common: &CommonArgs, args: &PredictArgs) -> CliResult<()> {
    let model = require(&common.model, "--model")?;
    let Checkpoint { network, metadata } = load_checkpoint(model)?;
    let threshold = common
        .threshold
        .or_else(|| metadata.get("run.threshold").and_then(|t| t.parse().ok()))
        .unwrap_or(0.5);
    let (h, w) = network.config().input_hw;
    let image = rescale(&load_image(&args.image)?, (h, w))?.reshape(&[1, 1, h, w])?;
    let probs = network.predict(&image)?;
    let (p_free, p_cancer) = (probs.data()[0], probs.data()[1]);
    let decision = if p_cancer as f64 >= threshold { "cancer" } else { "cancer-free" };
    emit(&format!("p_cancer={p_cancer}\np_free={p_free}\ndecision={decision}\n"))
}

fn cmd_synth(common: &CommonArgs, args: &SynthArgs) -> CliResult<()> {
    let out_dir = require(&common.out_dir, "--out-dir")?;
    let ds = generate_synthetic(args.n, (args.size, args.size), common.seed.unwrap_or(0))?;
    write_dataset(&ds, out_dir)?;
    let (free, cancer) = ds.class_counts();
    emit(&format!(
        "wrote {} images ({cancer} cancer, {free} cancer-free) to {}\n",
        ds.len(),
        out_dir.display()
    ))
}

fn cmd_gradcheck(common: &CommonArgs, args: &GradcheckArgs) -> CliResult<()> {
    let report = run_gradcheck(common.seed.unwrap_or(0), &GradcheckOptions { perturb: args.perturb })?;
    emit(&report.render())?;
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        Err(CliError::GradcheckFailed(names.join(", ")))
    }
}
