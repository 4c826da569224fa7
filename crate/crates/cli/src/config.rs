//! Run configuration files.
//!
//! Plain UTF-8, `key = value` lines grouped under `[section]` headers; `#`
//! starts a comment. Every key is optional:
//!
//! ```text
//! [network]
//! input = 120x120          # H x W the images are rescaled to
//! input_channels = 1
//! conv = 50x11,120x5,120x3 # out_channels x kernel per conv layer
//! stride = 1               # one value, or one per conv layer
//! padding = 0
//! pool_after = 0,1         # 0-based conv indices followed by a 2x2 max-pool
//! fc = 10,2                # fully connected widths; the last must be 2
//!
//! [training]
//! batch_size = 128
//! learning_rate = 0.001
//! momentum = 0.9
//! iterations = 11000       # or: epochs = N (set only one)
//! eval_every = 100
//! class_weighted = false
//! record_timing = false
//!
//! [split]
//! train = 0.5
//! val = 0.25
//! test = 0.25
//!
//! [run]
//! seed = 0
//! data_dir = data
//! out_dir = out
//! threshold = 0.5
//! ```
//!
//! One seed drives everything: the split, weight initialisation and batch
//! shuffling each use `derive_seed(seed, "split" | "init" | "shuffle")`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dcnn::data::SplitSpec;
use dcnn::tensor::derive_seed;
use dcnn::training::{Budget, TrainingConfig};
use dcnn::{Error, NetworkConfig, Result};

const NETWORK_KEYS: &[&str] = &["input", "input_channels", "conv", "stride", "padding", "pool_after", "fc"];
const TRAINING_KEYS: &[&str] = &[
    "batch_size",
    "learning_rate",
    "momentum",
    "iterations",
    "epochs",
    "eval_every",
    "class_weighted",
    "record_timing",
];
const SPLIT_KEYS: &[&str] = &["train", "val", "test"];
const RUN_KEYS: &[&str] = &["seed", "data_dir", "out_dir", "threshold"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub split: SplitSpec,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            split: SplitSpec::default(),
            seed: 0,
            data_dir: None,
            out_dir: None,
            threshold: 0.5,
        };
        cfg.set_seed(0);
        cfg
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threshold: Option<f64>,
    pub iterations: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub record_timing: bool,
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                Self::parse(&text)?
            }
            None => RunConfig::default(),
        };
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        let mut cfg = RunConfig::default();
        let empty = BTreeMap::new();
        let get = |s: &str| sections.get(s).unwrap_or(&empty);

        let net: BTreeMap<String, String> = get("network")
            .iter()
            .map(|(k, v)| (format!("network.{k}"), v.clone()))
            .collect();
        cfg.network = NetworkConfig::from_kv(&net)?;

        let t = get("training");
        let tr = &mut cfg.training;
        if let Some(v) = t.get("batch_size") {
            tr.batch_size = parse_value(v, "training.batch_size")?;
        }
        if let Some(v) = t.get("learning_rate") {
            tr.learning_rate = parse_value(v, "training.learning_rate")?;
        }
        if let Some(v) = t.get("momentum") {
            tr.momentum = parse_value(v, "training.momentum")?;
        }
        match (t.get("iterations"), t.get("epochs")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("set only one of training.iterations and training.epochs".into()))
            }
            (Some(v), None) => tr.budget = Budget::Iterations(parse_value(v, "training.iterations")?),
            (None, Some(v)) => tr.budget = Budget::Epochs(parse_value(v, "training.epochs")?),
            (None, None) => {}
        }
        if let Some(v) = t.get("eval_every") {
            tr.eval_every = parse_value(v, "training.eval_every")?;
        }
        if let Some(v) = t.get("class_weighted") {
            tr.class_weighted = parse_value(v, "training.class_weighted")?;
        }
        if let Some(v) = t.get("record_timing") {
            tr.record_timing = parse_value(v, "training.record_timing")?;
        }

        let s = get("split");
        if let Some(v) = s.get("train") {
            cfg.split.train_frac = parse_value(v, "split.train")?;
        }
        if let Some(v) = s.get("val") {
            cfg.split.val_frac = parse_value(v, "split.val")?;
        }
        if let Some(v) = s.get("test") {
            cfg.split.test_frac = parse_value(v, "split.test")?;
        }

        let r = get("run");
        if let Some(v) = r.get("seed") {
            cfg.set_seed(parse_value(v, "run.seed")?);
        }
        cfg.data_dir = r.get("data_dir").map(PathBuf::from);
        cfg.out_dir = r.get("out_dir").map(PathBuf::from);
        if let Some(v) = r.get("threshold") {
            cfg.threshold = parse_value(v, "run.threshold")?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(seed) = o.seed {
            self.set_seed(seed);
        }
        if let Some(d) = &o.data_dir {
            self.data_dir = Some(d.clone());
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = Some(d.clone());
        }
        if let Some(t) = o.threshold {
            self.threshold = t;
        }
        match (o.iterations, o.epochs) {
            (Some(_), Some(_)) => return Err(Error::Config("pass only one of --iterations and --epochs".into())),
            (Some(n), None) => self.training.budget = Budget::Iterations(n),
            (None, Some(n)) => self.training.budget = Budget::Epochs(n),
            (None, None) => {}
        }
        if let Some(b) = o.batch_size {
            self.training.batch_size = b;
        }
        if let Some(lr) = o.learning_rate {
            self.training.learning_rate = lr;
        }
        self.training.record_timing |= o.record_timing;
        Ok(())
    }

    /// Sets the master seed and the split and shuffle sub-seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.split.seed = derive_seed(seed, "split");
        self.training.seed = derive_seed(seed, "shuffle");
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.shape_trace()?;
        self.training.validate()?;
        self.split.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must lie in [0, 1], got {}", self.threshold)));
        }
        Ok(())
    }
}

fn parse_value<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut out = Sections::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if known_keys(name).is_none() {
                return Err(Error::Config(format!("line {line_no}: unknown section [{name}]")));
            }
            out.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {line_no}: expected 'key = value', got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let section = current
            .as_deref()
            .ok_or_else(|| Error::Config(format!("line {line_no}: '{key}' appears before any [section]")))?;
        if !known_keys(section).unwrap_or(&[]).contains(&key) {
            return Err(Error::Config(format!("line {line_no}: unknown key '{key}' in [{section}]")));
        }
        let entries = out.entry(section.to_string()).or_default();
        if entries.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!("line {line_no}: duplicate key '{key}' in [{section}]")));
        }
    }
    Ok(out)
}

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    match section {
        "network" => Some(NETWORK_KEYS),
        "training" => Some(TRAINING_KEYS),
        "split" => Some(SPLIT_KEYS),
        "run" => Some(RUN_KEYS),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# reduced model
[network]
input = 64x64
conv = 8x7,16x5,16x3
pool_after = 0,1
fc = 10,2

[training]
batch_size = 32
iterations = 2000   # budget

[run]
seed = 1
data_dir = synth
";

    #[test]
    fn parses_sections_and_derives_seeds() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.network, NetworkConfig::reduced());
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.budget, Budget::Iterations(2000));
        assert_eq!(cfg.training.learning_rate, 0.001);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.split.seed, derive_seed(1, "split"));
        assert_eq!(cfg.training.seed, derive_seed(1, "shuffle"));
        assert_eq!(cfg.data_dir.as_deref(), Some(Path::new("synth")));
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::parse(SAMPLE).unwrap();
        cfg.apply(&Overrides {
            seed: Some(7),
            epochs: Some(3),
            threshold: Some(0.3),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.split.seed, derive_seed(7, "split"));
        assert_eq!(cfg.training.budget, Budget::Epochs(3));
        assert_eq!(cfg.threshold, 0.3);
        assert_eq!(cfg.training.batch_size, 32);
    }

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::default().network, NetworkConfig::default());
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            ("[nope]\n", "unknown section"),
            ("[training]\nlr = 1\n", "unknown key 'lr'"),
            ("seed = 1\n", "before any [section]"),
            ("[run]\nseed = 1\nseed = 2\n", "duplicate key"),
            ("[training]\nbatch_size = many\n", "training.batch_size"),
            ("[training]\niterations = 1\nepochs = 1\n", "only one"),
            ("[run]\nthreshold\n", "expected 'key = value'"),
        ] {
            let err = RunConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
        let mut cfg = RunConfig::default();
        cfg.threshold = 1.5;
        assert!(cfg.validate().is_err());
        cfg = RunConfig::parse("[network]\nfc = 10,3\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
