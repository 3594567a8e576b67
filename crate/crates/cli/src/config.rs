//! Run configuration: `key = value` files with `[sections]`, overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use flowvae::classifiers::{DEFAULT_BATCH_SIZE, DEFAULT_LOG_INTERVAL};

pub const SEED_ENV: &str = "FLOWVAE_SEED";

/// A problem with the configuration itself (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Eight classes over the 76-feature layout.
    Demo,
    /// Two unit-spread clusters over the 40 ranked features, 6σ apart.
    Binary,
}

impl SyntheticKind {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticKind::Demo => "demo",
            SyntheticKind::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "demo" => Some(Self::Demo),
            "binary" | "two-cluster" => Some(Self::Binary),
            _ => None,
        }
    }
}

/// Every knob of a run. `None` means unset; defaults are applied by the accessors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub synthetic: Option<SyntheticKind>,
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub steps: Option<usize>,
    pub steps2: Option<usize>,
    pub lr: Option<f64>,
    pub stage2_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub log_interval: Option<usize>,
    pub channels: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub repeats: Option<usize>,
    pub threshold: Option<f64>,
    pub capacity: Option<usize>,
    pub window: Option<usize>,
}

pub const DEFAULT_PRESET: &str = "4b";
pub const DEFAULT_OUT: &str = "out";
pub const DEFAULT_CHANNELS: usize = flowvae::vae::DEFAULT_CHANNELS;
pub const DEFAULT_ITERATIONS: usize = 100;
pub const DEFAULT_REPEATS: usize = 3;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// (section, key) pairs in dump order.
const KEYS: [(&str, &str); 20] = [
    ("run", "preset"),
    ("run", "seed"),
    ("run", "out"),
    ("data", "synthetic"),
    ("data", "train"),
    ("data", "val"),
    ("data", "test"),
    ("train", "steps"),
    ("train", "steps2"),
    ("train", "lr"),
    ("train", "stage2_lr"),
    ("train", "batch_size"),
    ("train", "log_interval"),
    ("train", "channels"),
    ("eval", "checkpoint"),
    ("eval", "iterations"),
    ("eval", "repeats"),
    ("gate", "threshold"),
    ("gate", "capacity"),
    ("gate", "window"),
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| bad(format!("{key}: cannot parse {v:?}")))
}

impl Settings {
    /// Parses a config file body. Blank values leave the key unset.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(bad(format!("line {}: expected `key = value`", n + 1)));
            };
            let key = k.trim().to_ascii_lowercase();
            let value = v.trim().trim_matches('"');
            if !KEYS.contains(&(section.as_str(), key.as_str())) {
                return Err(bad(format!(
                    "line {}: unknown key [{section}] {key}",
                    n + 1
                )));
            }
            if !value.is_empty() {
                s.set(&key, value)?;
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "preset" => self.preset = Some(v.to_string()),
            "seed" => self.seed = Some(num(key, v)?),
            "out" => self.out = Some(v.into()),
            "synthetic" => {
                self.synthetic =
                    Some(SyntheticKind::parse(v).ok_or_else(|| {
                        bad(format!("unknown synthetic set {v:?} (demo, binary)"))
                    })?)
            }
            "train" => self.train = Some(v.into()),
            "val" => self.val = Some(v.into()),
            "test" => self.test = Some(v.into()),
            "steps" => self.steps = Some(num(key, v)?),
            "steps2" => self.steps2 = Some(num(key, v)?),
            "lr" => self.lr = Some(num(key, v)?),
            "stage2_lr" => self.stage2_lr = Some(num(key, v)?),
            "batch_size" => self.batch_size = Some(num(key, v)?),
            "log_interval" => self.log_interval = Some(num(key, v)?),
            "channels" => self.channels = Some(num(key, v)?),
            "checkpoint" => self.checkpoint = Some(v.into()),
            "iterations" => self.iterations = Some(num(key, v)?),
            "repeats" => self.repeats = Some(num(key, v)?),
            "threshold" => self.threshold = Some(num(key, v)?),
            "capacity" => self.capacity = Some(num(key, v)?),
            "window" => self.window = Some(num(key, v)?),
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    /// Fields set in `over` replace ours.
    pub fn overlay(self, over: Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            preset,
            seed,
            out,
            synthetic,
            train,
            val,
            test,
            steps,
            steps2,
            lr,
            stage2_lr,
            batch_size,
            log_interval,
            channels,
            checkpoint,
            iterations,
            repeats,
            threshold,
            capacity,
            window
        )
    }

    /// Seed from the config, else the environment.
    pub fn resolve_seed(&mut self) -> Result<(), ConfigError> {
        if self.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                self.seed = Some(
                    v.trim()
                        .parse()
                        .map_err(|_| bad(format!("{SEED_ENV}: cannot parse {v:?}")))?,
                );
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or_else(|| {
            bad(format!(
                "a seed is required (--seed, config [run] seed, or {SEED_ENV})"
            ))
        })
    }

    pub fn preset_name(&self) -> &str {
        self.preset.as_deref().unwrap_or(DEFAULT_PRESET)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| DEFAULT_OUT.into())
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE)
    }

    pub fn log_interval(&self) -> usize {
        self.log_interval.unwrap_or(DEFAULT_LOG_INTERVAL)
    }

    pub fn channels(&self) -> usize {
        self.channels.unwrap_or(DEFAULT_CHANNELS)
    }

    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or(DEFAULT_ITERATIONS)
    }

    pub fn repeats(&self) -> usize {
        self.repeats.unwrap_or(DEFAULT_REPEATS)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(DEFAULT_THRESHOLD)
    }

    /// Training data must come from exactly one source.
    pub fn check_training_source(&self) -> Result<(), ConfigError> {
        match (self.synthetic, &self.train) {
            (Some(_), Some(_)) => Err(bad("give either --synthetic or --train, not both")),
            (None, None) => Err(bad("no training data: give --synthetic or --train")),
            (Some(_), None) if self.val.is_some() || self.test.is_some() => {
                Err(bad("--val/--test cannot be combined with --synthetic"))
            }
            _ => Ok(()),
        }
    }

    /// Evaluation data: a synthetic held-out draw or a test CSV.
    pub fn check_eval_source(&self) -> Result<(), ConfigError> {
        match (self.synthetic, &self.test) {
            (Some(_), Some(_)) => Err(bad("give either --synthetic or --test, not both")),
            (None, None) => Err(bad("no evaluation data: give --synthetic or --test")),
            _ => Ok(()),
        }
    }

    /// Every key with its effective value, in config-file syntax.
    pub fn dump(&self) -> String {
        let show_path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let show = |v: Option<String>| v.unwrap_or_default();
        let value = |key: &str| -> String {
            match key {
                "preset" => self.preset_name().to_string(),
                "seed" => show(self.seed.map(|v| v.to_string())),
                "out" => self.out_dir().display().to_string(),
                "synthetic" => show(self.synthetic.map(|k| k.name().to_string())),
                "train" => show_path(&self.train),
                "val" => show_path(&self.val),
                "test" => show_path(&self.test),
                "steps" => show(self.steps.map(|v| v.to_string())),
                "steps2" => show(self.steps2.map(|v| v.to_string())),
                "lr" => show(self.lr.map(|v| v.to_string())),
                "stage2_lr" => show(self.stage2_lr.map(|v| v.to_string())),
                "batch_size" => self.batch_size().to_string(),
                "log_interval" => self.log_interval().to_string(),
                "channels" => self.channels().to_string(),
                "checkpoint" => show_path(&self.checkpoint),
                "iterations" => self.iterations().to_string(),
                "repeats" => self.repeats().to_string(),
                "threshold" => self.threshold().to_string(),
                "capacity" => show(self.capacity.map(|v| v.to_string())),
                "window" => show(self.window.map(|v| v.to_string())),
                _ => unreachable!(),
            }
        };
        let mut out =
            String::from("# blank values are unset; steps default to the preset's table value\n");
        let mut section = "";
        for (sec, key) in KEYS {
            if sec != section {
                out.push_str(&format!("\n[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{key} = {}\n", value(key)));
        }
        out
    }
}
