//! Command-line runner: presets, data sourcing, training, evaluation,
//! benchmarking and gate simulation.

pub mod commands;
pub mod config;
pub mod sources;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Settings, SyntheticKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "flowvae", version, about = "VAE-based DoS/DDoS flow detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the registered presets.
    Presets,
    /// Train the latent-layer classifier.
    TrainLlc(RunArgs),
    /// Train the two-stage reconstruction-loss detector.
    TrainLbd(RunArgs),
    /// Confusion matrices of a checkpoint on held-out flows.
    Evaluate(RunArgs),
    /// Time inference on one batch.
    Bench(RunArgs),
    /// Replay a flow trace through classifier, gate and blacklist.
    GateSim(RunArgs),
    /// Write a seeded synthetic flow CSV.
    GenSynth(RunArgs),
    /// Permutation feature importance of a checkpoint.
    Importance(RunArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// `key = value` config file with sections; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
    #[arg(long)]
    pub preset: Option<String>,
    /// Falls back to FLOWVAE_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Synthetic data set instead of CSV files: demo or binary.
    #[arg(long, value_parser = parse_synthetic)]
    pub synthetic: Option<SyntheticKind>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Training steps (stage 1 for the two-stage detector).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stage-2 steps of the two-stage detector.
    #[arg(long)]
    pub steps2: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub log_interval: Option<usize>,
    /// Convolution channels per layer.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Timed benchmark iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Shuffles per feature for importance.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Minimum benign probability the gate admits.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Admissions per gate window.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Flows per gate window.
    #[arg(long)]
    pub window: Option<usize>,
}

fn parse_synthetic(s: &str) -> Result<SyntheticKind, String> {
    SyntheticKind::parse(s).ok_or_else(|| format!("unknown synthetic set {s:?} (demo, binary)"))
}

impl RunArgs {
    fn flags(&self) -> Settings {
        Settings {
            preset: self.preset.clone(),
            seed: self.seed,
            out: self.out.clone(),
            synthetic: self.synthetic,
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
            steps: self.steps,
            steps2: self.steps2,
            lr: self.lr,
            stage2_lr: self.stage2_lr,
            batch_size: self.batch_size,
            log_interval: self.log_interval,
            channels: self.channels,
            checkpoint: self.checkpoint.clone(),
            iterations: self.iterations,
            repeats: self.repeats,
            threshold: self.threshold,
            capacity: self.capacity,
            window: self.window,
        }
    }

    /// File values, then flags, then the seed environment fallback.
    pub fn settings(&self) -> Result<Settings, ConfigError> {
        let base = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let mut s = base.overlay(self.flags());
        s.resolve_seed()?;
        Ok(s)
    }
}

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use flowvae::Error as E;
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<E>() {
        Some(E::Argument(_)) => EXIT_CONFIG,
        Some(E::Diverged { .. }) => EXIT_DIVERGED,
        Some(
            E::Data(_)
            | E::Schema(_)
            | E::Contamination { .. }
            | E::Csv(_)
            | E::Io(_)
            | E::Format(_),
        ) => EXIT_DATA,
        Some(_) => EXIT_FAILURE,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_FAILURE,
    }
}

pub fn execute(command: &Command) -> anyhow::Result<()> {
    let args = match command {
        Command::Presets => return commands::cmd_presets(),
        Command::TrainLlc(a)
        | Command::TrainLbd(a)
        | Command::Evaluate(a)
        | Command::Bench(a)
        | Command::GateSim(a)
        | Command::GenSynth(a)
        | Command::Importance(a) => a,
    };
    let s = args.settings()?;
    if args.dump_config {
        print!("{}", s.dump());
        return Ok(());
    }
    match command {
        Command::Presets => unreachable!(),
        Command::TrainLlc(_) => commands::cmd_train_llc(&s),
        Command::TrainLbd(_) => commands::cmd_train_lbd(&s),
        Command::Evaluate(_) => commands::cmd_evaluate(&s),
        Command::Bench(_) => commands::cmd_bench(&s),
        Command::GateSim(_) => commands::cmd_gate_sim(&s),
        Command::GenSynth(_) => commands::cmd_gen_synth(&s),
        Command::Importance(_) => commands::cmd_importance(&s),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        let code = |e: flowvae::Error| exit_code(&anyhow::Error::from(e));
        assert_eq!(code(flowvae::Error::Argument("x".into())), EXIT_CONFIG);
        assert_eq!(code(flowvae::Error::Data("x".into())), EXIT_DATA);
        assert_eq!(code(flowvae::Error::Schema("x".into())), EXIT_DATA);
        assert_eq!(
            code(flowvae::Error::Diverged {
                step: 3,
                what: "loss".into()
            }),
            EXIT_DIVERGED
        );
        assert_eq!(code(flowvae::Error::State("x".into())), EXIT_FAILURE);
        assert_eq!(
            exit_code(&anyhow::Error::from(ConfigError("x".into()))),
            EXIT_CONFIG
        );
        let wrapped = anyhow::Error::from(flowvae::Error::Data("x".into())).context("loading");
        assert_eq!(exit_code(&wrapped), EXIT_DATA);
    }

    #[test]
    fn flags_parse_into_settings() {
        let cli = Cli::try_parse_from([
            "flowvae",
            "train-llc",
            "--preset",
            "4a",
            "--seed",
            "3",
            "--synthetic",
            "demo",
            "--steps",
            "20",
        ])
        .unwrap();
        let Command::TrainLlc(a) = cli.command else {
            panic!()
        };
        let s = a.settings().unwrap();
        assert_eq!(s.preset.as_deref(), Some("4a"));
        assert_eq!(s.seed, Some(3));
        assert_eq!(s.synthetic, Some(SyntheticKind::Demo));
        assert_eq!(s.steps, Some(20));
        assert!(Cli::try_parse_from(["flowvae", "train-llc", "--synthetic", "nope"]).is_err());
    }
}
