//! Where a run's flows come from: CSV paths or seeded synthetic draws.

use anyhow::{Context, Result};
use flowvae::data::{
    balance_classes, gen_synthetic, load_csv, split_train_val, Dataset, FeatureSchema,
    SyntheticSpec, TOP40_FEATURES,
};
use flowvae::preset::{Classification, Family, Preset};
use flowvae::RngStream;

use crate::config::{Settings, SyntheticKind};

/// Fork tags of the root seed stream.
pub const DATA_STREAM: u64 = 1;
pub const TRAIN_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;

const TRAIN_FRACTION: f64 = 0.6;

pub fn synthetic_spec(kind: SyntheticKind, seed: u64) -> Result<SyntheticSpec> {
    Ok(match kind {
        SyntheticKind::Demo => SyntheticSpec::demo(seed),
        SyntheticKind::Binary => {
            let names = TOP40_FEATURES.iter().map(|s| s.to_string()).collect();
            SyntheticSpec::two_cluster(names, 2000, 6.0, seed)?
        }
    })
}

/// The training pool and the held-out test draw derived from one seed.
pub fn synthetic_draws(kind: SyntheticKind, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = RngStream::new(seed).fork(DATA_STREAM);
    let pool = gen_synthetic(&synthetic_spec(kind, rng.next_u64())?)?;
    let test = gen_synthetic(&synthetic_spec(kind, rng.next_u64())?)?;
    Ok((pool, test))
}

/// Columns and classes a preset reads from CSV. Binary and two-stage presets
/// fold every attack label into one malicious class.
pub fn preset_schema(preset: &Preset) -> Result<FeatureSchema> {
    let s = FeatureSchema::cicids().with_features(preset.features.names())?;
    let binary = preset.family == Family::Lbd || preset.classification == Classification::Binary;
    Ok(if binary { s.binary() } else { s })
}

pub fn load(path: &std::path::Path, schema: &FeatureSchema) -> Result<Dataset> {
    let (ds, summary) =
        load_csv(path, schema).with_context(|| format!("loading {}", path.display()))?;
    log::info!(
        "{}: {} rows kept of {}",
        path.display(),
        summary.kept,
        summary.rows_read
    );
    if summary.skipped() > 0 {
        log::warn!("{}:\n{summary}", path.display());
    }
    Ok(ds)
}

#[derive(Debug)]
pub struct Splits {
    /// Class-balanced training split.
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

impl Splits {
    /// The split confusion matrices are reported on.
    pub fn eval(&self) -> &Dataset {
        self.test.as_ref().unwrap_or(&self.val)
    }
}

/// Training, validation and test data for a training command. Without an
/// explicit validation file the training data is split 60/40.
pub fn training_splits(s: &Settings, preset: &Preset, seed: u64) -> Result<Splits> {
    s.check_training_source()?;
    let mut rng = RngStream::new(seed).fork(DATA_STREAM).fork(1);
    let (pool, val, test) = match s.synthetic {
        Some(kind) => {
            let (pool, test) = synthetic_draws(kind, seed)?;
            (pool, None, Some(test))
        }
        None => {
            let schema = preset_schema(preset)?;
            let pool = load(s.train.as_deref().expect("checked"), &schema)?;
            let val = s.val.as_deref().map(|p| load(p, &schema)).transpose()?;
            let test = s.test.as_deref().map(|p| load(p, &schema)).transpose()?;
            (pool, val, test)
        }
    };
    let (train, val) = match val {
        Some(v) => (pool, v),
        None => split_train_val(&pool, TRAIN_FRACTION, &mut rng)?,
    };
    let train = balance_classes(&train, &mut rng)?;
    log::info!(
        "training on {} flows, validating on {}",
        train.len(),
        val.len()
    );
    Ok(Splits { train, val, test })
}

/// Flows an evaluation command scores: a test CSV read with the model's own
/// schema, or the synthetic held-out draw.
pub fn eval_data(s: &Settings, schema: &FeatureSchema) -> Result<Dataset> {
    s.check_eval_source()?;
    match s.synthetic {
        Some(kind) => Ok(synthetic_draws(kind, s.seed()?)?.1),
        None => load(s.test.as_deref().expect("checked"), schema),
    }
}
