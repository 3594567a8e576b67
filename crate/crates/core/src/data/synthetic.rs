//! Gaussian flow clusters standing in for the real captures at desk scale.

use std::net::Ipv4Addr;

use super::schema::{FeatureSchema, BENIGN, DST_IP, MALICIOUS, SRC_IP};
use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub label: usize,
    pub mean: Vec<f64>,
    /// Per-feature standard deviation; 0 reproduces the mean exactly.
    pub spread: Vec<f64>,
    pub count: usize,
    /// Source addresses drawn uniformly per record; empty means none.
    pub sources: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub schema: FeatureSchema,
    pub classes: Vec<ClassSpec>,
    pub destination: Option<u32>,
    pub seed: u64,
}

fn ip(a: u8, b: u8, c: u8, d: u8) -> u32 {
    u32::from(Ipv4Addr::new(a, b, c, d))
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let w = self.schema.width();
        for c in &self.classes {
            if c.label >= self.schema.class_count() {
                return Err(Error::Argument(format!(
                    "class label {} outside schema",
                    c.label
                )));
            }
            if c.count == 0 {
                return Err(Error::Argument("class counts must be ≥ 1".into()));
            }
            if c.mean.len() != w || c.spread.len() != w {
                return Err(Error::Argument(format!(
                    "class {} mean/spread must have {w} entries",
                    c.label
                )));
            }
            if c.spread.iter().any(|s| !(*s >= 0.0)) || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::Argument(
                    "spreads must be ≥ 0 and means finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// Eight flow classes over the 76-feature layout, raw (unscaled) values.
    /// Each attack class inflates its own seventh of the features.
    pub fn demo(seed: u64) -> Self {
        let schema = FeatureSchema::cicids();
        let w = schema.width();
        let base: Vec<f64> = (0..w)
            .map(|j| 50.0 * (1 + j % 7) as f64 + 10.0 * (j % 3) as f64)
            .collect();
        let spread: Vec<f64> = base.iter().map(|b| 0.1 * b).collect();
        let mut classes = vec![ClassSpec {
            label: 0,
            mean: base.clone(),
            spread: spread.clone(),
            count: 2000,
            sources: (1..=50).map(|d| ip(192, 0, 2, d)).collect(),
        }];
        for c in 1..schema.class_count() {
            let mean = base
                .iter()
                .enumerate()
                .map(|(j, b)| if j % 7 == c - 1 { 2.5 * b } else { *b })
                .collect();
            let first = (c * 10) as u8;
            classes.push(ClassSpec {
                label: c,
                mean,
                spread: spread.clone(),
                count: 250,
                sources: (first..first + 10).map(|d| ip(198, 51, 100, d)).collect(),
            });
        }
        Self {
            schema,
            classes,
            destination: Some(ip(203, 0, 113, 10)),
            seed,
        }
    }

    /// Benign / malicious unit-spread clusters whose means differ by
    /// `separation` (Euclidean), spread evenly over every feature.
    pub fn two_cluster(
        features: Vec<String>,
        per_class: usize,
        separation: f64,
        seed: u64,
    ) -> Result<Self> {
        let schema = FeatureSchema::new(features, vec![BENIGN.into(), MALICIOUS.into()])?;
        let w = schema.width();
        let shift = separation / (w as f64).sqrt();
        Ok(Self {
            classes: vec![
                ClassSpec {
                    label: 0,
                    mean: vec![0.0; w],
                    spread: vec![1.0; w],
                    count: per_class,
                    sources: (1..=50).map(|d| ip(192, 0, 2, d)).collect(),
                },
                ClassSpec {
                    label: 1,
                    mean: vec![shift; w],
                    spread: vec![1.0; w],
                    count: per_class,
                    sources: (1..=50).map(|d| ip(198, 51, 100, d)).collect(),
                },
            ],
            schema,
            destination: Some(ip(203, 0, 113, 10)),
            seed,
        })
    }
}

/// Draws every class's records, then shuffles them into one seeded order.
/// Address features present in the schema carry the drawn addresses.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let w = spec.schema.width();
    let mut rng = RngStream::new(spec.seed);
    let total: usize = spec.classes.iter().map(|c| c.count).sum();
    let mut rows: Vec<(Vec<f64>, usize, Option<u32>)> = Vec::with_capacity(total);
    for c in &spec.classes {
        for _ in 0..c.count {
            let x = (0..w)
                .map(|j| c.mean[j] + c.spread[j] * rng.normal())
                .collect();
            let src = (!c.sources.is_empty()).then(|| c.sources[rng.below(c.sources.len())]);
            rows.push((x, c.label, src));
        }
    }
    rng.shuffle(&mut rows);
    let src_col = spec.schema.feature_index(SRC_IP);
    let dst_col = spec.schema.feature_index(DST_IP);
    let mut columns = vec![Vec::with_capacity(total); w];
    let mut labels = Vec::with_capacity(total);
    let mut src = Vec::with_capacity(total);
    for (mut x, label, s) in rows {
        if let (Some(j), Some(v)) = (src_col, s) {
            x[j] = v as f64;
        }
        if let (Some(j), Some(v)) = (dst_col, spec.destination) {
            x[j] = v as f64;
        }
        for (col, v) in columns.iter_mut().zip(x) {
            col.push(v);
        }
        labels.push(label);
        src.push(s);
    }
    Dataset::new(
        spec.schema.clone(),
        columns,
        labels,
        src,
        vec![spec.destination; total],
    )
}
