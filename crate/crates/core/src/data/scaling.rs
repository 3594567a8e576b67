use super::ops::select_features;
use super::Dataset;
use crate::error::{Error, Result};

/// How a preset scales its inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalingStrategy {
    None,
    /// Min-max with bounds sampled from the training data only.
    MinMaxTrain,
    /// Min-max with bounds sampled from training and test data together.
    MinMaxTrainTest,
    Log,
}

impl ScalingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            ScalingStrategy::None => "none",
            ScalingStrategy::MinMaxTrain => "minmax_train",
            ScalingStrategy::MinMaxTrainTest => "minmax_train_test",
            ScalingStrategy::Log => "log",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Some(Self::None),
            "minmax_train" | "n-18" => Some(Self::MinMaxTrain),
            "minmax_train_test" | "n-18/17" => Some(Self::MinMaxTrainTest),
            "log" => Some(Self::Log),
            _ => None,
        }
    }
}

/// Fitted scaling parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalingSpec {
    None,
    /// Per-feature `(min, max)`.
    MinMax(Vec<(f64, f64)>),
    /// Per-feature `(mean, std)`. With `allow_degenerate`, zero-std features map to 0.
    Standard {
        stats: Vec<(f64, f64)>,
        allow_degenerate: bool,
    },
    Log,
}

impl ScalingSpec {
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        match self {
            ScalingSpec::None => Ok(ds.clone()),
            ScalingSpec::MinMax(b) => scale_minmax(ds, b),
            ScalingSpec::Standard {
                stats,
                allow_degenerate,
            } => scale_standard(ds, stats, *allow_degenerate),
            ScalingSpec::Log => Ok(scale_log(ds)),
        }
    }
}

fn check_width(ds: &Dataset, n: usize, what: &str) -> Result<()> {
    if n != ds.width() {
        return Err(Error::Schema(format!(
            "{what} covers {n} features, dataset has {}",
            ds.width()
        )));
    }
    Ok(())
}

/// Per-feature `(min, max)` pooled over all given datasets.
pub fn sample_bounds(sets: &[&Dataset]) -> Result<Vec<(f64, f64)>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Argument("need at least one dataset to sample bounds".into()))?;
    let w = first.width();
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); w];
    for ds in sets {
        check_width(ds, w, "bounds sample")?;
        for (b, col) in bounds.iter_mut().zip(ds.columns()) {
            for &v in col {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
    }
    if bounds.iter().any(|b| b.0 > b.1) {
        return Err(Error::Data("cannot sample bounds from empty data".into()));
    }
    Ok(bounds)
}

/// `(x − min) / (max − min)`, clamped to `[0, 1]`; degenerate features map to 0.
pub fn scale_minmax(ds: &Dataset, bounds: &[(f64, f64)]) -> Result<Dataset> {
    check_width(ds, bounds.len(), "min-max bounds")?;
    let cols = ds
        .columns()
        .iter()
        .zip(bounds)
        .map(|(col, &(lo, hi))| {
            let range = hi - lo;
            col.iter()
                .map(|&v| {
                    if range > 0.0 {
                        ((v - lo) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    ds.with_columns(ds.schema().clone(), cols)
}

/// Per-feature `(mean, population std)`.
pub fn sample_standard(ds: &Dataset) -> Result<Vec<(f64, f64)>> {
    if ds.is_empty() {
        return Err(Error::Data(
            "cannot sample statistics from empty data".into(),
        ));
    }
    let n = ds.len() as f64;
    Ok(ds
        .columns()
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect())
}

/// `(x − μ) / σ`.
pub fn scale_standard(
    ds: &Dataset,
    stats: &[(f64, f64)],
    allow_degenerate: bool,
) -> Result<Dataset> {
    check_width(ds, stats.len(), "standard-score statistics")?;
    let mut cols = Vec::with_capacity(stats.len());
    for (j, (col, &(mean, std))) in ds.columns().iter().zip(stats).enumerate() {
        if !(std > 0.0) && !allow_degenerate {
            return Err(Error::Data(format!(
                "feature {:?} has zero standard deviation",
                ds.schema().features()[j]
            )));
        }
        cols.push(
            col.iter()
                .map(|&v| if std > 0.0 { (v - mean) / std } else { 0.0 })
                .collect(),
        );
    }
    ds.with_columns(ds.schema().clone(), cols)
}

/// `sign(x) · ln(1 + |x|)`.
pub fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

pub fn scale_log(ds: &Dataset) -> Dataset {
    let cols = ds
        .columns()
        .iter()
        .map(|c| {
            c.iter()
                .map(|&v| if v == 0.0 { 0.0 } else { signed_log(v) })
                .collect()
        })
        .collect();
    ds.with_columns(ds.schema().clone(), cols)
        .expect("shape preserved")
}

/// Feature selection followed by fitted scaling; stored with every model.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessor {
    pub features: Vec<String>,
    pub scaling: ScalingSpec,
}

impl Preprocessor {
    /// Fits scaling on `train` (and `test` for the pooled min-max strategy)
    /// after selecting `features`.
    pub fn fit(
        train: &Dataset,
        features: &[String],
        strategy: ScalingStrategy,
        test: Option<&Dataset>,
    ) -> Result<Self> {
        let train_sel = select_features(train, features)?;
        let scaling = match strategy {
            ScalingStrategy::None => ScalingSpec::None,
            ScalingStrategy::Log => ScalingSpec::Log,
            ScalingStrategy::MinMaxTrain => ScalingSpec::MinMax(sample_bounds(&[&train_sel])?),
            ScalingStrategy::MinMaxTrainTest => match test {
                Some(t) => {
                    let test_sel = select_features(t, features)?;
                    ScalingSpec::MinMax(sample_bounds(&[&train_sel, &test_sel])?)
                }
                None => {
                    log::warn!(
                        "pooled min-max scaling without test data; using training bounds only"
                    );
                    ScalingSpec::MinMax(sample_bounds(&[&train_sel])?)
                }
            },
        };
        Ok(Self {
            features: features.to_vec(),
            scaling,
        })
    }

    pub fn width(&self) -> usize {
        self.features.len()
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.scaling.apply(&select_features(ds, &self.features)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;

    fn one_col(v: Vec<f64>) -> Dataset {
        let s = FeatureSchema::new(vec!["x".into()], vec!["Benign".into(), "A".into()]).unwrap();
        let n = v.len();
        Dataset::new(s, vec![v], vec![0; n], vec![None; n], vec![None; n]).unwrap()
    }

    #[test]
    fn minmax_cases() {
        let d = one_col(vec![0.0, 5.0, 10.0]);
        let b = sample_bounds(&[&d]).unwrap();
        assert_eq!(scale_minmax(&d, &b).unwrap().column(0), &[0.0, 0.5, 1.0]);
        let c = one_col(vec![3.0, 3.0]);
        let b = sample_bounds(&[&c]).unwrap();
        assert_eq!(scale_minmax(&c, &b).unwrap().column(0), &[0.0, 0.0]);
        let drift = one_col(vec![-5.0, 20.0]);
        assert_eq!(
            scale_minmax(&drift, &[(0.0, 10.0)]).unwrap().column(0),
            &[0.0, 1.0]
        );
    }

    #[test]
    fn standard_cases() {
        let d = one_col(vec![-1.0, 1.0]);
        let st = sample_standard(&d).unwrap();
        assert_eq!(
            scale_standard(&d, &st, false).unwrap().column(0),
            &[-1.0, 1.0]
        );
        let shifted = one_col(vec![1.0, 3.0]);
        let out = scale_standard(&shifted, &st, false).unwrap();
        assert_eq!(out.column(0), &[1.0, 3.0]);
        let c = one_col(vec![2.0, 2.0]);
        let st = sample_standard(&c).unwrap();
        assert!(matches!(
            scale_standard(&c, &st, false),
            Err(Error::Data(_))
        ));
        assert_eq!(
            scale_standard(&c, &st, true).unwrap().column(0),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn log_cases() {
        assert_eq!(signed_log(0.0), 0.0);
        assert!((signed_log(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(signed_log(-3.0), -signed_log(3.0));
        let d = scale_log(&one_col(vec![-1.0, 0.0]));
        assert_eq!(d.column(0), &[-(2f64.ln()), 0.0]);
    }

    #[test]
    fn pooled_bounds_cover_both_sets() {
        let a = one_col(vec![0.0, 1.0]);
        let b = one_col(vec![4.0]);
        assert_eq!(sample_bounds(&[&a, &b]).unwrap(), vec![(0.0, 4.0)]);
    }

    #[test]
    fn preprocessor_selects_then_scales() {
        let s = FeatureSchema::new(
            vec!["a".into(), "b".into()],
            vec!["Benign".into(), "A".into()],
        )
        .unwrap();
        let d = Dataset::new(
            s,
            vec![vec![0.0, 2.0], vec![5.0, 9.0]],
            vec![0, 1],
            vec![None; 2],
            vec![None; 2],
        )
        .unwrap();
        let p =
            Preprocessor::fit(&d, &["b".to_string()], ScalingStrategy::MinMaxTrain, None).unwrap();
        let out = p.apply(&d).unwrap();
        assert_eq!(out.width(), 1);
        assert_eq!(out.column(0), &[0.0, 1.0]);
    }
}
