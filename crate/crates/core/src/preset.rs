//! Named hyperparameter bundles for both detectors.

use std::fmt;

use crate::data::{ScalingStrategy, CICIDS_FEATURES, DST_IP, SRC_IP, TOP40_FEATURES};
use crate::error::{Error, Result};
use crate::vae::{Architecture, LayerType};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Classifier on the latent layer.
    Llc,
    /// Two-stage reconstruction-loss detector.
    Lbd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSet {
    All76,
    /// All columns except the two address columns.
    NoIp74,
    Top40,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::All76 => "all76",
            FeatureSet::NoIp74 => "noip74",
            FeatureSet::Top40 => "top40",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all76" | "76" => Some(Self::All76),
            "noip74" | "74" => Some(Self::NoIp74),
            "top40" | "40" => Some(Self::Top40),
            _ => None,
        }
    }

    pub fn names(self) -> Vec<String> {
        let list: Vec<&str> = match self {
            FeatureSet::All76 => CICIDS_FEATURES.to_vec(),
            FeatureSet::NoIp74 => CICIDS_FEATURES
                .iter()
                .copied()
                .filter(|f| *f != SRC_IP && *f != DST_IP)
                .collect(),
            FeatureSet::Top40 => TOP40_FEATURES.to_vec(),
        };
        list.into_iter().map(String::from).collect()
    }

    pub fn width(self) -> usize {
        match self {
            FeatureSet::All76 => 76,
            FeatureSet::NoIp74 => 74,
            FeatureSet::Top40 => 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Multiclass,
    Binary,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Multiclass => "multiclass",
            Classification::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multiclass" => Some(Self::Multiclass),
            "binary" => Some(Self::Binary),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    BatchNorm,
}

/// Which loss terms drive training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Losses {
    pub p: bool,
    pub r: bool,
    pub kl: bool,
}

impl Losses {
    pub const ALL: Losses = Losses {
        p: true,
        r: true,
        kl: true,
    };
    pub const P_ONLY: Losses = Losses {
        p: true,
        r: false,
        kl: false,
    };
    pub const VAE: Losses = Losses {
        p: false,
        r: true,
        kl: true,
    };
}

impl fmt::Display for Losses {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.p, "P"), (self.r, "R"), (self.kl, "KL")]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, n)| *n)
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: String,
    pub family: Family,
    /// Preset this one modifies, if any.
    pub base: Option<String>,
    pub learning_rate: f64,
    /// KL-loss multiplier; `None` disables the KL term.
    pub klm: Option<f64>,
    /// Training steps (stage 1 for the two-stage detector).
    pub steps: usize,
    /// Stage-2 steps of the two-stage detector.
    pub steps2: Option<usize>,
    pub scaling: ScalingStrategy,
    pub layer_type: LayerType,
    pub regularizer: Regularizer,
    pub features: FeatureSet,
    pub kernel_size: usize,
    pub strides: Vec<usize>,
    pub classification: Classification,
    pub losses: Losses,
}

impl Preset {
    pub fn kernels(&self) -> Vec<usize> {
        vec![self.kernel_size; self.strides.len()]
    }

    pub fn stride_label(&self) -> String {
        self.strides
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn architecture(&self, input_width: usize, channels: usize) -> Architecture {
        Architecture {
            input_width,
            layer_type: self.layer_type,
            kernels: self.kernels(),
            strides: self.strides.clone(),
            channels,
            batch_norm: self.regularizer == Regularizer::BatchNorm,
        }
    }

    /// Multiplier actually applied to the KL term.
    pub fn kl_weight(&self) -> f64 {
        if self.losses.kl {
            self.klm.unwrap_or(0.0)
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "preset {}: learning rate must be > 0",
                self.name
            )));
        }
        if let Some(k) = self.klm {
            if !(k >= 0.0) {
                return Err(Error::Argument(format!(
                    "preset {}: KLM must be ≥ 0",
                    self.name
                )));
            }
        }
        if self.losses.kl && self.klm.is_none() {
            return Err(Error::Argument(format!(
                "preset {}: KL enabled without a multiplier",
                self.name
            )));
        }
        if self.family == Family::Llc && !self.losses.p {
            return Err(Error::Argument(format!(
                "preset {}: classifier presets need the P-loss",
                self.name
            )));
        }
        if self.kernel_size == 0 || self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::Argument(format!(
                "preset {}: invalid kernel/stride plan",
                self.name
            )));
        }
        Ok(())
    }
}

/// `[P]·p + [R]·r + KLM·kl`.
pub fn total_loss(p: f64, r: f64, kl: f64, preset: &Preset) -> f64 {
    let mut t = 0.0;
    if preset.losses.p {
        t += p;
    }
    if preset.losses.r {
        t += r;
    }
    if preset.losses.kl {
        t += preset.kl_weight() * kl;
    }
    t
}

struct Row {
    name: &'static str,
    base: Option<&'static str>,
    lr: f64,
    klm: Option<f64>,
    steps: usize,
    scaling: ScalingStrategy,
    layer: LayerType,
}

fn llc(r: Row, features: FeatureSet, ks: usize, strides: &[usize], ct: Classification) -> Preset {
    Preset {
        name: r.name.into(),
        family: Family::Llc,
        base: r.base.map(String::from),
        learning_rate: r.lr,
        klm: r.klm,
        steps: r.steps,
        steps2: None,
        scaling: r.scaling,
        layer_type: r.layer,
        regularizer: Regularizer::BatchNorm,
        features,
        kernel_size: ks,
        strides: strides.to_vec(),
        classification: ct,
        losses: if r.klm.is_some() {
            Losses::ALL
        } else {
            Losses::P_ONLY
        },
    }
}

fn lbd(
    name: &str,
    klm: f64,
    steps1: usize,
    features: FeatureSet,
    ks: usize,
    strides: &[usize],
) -> Preset {
    Preset {
        name: name.into(),
        family: Family::Lbd,
        base: None,
        learning_rate: 1e-4,
        klm: Some(klm),
        steps: steps1,
        steps2: Some(30_000),
        scaling: ScalingStrategy::Log,
        layer_type: LayerType::Conv,
        regularizer: Regularizer::BatchNorm,
        features,
        kernel_size: ks,
        strides: strides.to_vec(),
        classification: Classification::Binary,
        losses: Losses::VAE,
    }
}

/// Every registered preset, in table order.
pub fn presets() -> Vec<Preset> {
    use Classification::*;
    use FeatureSet::*;
    use LayerType::*;
    use ScalingStrategy as S;
    let row = |name, base, lr, klm, steps, scaling, layer| Row {
        name,
        base,
        lr,
        klm,
        steps,
        scaling,
        layer,
    };
    let d = [2, 1, 1];
    let one = [1, 1, 1];
    vec![
        llc(
            row("1", None, 1e-2, Some(1.0), 15_000, S::None, Conv),
            All76,
            5,
            &d,
            Multiclass,
        ),
        llc(
            row("2", None, 1e-2, Some(1e-2), 15_000, S::MinMaxTrain, Conv),
            All76,
            5,
            &d,
            Multiclass,
        ),
        llc(
            row(
                "3",
                None,
                1e-4,
                Some(1e-2),
                30_000,
                S::MinMaxTrainTest,
                Conv,
            ),
            All76,
            5,
            &d,
            Multiclass,
        ),
        llc(
            row("4", None, 1e-4, Some(1e-4), 30_000, S::Log, Conv),
            All76,
            5,
            &d,
            Multiclass,
        ),
        llc(
            row("5", None, 1e-4, Some(1e-4), 30_000, S::Log, Dense),
            All76,
            5,
            &d,
            Multiclass,
        ),
        llc(
            row("6", None, 1e-4, None, 30_000, S::Log, Conv),
            All76,
            5,
            &d,
            Multiclass,
        ),
        llc(
            row("4a", Some("4"), 1e-4, Some(1e-4), 30_000, S::Log, Conv),
            Top40,
            5,
            &one,
            Binary,
        ),
        llc(
            row("6a", Some("6"), 1e-4, None, 30_000, S::Log, Conv),
            Top40,
            5,
            &one,
            Binary,
        ),
        llc(
            row("4b", Some("4a"), 1e-4, Some(1e-6), 50_000, S::Log, Conv),
            Top40,
            5,
            &one,
            Binary,
        ),
        llc(
            row("4c", Some("4a"), 1e-4, Some(1e-6), 140_000, S::Log, Conv),
            Top40,
            7,
            &[2, 2, 1],
            Binary,
        ),
        lbd("lbd1", 1.0, 20_000, All76, 5, &d),
        lbd("lbd2", 4.0, 20_000, Top40, 5, &one),
        lbd("lbd3", 1e-6, 1_500, Top40, 5, &one),
        lbd("lbd4", 1e-6, 100_000, Top40, 7, &[2, 2, 1]),
    ]
}

pub fn preset_names() -> Vec<String> {
    presets().into_iter().map(|p| p.name).collect()
}

/// Looks up a preset by name (`"4b"`, `"lbd3"`, ...).
pub fn preset(name: &str) -> Result<Preset> {
    let key = name.trim().to_ascii_lowercase();
    let key = key
        .strip_prefix("preset")
        .map(|s| s.trim_start_matches(['-', '_', ' ']).to_string())
        .unwrap_or(key);
    presets()
        .into_iter()
        .find(|p| p.name == key)
        .ok_or_else(|| {
            Error::Argument(format!(
                "unknown preset {name:?}; registered presets: {}",
                preset_names().join(", ")
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_fourteen_valid_presets() {
        let all = presets();
        assert_eq!(all.len(), 14);
        for p in &all {
            p.validate().unwrap();
        }
        assert_eq!(
            preset_names(),
            [
                "1", "2", "3", "4", "5", "6", "4a", "6a", "4b", "4c", "lbd1", "lbd2", "lbd3",
                "lbd4"
            ]
        );
    }

    #[test]
    fn lookup() {
        assert_eq!(preset("4B").unwrap().steps, 50_000);
        assert_eq!(preset("preset-6a").unwrap().losses, Losses::P_ONLY);
        let err = preset("nosuch").unwrap_err().to_string();
        assert!(err.contains("lbd4"));
    }

    #[test]
    fn total_loss_weights() {
        let p4 = preset("4").unwrap();
        assert_eq!(total_loss(1.0, 2.0, 3.0, &p4), 1.0 + 2.0 + 1e-4 * 3.0);
        let p4b = preset("4b").unwrap();
        assert_eq!(total_loss(1.0, 2.0, 3.0, &p4b), 1.0 + 2.0 + 1e-6 * 3.0);
        let p6 = preset("6").unwrap();
        assert_eq!(total_loss(1.0, 2.0, 3.0, &p6), 1.0);
        let mut zero = p4.clone();
        zero.klm = Some(0.0);
        assert_eq!(total_loss(0.7, 0.2, 9.0, &zero), 0.7 + 0.2);
    }

    #[test]
    fn architectures_hit_reported_latents() {
        assert_eq!(
            preset("4")
                .unwrap()
                .architecture(76, 8)
                .latent_dim()
                .unwrap(),
            30
        );
        assert_eq!(
            preset("4b")
                .unwrap()
                .architecture(40, 8)
                .latent_dim()
                .unwrap(),
            28
        );
        assert_eq!(
            preset("4c")
                .unwrap()
                .architecture(40, 8)
                .latent_dim()
                .unwrap(),
            4
        );
    }

    #[test]
    fn feature_sets() {
        assert_eq!(FeatureSet::NoIp74.names().len(), 74);
        for f in [FeatureSet::All76, FeatureSet::NoIp74, FeatureSet::Top40] {
            assert_eq!(f.names().len(), f.width());
            assert_eq!(FeatureSet::parse(f.name()), Some(f));
        }
    }
}
