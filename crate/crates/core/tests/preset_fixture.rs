//! Registry values checked against a fixture transcribed cell by cell from the tuning tables.
//!
//! `-` marks a cell the table leaves out; it inherits from the base preset, and the
//! original six fall back to the shared setup (76 features, kernel 5, stride 2-1-1, multiclass).

use flowvae::data::ScalingStrategy;
use flowvae::preset::{presets, Classification, Family, FeatureSet, Losses, Preset, Regularizer};
use flowvae::vae::LayerType;

const FIXTURE: &str = include_str!("fixtures/presets.csv");

#[derive(Clone, Debug)]
struct Expected {
    name: String,
    base: Option<String>,
    lr: f64,
    klm: Option<f64>,
    steps: usize,
    steps2: Option<usize>,
    st: ScalingStrategy,
    lt: LayerType,
    features: usize,
    ks: usize,
    strides: Vec<usize>,
    ct: Classification,
}

fn cell(s: &str) -> Option<&str> {
    (s != "-").then_some(s)
}

fn count(s: &str) -> usize {
    s.replace(',', "").parse().unwrap()
}

fn expected() -> Vec<Expected> {
    let mut rd = csv::Reader::from_reader(FIXTURE.as_bytes());
    let mut out: Vec<Expected> = Vec::new();
    for rec in rd.records() {
        let r = rec.unwrap();
        let name = r[0].to_string();
        let base = cell(&r[1]).map(|b| out.iter().find(|e| e.name == b).unwrap().clone());
        let lbd = name.starts_with("lbd");
        let inherit = |f: &dyn Fn(&Expected) -> String, fallback: &str| {
            base.as_ref().map(f).unwrap_or_else(|| fallback.to_string())
        };
        assert_eq!(cell(&r[8]).unwrap_or("Batch"), "Batch");
        let klm = match cell(&r[3]) {
            Some("None") => None,
            Some(v) => Some(v.parse().unwrap()),
            None => base.as_ref().unwrap().klm,
        };
        let features = cell(&r[9])
            .map(str::to_string)
            .unwrap_or_else(|| inherit(&|e| e.features.to_string(), "76"));
        let ks = cell(&r[10])
            .map(str::to_string)
            .unwrap_or_else(|| inherit(&|e| e.ks.to_string(), "5"));
        let stride = cell(&r[11]).map(str::to_string).unwrap_or_else(|| {
            inherit(
                &|e| {
                    e.strides
                        .iter()
                        .map(usize::to_string)
                        .collect::<Vec<_>>()
                        .join("-")
                },
                "2-1-1",
            )
        });
        let ct = match cell(&r[12]) {
            Some(c) => Classification::parse(c).unwrap(),
            None if lbd => Classification::Binary,
            None => base
                .as_ref()
                .map(|e| e.ct)
                .unwrap_or(Classification::Multiclass),
        };
        out.push(Expected {
            base: base.as_ref().map(|e| e.name.clone()),
            lr: cell(&r[2])
                .map(|v| v.parse().unwrap())
                .unwrap_or_else(|| base.as_ref().unwrap().lr),
            klm,
            steps: count(&r[4]),
            steps2: cell(&r[5]).map(count),
            st: cell(&r[6])
                .map(|v| ScalingStrategy::parse(v).unwrap())
                .unwrap_or_else(|| base.as_ref().unwrap().st),
            lt: cell(&r[7])
                .map(|v| LayerType::parse(v).unwrap())
                .unwrap_or_else(|| base.as_ref().unwrap().lt),
            features: features.parse().unwrap(),
            ks: ks.parse().unwrap(),
            strides: stride.split('-').map(|s| s.parse().unwrap()).collect(),
            ct,
            name,
        });
    }
    out
}

fn check(p: &Preset, e: &Expected) {
    let n = &e.name;
    assert_eq!(p.name, *n);
    assert_eq!(p.base, e.base, "{n} base");
    assert_eq!(p.learning_rate, e.lr, "{n} lr");
    assert_eq!(p.klm, e.klm, "{n} klm");
    assert_eq!(p.steps, e.steps, "{n} steps");
    assert_eq!(p.steps2, e.steps2, "{n} steps2");
    assert_eq!(p.scaling, e.st, "{n} scaling");
    assert_eq!(p.layer_type, e.lt, "{n} layer type");
    assert_eq!(p.regularizer, Regularizer::BatchNorm, "{n} regularizer");
    assert_eq!(p.features.width(), e.features, "{n} features");
    assert_eq!(p.kernel_size, e.ks, "{n} kernel");
    assert_eq!(p.strides, e.strides, "{n} strides");
    assert_eq!(p.classification, e.ct, "{n} classification");
    let family = if n.starts_with("lbd") {
        Family::Lbd
    } else {
        Family::Llc
    };
    assert_eq!(p.family, family, "{n} family");
    let losses = match (family, e.klm) {
        (Family::Lbd, _) => Losses::VAE,
        (Family::Llc, None) => Losses::P_ONLY,
        (Family::Llc, Some(_)) => Losses::ALL,
    };
    assert_eq!(p.losses, losses, "{n} losses");
}

#[test]
fn registry_matches_tables_field_for_field() {
    let want = expected();
    let got = presets();
    assert_eq!(got.len(), want.len());
    assert_eq!(want.len(), 14);
    for (p, e) in got.iter().zip(&want) {
        check(p, e);
    }
}

#[test]
fn reduced_presets_use_the_ranked_feature_list() {
    for p in presets() {
        let expected = if p.features.width() == 40 {
            FeatureSet::Top40
        } else {
            FeatureSet::All76
        };
        assert_eq!(p.features, expected, "{}", p.name);
    }
}
