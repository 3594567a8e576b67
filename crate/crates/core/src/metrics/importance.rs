use crate::classifiers::FlowClassifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Accuracy drop per feature when that feature's column is shuffled.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub features: Vec<String>,
    pub baseline_accuracy: f64,
    /// Mean accuracy drop, indexed like `features`.
    pub drops: Vec<f64>,
    /// 1-based rank by descending drop; ties keep feature order.
    pub ranks: Vec<usize>,
}

impl ImportanceReport {
    /// Feature indices from most to least important.
    pub fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by_key(|&i| self.ranks[i]);
        idx
    }
}

fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

pub fn permutation_importance(
    model: &dyn FlowClassifier,
    ds: &Dataset,
    rng: &RngStream,
    repeats: usize,
) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(Error::Argument("at least 1 repeat required".into()));
    }
    if ds.is_empty() {
        return Err(Error::Data("importance needs a non-empty dataset".into()));
    }
    let labels = model.align_labels(ds)?;
    let base = accuracy(&model.predict(ds)?, &labels);
    let mut drops = Vec::with_capacity(ds.width());
    for j in 0..ds.width() {
        let mut stream = rng.fork(j as u64);
        let mut total = 0.0;
        for _ in 0..repeats {
            let perm = stream.permutation(ds.len());
            let mut cols = ds.columns().to_vec();
            cols[j] = perm.iter().map(|&i| ds.column(j)[i]).collect();
            let shuffled = ds.with_columns(ds.schema().clone(), cols)?;
            total += base - accuracy(&model.predict(&shuffled)?, &labels);
        }
        drops.push(total / repeats as f64);
    }
    let mut order: Vec<usize> = (0..drops.len()).collect();
    order.sort_by(|&a, &b| drops[b].total_cmp(&drops[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; drops.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ImportanceReport {
        features: ds.schema().features().to_vec(),
        baseline_accuracy: base,
        drops,
        ranks,
    })
}
