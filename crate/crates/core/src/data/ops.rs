use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Keeps only `names`, in list order.
pub fn select_features(ds: &Dataset, names: &[String]) -> Result<Dataset> {
    let schema = ds.schema();
    let mut idx = Vec::with_capacity(names.len());
    let mut unknown = Vec::new();
    for n in names {
        match schema.feature_index(n) {
            Some(i) => idx.push(i),
            None => unknown.push(n.as_str()),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Schema(format!(
            "unknown features: {}",
            unknown.join(", ")
        )));
    }
    let new_schema =
        schema.with_features(idx.iter().map(|&i| schema.features()[i].clone()).collect())?;
    let cols = idx.iter().map(|&i| ds.column(i).to_vec()).collect();
    ds.with_columns(new_schema, cols)
}

/// Downsamples benign rows to the total malicious count. Row order is kept.
pub fn balance_classes(ds: &Dataset, rng: &mut RngStream) -> Result<Dataset> {
    let (benign, malicious): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.is_benign(i));
    if benign.is_empty() || malicious.is_empty() {
        return Err(Error::Data(format!(
            "balancing needs benign and malicious rows, got {} and {}",
            benign.len(),
            malicious.len()
        )));
    }
    if benign.len() <= malicious.len() {
        if benign.len() < malicious.len() {
            log::warn!(
                "fewer benign ({}) than malicious ({}) rows; keeping all benign rows",
                benign.len(),
                malicious.len()
            );
        }
        return Ok(ds.clone());
    }
    let perm = rng.permutation(benign.len());
    let mut keep: Vec<usize> = perm[..malicious.len()].iter().map(|&p| benign[p]).collect();
    keep.extend(&malicious);
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Stratified split: within each class a seeded shuffle, then
/// `round(fraction · count)` rows go to the first split.
pub fn split_train_val(
    ds: &Dataset,
    fraction: f64,
    rng: &mut RngStream,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let classes = ds.schema().class_count();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            log::warn!(
                "class {:?} has {} record(s); cannot stratify, assigning to the training split",
                ds.schema().classes()[c],
                idx.len()
            );
            train.extend(idx);
            continue;
        }
        rng.shuffle(&mut idx);
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..k]);
        val.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&val)))
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub rows: Vec<usize>,
}

/// Endless batch stream. Each epoch is a fresh permutation drawn from a fork
/// of the base stream keyed by the epoch index; the last batch of an epoch may
/// be short.
#[derive(Clone, Debug)]
pub struct BatchIter<'a> {
    ds: &'a Dataset,
    batch_size: usize,
    base: RngStream,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn reshuffle(&mut self) {
        let mut r = self.base.fork(self.epoch);
        self.order = r.permutation(self.ds.len());
        self.pos = 0;
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let rows = self.order[self.pos..end].to_vec();
        self.pos = end;
        let x = self.ds.rows_tensor(&rows).expect("rows in range");
        let labels = rows.iter().map(|&i| self.ds.labels()[i]).collect();
        Some(Batch { x, labels, rows })
    }
}

pub fn batches<'a>(ds: &'a Dataset, batch_size: usize, rng: &RngStream) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be ≥ 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::Data("cannot batch an empty dataset".into()));
    }
    let mut it = BatchIter {
        ds,
        batch_size,
        base: rng.clone(),
        epoch: 0,
        order: Vec::new(),
        pos: 0,
    };
    it.reshuffle();
    Ok(it)
}
