//! Flow records, datasets and the preprocessing pipeline.

mod csv_io;
mod ops;
mod scaling;
mod schema;
mod synthetic;

pub use csv_io::{load_csv, read_csv, write_csv, LoadSummary};
pub use ops::{balance_classes, batches, select_features, split_train_val, Batch, BatchIter};
pub use scaling::{
    sample_bounds, sample_standard, scale_log, scale_minmax, scale_standard, signed_log,
    Preprocessor, ScalingSpec, ScalingStrategy,
};
pub use schema::{
    column_key, FeatureSchema, BENIGN, CICIDS_CLASSES, CICIDS_FEATURES, DST_IP, LABEL_ALIASES,
    LABEL_COLUMN, MALICIOUS, SRC_IP, TOP40_FEATURES,
};
pub use synthetic::{gen_synthetic, ClassSpec, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One flow in row form.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub features: Vec<f64>,
    pub label: usize,
    pub src_ip: Option<u32>,
    pub dst_ip: Option<u32>,
}

/// Column-major collection of flows. Immutable once built; transforms return
/// new datasets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    columns: Vec<Vec<f64>>,
    labels: Vec<usize>,
    src_ip: Vec<Option<u32>>,
    dst_ip: Vec<Option<u32>>,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        columns: Vec<Vec<f64>>,
        labels: Vec<usize>,
        src_ip: Vec<Option<u32>>,
        dst_ip: Vec<Option<u32>>,
    ) -> Result<Self> {
        let n = labels.len();
        if columns.len() != schema.width() {
            return Err(Error::Schema(format!(
                "{} columns for a {}-feature schema",
                columns.len(),
                schema.width()
            )));
        }
        if columns.iter().any(|c| c.len() != n) || src_ip.len() != n || dst_ip.len() != n {
            return Err(Error::Data(
                "column lengths disagree with label count".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= schema.class_count()) {
            return Err(Error::Data(format!(
                "label index {bad} outside {} classes",
                schema.class_count()
            )));
        }
        Ok(Self {
            schema,
            columns,
            labels,
            src_ip,
            dst_ip,
        })
    }

    pub fn empty(schema: FeatureSchema) -> Self {
        let w = schema.width();
        Self {
            schema,
            columns: vec![Vec::new(); w],
            labels: Vec::new(),
            src_ip: Vec::new(),
            dst_ip: Vec::new(),
        }
    }

    pub fn from_records(schema: FeatureSchema, records: &[FlowRecord]) -> Result<Self> {
        let w = schema.width();
        let mut columns = vec![Vec::with_capacity(records.len()); w];
        for r in records {
            if r.features.len() != w {
                return Err(Error::Schema(format!(
                    "record has {} features, schema has {w}",
                    r.features.len()
                )));
            }
            for (c, v) in columns.iter_mut().zip(&r.features) {
                c.push(*v);
            }
        }
        Self::new(
            schema,
            columns,
            records.iter().map(|r| r.label).collect(),
            records.iter().map(|r| r.src_ip).collect(),
            records.iter().map(|r| r.dst_ip).collect(),
        )
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.schema.width()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn src_ips(&self) -> &[Option<u32>] {
        &self.src_ip
    }

    pub fn dst_ips(&self) -> &[Option<u32>] {
        &self.dst_ip
    }

    pub fn record(&self, i: usize) -> FlowRecord {
        FlowRecord {
            features: self.columns.iter().map(|c| c[i]).collect(),
            label: self.labels[i],
            src_ip: self.src_ip[i],
            dst_ip: self.dst_ip[i],
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn is_benign(&self, i: usize) -> bool {
        self.labels[i] == self.schema.benign_index()
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            src_ip: idx.iter().map(|&i| self.src_ip[i]).collect(),
            dst_ip: idx.iter().map(|&i| self.dst_ip[i]).collect(),
        }
    }

    /// Same rows and labels with new feature columns.
    pub fn with_columns(&self, schema: FeatureSchema, columns: Vec<Vec<f64>>) -> Result<Dataset> {
        Dataset::new(
            schema,
            columns,
            self.labels.clone(),
            self.src_ip.clone(),
            self.dst_ip.clone(),
        )
    }

    /// Collapses every non-benign class into one malicious class.
    pub fn to_binary(&self) -> Dataset {
        let benign = self.schema.benign_index();
        Dataset {
            schema: self.schema.binary(),
            columns: self.columns.clone(),
            labels: self
                .labels
                .iter()
                .map(|&l| usize::from(l != benign))
                .collect(),
            src_ip: self.src_ip.clone(),
            dst_ip: self.dst_ip.clone(),
        }
    }

    /// Concatenation of two datasets with identical schemas.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.schema != other.schema {
            return Err(Error::Schema(
                "cannot concatenate datasets with different schemas".into(),
            ));
        }
        let mut out = self.clone();
        for (a, b) in out.columns.iter_mut().zip(&other.columns) {
            a.extend_from_slice(b);
        }
        out.labels.extend_from_slice(&other.labels);
        out.src_ip.extend_from_slice(&other.src_ip);
        out.dst_ip.extend_from_slice(&other.dst_ip);
        Ok(out)
    }

    /// Row-major `[N × width]` tensor of rows `idx`.
    pub fn rows_tensor(&self, idx: &[usize]) -> Result<Tensor> {
        let w = self.width();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend(self.columns.iter().map(|c| c[i]));
        }
        Tensor::new(vec![idx.len(), w], data)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        self.rows_tensor(&(0..self.len()).collect::<Vec<_>>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> Dataset {
        let schema = FeatureSchema::new(
            vec!["a".into(), "b".into()],
            vec!["Benign".into(), "Attack".into()],
        )
        .unwrap();
        Dataset::new(
            schema,
            vec![vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]],
            vec![0, 1, 0],
            vec![Some(1), None, Some(3)],
            vec![None; 3],
        )
        .unwrap()
    }

    #[test]
    fn records_and_tensor_agree() {
        let d = tiny();
        assert_eq!(d.record(1).features, vec![2.0, 20.0]);
        assert_eq!(d.to_tensor().unwrap().row(2), &[3.0, 30.0]);
        assert_eq!(d.class_counts(), vec![2, 1]);
        let back = Dataset::from_records(
            d.schema().clone(),
            &(0..3).map(|i| d.record(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn bad_label_rejected() {
        let d = tiny();
        let r = Dataset::new(
            d.schema().clone(),
            vec![vec![0.0], vec![0.0]],
            vec![2],
            vec![None],
            vec![None],
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn binary_collapse_of_labels() {
        let s = FeatureSchema::cicids();
        let cols = vec![vec![0.0, 0.0, 0.0]; 76];
        let d = Dataset::new(s, cols, vec![0, 3, 7], vec![None; 3], vec![None; 3]).unwrap();
        assert_eq!(d.to_binary().labels(), &[0, 1, 1]);
    }
}
