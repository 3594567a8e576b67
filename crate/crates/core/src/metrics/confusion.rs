use std::io::Write;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    classes: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, classes: Vec<String>) -> Result<Self> {
        let c = classes.len();
        if c == 0 || counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Argument(format!("confusion matrix must be {c}×{c}")));
        }
        Ok(Self { counts, classes })
    }

    pub fn size(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Counts as CSV: header row and first column carry the class names.
    pub fn write_counts_csv(&self, writer: impl Write) -> Result<()> {
        self.write_csv(writer, |i, j| self.counts[i][j].to_string())
    }

    /// Row-normalized rates; empty rows are left blank.
    pub fn write_rates_csv(&self, writer: impl Write) -> Result<()> {
        self.write_csv(writer, |i, j| {
            let n = self.row_sum(i);
            if n == 0 {
                String::new()
            } else {
                (self.counts[i][j] as f64 / n as f64).to_string()
            }
        })
    }

    fn write_csv(&self, writer: impl Write, cell: impl Fn(usize, usize) -> String) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(self.classes.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.size() {
            let mut rec = vec![self.classes[i].clone()];
            rec.extend((0..self.size()).map(|j| cell(i, j)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn confusion_matrix(
    preds: &[usize],
    labels: &[usize],
    classes: &[String],
) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let c = classes.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= c || t >= c {
            return Err(Error::Argument(format!(
                "class index {} outside {c} classes",
                p.max(t)
            )));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts, classes.to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAccuracy {
    /// `None` where the class has no records.
    pub per_class: Vec<Option<f64>>,
    pub overall: Option<f64>,
}

pub fn per_class_accuracy(cm: &ConfusionMatrix) -> ClassAccuracy {
    let per_class = (0..cm.size())
        .map(|i| {
            let n = cm.row_sum(i);
            (n > 0).then(|| cm.get(i, i) as f64 / n as f64)
        })
        .collect();
    let total = cm.total();
    ClassAccuracy {
        per_class,
        overall: (total > 0).then(|| cm.trace() as f64 / total as f64),
    }
}

/// Merges every class other than `benign_index` into one malicious class.
pub fn binary_collapse(cm: &ConfusionMatrix, benign_index: usize) -> Result<ConfusionMatrix> {
    if benign_index >= cm.size() {
        return Err(Error::Argument(format!(
            "benign index {benign_index} out of range"
        )));
    }
    let side = |i: usize| usize::from(i != benign_index);
    let mut counts = vec![vec![0u64; 2]; 2];
    for i in 0..cm.size() {
        for j in 0..cm.size() {
            counts[side(i)][side(j)] += cm.get(i, j);
        }
    }
    let names = if cm.size() == 2 {
        vec![
            cm.classes()[benign_index].clone(),
            cm.classes()[1 - benign_index].clone(),
        ]
    } else {
        vec![
            crate::data::BENIGN.to_string(),
            crate::data::MALICIOUS.to_string(),
        ]
    };
    ConfusionMatrix::from_counts(counts, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_counted_example() {
        let cm = confusion_matrix(&[0, 1, 1, 2], &[0, 0, 1, 2], &names(3)).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let perfect = confusion_matrix(&[0, 1, 1], &[0, 1, 1], &names(2)).unwrap();
        assert_eq!(perfect.counts(), &[vec![1, 0], vec![0, 2]]);
        let anti = confusion_matrix(&[1, 0, 0], &[0, 1, 1], &names(2)).unwrap();
        assert_eq!(anti.trace(), 0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            confusion_matrix(&[0], &[0, 1], &names(2)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn accuracies() {
        let cm = ConfusionMatrix::from_counts(vec![vec![90, 10], vec![20, 80]], names(2)).unwrap();
        let acc = per_class_accuracy(&cm);
        assert_eq!(acc.per_class, vec![Some(0.9), Some(0.8)]);
        assert_eq!(acc.overall, Some(0.85));
        let gap = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![0, 0]], names(2)).unwrap();
        assert_eq!(per_class_accuracy(&gap).per_class[1], None);
    }

    #[test]
    fn collapse() {
        let cm = ConfusionMatrix::from_counts(
            vec![vec![5, 1, 0], vec![0, 3, 4], vec![2, 1, 6]],
            names(3),
        )
        .unwrap();
        let b = binary_collapse(&cm, 0).unwrap();
        assert_eq!(b.counts(), &[vec![5, 1], vec![2, 14]]);
        assert_eq!(b.total(), cm.total());
        let two = ConfusionMatrix::from_counts(vec![vec![4, 1], vec![2, 3]], names(2)).unwrap();
        assert_eq!(binary_collapse(&two, 0).unwrap(), two);
    }

    #[test]
    fn csv_variants() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 1], vec![0, 0]], names(2)).unwrap();
        let mut a = Vec::new();
        cm.write_counts_csv(&mut a).unwrap();
        assert_eq!(
            String::from_utf8(a).unwrap(),
            "true\\predicted,c0,c1\nc0,3,1\nc1,0,0\n"
        );
        let mut b = Vec::new();
        cm.write_rates_csv(&mut b).unwrap();
        assert_eq!(
            String::from_utf8(b).unwrap(),
            "true\\predicted,c0,c1\nc0,0.75,0.25\nc1,,\n"
        );
    }
}
