use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use super::schema::{column_key, FeatureSchema, DST_IP, SRC_IP};
use super::Dataset;
use crate::error::{Error, Result};

/// Counts of rows read and skipped while loading a CSV.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub kept: usize,
    pub skipped_malformed: usize,
    pub skipped_non_finite: usize,
    pub skipped_unknown_label: usize,
    pub unknown_labels: BTreeMap<String, usize>,
}

impl LoadSummary {
    pub fn skipped(&self) -> usize {
        self.skipped_malformed + self.skipped_non_finite + self.skipped_unknown_label
    }
}

impl fmt::Display for LoadSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows read: {}", self.rows_read)?;
        writeln!(f, "rows kept: {}", self.kept)?;
        writeln!(f, "skipped (malformed): {}", self.skipped_malformed)?;
        writeln!(f, "skipped (non-finite): {}", self.skipped_non_finite)?;
        write!(f, "skipped (unknown label): {}", self.skipped_unknown_label)?;
        for (label, n) in &self.unknown_labels {
            write!(f, "\n  {label}: {n}")?;
        }
        Ok(())
    }
}

enum Cell {
    Value(f64),
    NonFinite,
    Malformed,
}

fn parse_number(s: &str) -> Cell {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        Ok(_) => Cell::NonFinite,
        Err(_) => Cell::Malformed,
    }
}

/// Dotted quad or an integral number.
fn parse_ip(s: &str) -> (Cell, Option<u32>) {
    let s = s.trim();
    if let Ok(ip) = s.parse::<Ipv4Addr>() {
        let v = u32::from(ip);
        return (Cell::Value(v as f64), Some(v));
    }
    match parse_number(s) {
        Cell::Value(v) => {
            let meta = (v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0).then_some(v as u32);
            (Cell::Value(v), meta)
        }
        other => (other, None),
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<(Dataset, LoadSummary)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

/// Reads a header-first CSV, mapping columns to `schema` by name.
pub fn read_csv(reader: impl Read, schema: &FeatureSchema) -> Result<(Dataset, LoadSummary)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Data("CSV has no header row".into()));
    }
    let index: BTreeMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (column_key(h), i))
        .collect();
    let find = |name: &str| index.get(&column_key(name)).copied();

    let mut feature_cols = Vec::with_capacity(schema.width());
    let mut missing = Vec::new();
    for f in schema.features() {
        match find(f) {
            Some(i) => feature_cols.push(i),
            None => missing.push(f.clone()),
        }
    }
    let label_col = find(schema.label_column());
    if label_col.is_none() {
        missing.push(schema.label_column().to_string());
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "CSV is missing required columns: {}",
            missing.join(", ")
        )));
    }
    let label_col = label_col.unwrap();
    let is_src: Vec<bool> = schema
        .features()
        .iter()
        .map(|f| column_key(f) == column_key(SRC_IP))
        .collect();
    let is_dst: Vec<bool> = schema
        .features()
        .iter()
        .map(|f| column_key(f) == column_key(DST_IP))
        .collect();
    let src_col = find(SRC_IP);
    let dst_col = find(DST_IP);

    let mut columns = vec![Vec::new(); schema.width()];
    let mut labels = Vec::new();
    let mut src_ips = Vec::new();
    let mut dst_ips = Vec::new();
    let mut summary = LoadSummary::default();
    let mut row = Vec::with_capacity(schema.width());

    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                summary.rows_read += 1;
                summary.skipped_malformed += 1;
                continue;
            }
        };
        summary.rows_read += 1;
        if rec.len() != headers.len() {
            summary.skipped_malformed += 1;
            continue;
        }
        row.clear();
        let mut verdict = None;
        for (j, &c) in feature_cols.iter().enumerate() {
            let cell = if is_src[j] || is_dst[j] {
                parse_ip(&rec[c]).0
            } else {
                parse_number(&rec[c])
            };
            match cell {
                Cell::Value(v) => row.push(v),
                Cell::NonFinite => {
                    verdict.get_or_insert(Cell::NonFinite);
                }
                Cell::Malformed => verdict = Some(Cell::Malformed),
            }
        }
        match verdict {
            Some(Cell::Malformed) => {
                summary.skipped_malformed += 1;
                continue;
            }
            Some(_) => {
                summary.skipped_non_finite += 1;
                continue;
            }
            None => {}
        }
        let raw_label = rec[label_col].trim();
        let Some(label) = schema.class_index(raw_label) else {
            summary.skipped_unknown_label += 1;
            *summary
                .unknown_labels
                .entry(raw_label.to_string())
                .or_default() += 1;
            continue;
        };
        for (col, v) in columns.iter_mut().zip(&row) {
            col.push(*v);
        }
        labels.push(label);
        src_ips.push(src_col.and_then(|c| parse_ip(&rec[c]).1));
        dst_ips.push(dst_col.and_then(|c| parse_ip(&rec[c]).1));
    }
    summary.kept = labels.len();
    if summary.skipped() > 0 {
        log::warn!(
            "skipped {} of {} CSV rows",
            summary.skipped(),
            summary.rows_read
        );
    }
    Ok((
        Dataset::new(schema.clone(), columns, labels, src_ips, dst_ips)?,
        summary,
    ))
}

/// Writes the dataset in the same dialect `read_csv` accepts. IP metadata that
/// is not already a feature column is written as extra `Src IP` / `Dst IP`
/// columns.
pub fn write_csv(ds: &Dataset, writer: impl Write) -> Result<()> {
    let schema = ds.schema();
    let extra_src =
        schema.feature_index(SRC_IP).is_none() && ds.src_ips().iter().any(Option::is_some);
    let extra_dst =
        schema.feature_index(DST_IP).is_none() && ds.dst_ips().iter().any(Option::is_some);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = schema.features().iter().map(String::as_str).collect();
    if extra_src {
        header.push(SRC_IP);
    }
    if extra_dst {
        header.push(DST_IP);
    }
    header.push(schema.label_column());
    w.write_record(&header)?;
    let fmt_ip = |ip: Option<u32>| {
        ip.map(|v| Ipv4Addr::from(v).to_string())
            .unwrap_or_default()
    };
    let mut fields = Vec::with_capacity(header.len());
    for i in 0..ds.len() {
        fields.clear();
        fields.extend(ds.columns().iter().map(|c| format!("{}", c[i])));
        if extra_src {
            fields.push(fmt_ip(ds.src_ips()[i]));
        }
        if extra_dst {
            fields.push(fmt_ip(ds.dst_ips()[i]));
        }
        fields.push(schema.classes()[ds.labels()[i]].clone());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
