use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const LOG_HEADER: [&str; 7] = [
    "step",
    "split",
    "accuracy",
    "p_loss",
    "kl_loss",
    "r_loss",
    "total_loss",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Mean metrics at one logged step. Terms a run does not use are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub split: Split,
    pub accuracy: Option<f64>,
    pub p_loss: Option<f64>,
    pub kl_loss: Option<f64>,
    pub r_loss: Option<f64>,
    pub total_loss: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("bad {what} value {s:?} in log")))
}

pub fn write_log_to(rows: &[TrainLogRow], writer: impl Write) -> Result<()> {
    if let Some(w) = rows.windows(2).find(|w| w[1].step < w[0].step) {
        return Err(Error::Argument(format!(
            "log rows must be step-sorted (step {} follows {})",
            w[1].step, w[0].step
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.split.name().to_string(),
            opt(r.accuracy),
            opt(r.p_loss),
            opt(r.kl_loss),
            opt(r.r_loss),
            r.total_loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log(rows: &[TrainLogRow], path: impl AsRef<Path>) -> Result<()> {
    write_log_to(rows, std::fs::File::create(path)?)
}

pub fn read_log_from(reader: impl Read) -> Result<Vec<TrainLogRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(LOG_HEADER) {
        return Err(Error::Format(format!("unexpected log header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let step = rec[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad step {:?}", &rec[0])))?;
        let split = Split::parse(&rec[1])
            .ok_or_else(|| Error::Format(format!("bad split {:?}", &rec[1])))?;
        rows.push(TrainLogRow {
            step,
            split,
            accuracy: parse_opt(&rec[2], "accuracy")?,
            p_loss: parse_opt(&rec[3], "p_loss")?,
            kl_loss: parse_opt(&rec[4], "kl_loss")?,
            r_loss: parse_opt(&rec[5], "r_loss")?,
            total_loss: parse_opt(&rec[6], "total_loss")?
                .ok_or_else(|| Error::Format("missing total_loss".into()))?,
        });
    }
    Ok(rows)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<TrainLogRow>> {
    read_log_from(std::fs::File::open(path)?)
}
