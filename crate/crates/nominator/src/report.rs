//! CSV emission for training histories, confidence-gap traces and metric
//! reports. Absent values are empty cells; numbers use the shortest
//! representation that parses back to the same `f64`.

use std::io::{Read, Write};

use nominator_core::dom::ClassId;
use nominator_core::eval::{ClassMetrics, MetricReport};
use nominator_core::training::EpochRecord;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad header: expected {expected:?}, found {found:?}")]
    Header {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}: bad value `{value}` in column `{column}`")]
    Value {
        row: usize,
        column: String,
        value: String,
    },
}

fn gap_columns() -> impl Iterator<Item = String> {
    ClassId::POSITIVE
        .into_iter()
        .map(|c| format!("conf_gap_{c}"))
}

pub fn history_header() -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "train_loss", "val_loss", "val_nom_acc"]
        .map(String::from)
        .to_vec();
    h.extend(gap_columns());
    h
}

pub fn gap_header() -> Vec<String> {
    let mut h = vec![String::from("step")];
    h.extend(ClassId::POSITIVE.into_iter().map(|c| c.to_string()));
    h
}

pub fn metrics_header() -> Vec<String> {
    [
        "class",
        "nomination_accuracy",
        "pages_evaluated",
        "precision",
        "recall",
        "mean_confidence_gap",
    ]
    .map(String::from)
    .to_vec()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One parsed row of a history CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_nom_acc: Option<f64>,
    pub conf_gap: [Option<f64>; 6],
}

impl From<&EpochRecord> for HistoryRow {
    fn from(r: &EpochRecord) -> Self {
        HistoryRow {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            val_nom_acc: r.val_nom_acc,
            conf_gap: r.conf_gap,
        }
    }
}

pub fn write_history<W: Write>(out: W, history: &[EpochRecord]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(history_header())?;
    for r in history {
        let mut row = vec![
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            cell(r.val_nom_acc),
        ];
        row.extend(r.conf_gap.iter().map(|g| cell(*g)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A step counter and one confidence gap per positive class.
pub type GapRow = (usize, [Option<f64>; 6]);

/// Confidence gap per class against a step counter (one row per epoch
/// when written from a history).
pub fn write_gaps<W: Write>(out: W, rows: &[GapRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(gap_header())?;
    for (step, gaps) in rows {
        let mut row = vec![step.to_string()];
        row.extend(gaps.iter().map(|g| cell(*g)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per class, then an `average` row carrying the average
/// nomination accuracy.
pub fn write_metrics<W: Write>(out: W, report: &MetricReport) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(metrics_header())?;
    for m in &report.classes {
        w.write_record([
            m.class.to_string(),
            cell(m.nomination_accuracy),
            m.pages_evaluated.to_string(),
            cell(m.precision),
            cell(m.recall),
            cell(m.mean_confidence_gap),
        ])?;
    }
    w.write_record([
        "average",
        &report.average_nomination_accuracy.to_string(),
        "",
        "",
        "",
        "",
    ])?;
    w.flush()?;
    Ok(())
}

struct Rows {
    header: Vec<String>,
    records: Vec<csv::StringRecord>,
}

fn read_rows<R: Read>(input: R, expected: Vec<String>) -> Result<Rows, ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let found: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if found != expected {
        return Err(ReportError::Header { expected, found });
    }
    let records = r.records().collect::<Result<Vec<_>, _>>()?;
    Ok(Rows {
        header: found,
        records,
    })
}

impl Rows {
    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T, ReportError> {
        let value = &self.records[row][col];
        value.parse().map_err(|_| ReportError::Value {
            row,
            column: self.header[col].clone(),
            value: value.to_string(),
        })
    }

    fn optional(&self, row: usize, col: usize) -> Result<Option<f64>, ReportError> {
        if self.records[row][col].is_empty() {
            Ok(None)
        } else {
            self.parse(row, col).map(Some)
        }
    }

    fn gaps(&self, row: usize, first: usize) -> Result<[Option<f64>; 6], ReportError> {
        let mut out = [None; 6];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = self.optional(row, first + k)?;
        }
        Ok(out)
    }
}

pub fn read_history<R: Read>(input: R) -> Result<Vec<HistoryRow>, ReportError> {
    let rows = read_rows(input, history_header())?;
    (0..rows.records.len())
        .map(|i| {
            Ok(HistoryRow {
                epoch: rows.parse(i, 0)?,
                train_loss: rows.parse(i, 1)?,
                val_loss: rows.parse(i, 2)?,
                val_nom_acc: rows.optional(i, 3)?,
                conf_gap: rows.gaps(i, 4)?,
            })
        })
        .collect()
}

pub fn read_gaps<R: Read>(input: R) -> Result<Vec<GapRow>, ReportError> {
    let rows = read_rows(input, gap_header())?;
    (0..rows.records.len())
        .map(|i| Ok((rows.parse(i, 0)?, rows.gaps(i, 1)?)))
        .collect()
}

pub fn read_metrics<R: Read>(input: R) -> Result<MetricReport, ReportError> {
    let rows = read_rows(input, metrics_header())?;
    let mut classes = Vec::new();
    let mut average = None;
    for i in 0..rows.records.len() {
        let name = &rows.records[i][0];
        if name == "average" {
            average = Some(rows.parse(i, 1)?);
            continue;
        }
        let class = ClassId::ALL
            .into_iter()
            .find(|c| c.as_str() == name)
            .ok_or_else(|| ReportError::Value {
                row: i,
                column: String::from("class"),
                value: name.to_string(),
            })?;
        classes.push(ClassMetrics {
            class,
            nomination_accuracy: rows.optional(i, 1)?,
            pages_evaluated: rows.parse(i, 2)?,
            precision: rows.optional(i, 3)?,
            recall: rows.optional(i, 4)?,
            mean_confidence_gap: rows.optional(i, 5)?,
        });
    }
    let average_nomination_accuracy = average.ok_or_else(|| ReportError::Value {
        row: rows.records.len(),
        column: String::from("class"),
        value: String::from("<missing average row>"),
    })?;
    Ok(MetricReport {
        classes,
        average_nomination_accuracy,
    })
}
