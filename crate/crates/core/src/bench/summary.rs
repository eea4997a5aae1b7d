use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::{Method, MetricsRecord};
use crate::{Error, Result};

pub const METRICS: [&str; 5] = ["q_mse", "tpr", "fpr", "fp_count", "wall_time_ms"];

pub const SUMMARY_HEADER: [&str; 7] = [
    "method",
    "n",
    "metric",
    "mean",
    "standard_error",
    "num_replications",
    "flag",
];

/// Set in the `flag` column when the standard error is zero only by convention.
pub const SINGLE_REPLICATION_FLAG: &str = "single_replication";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub metric: String,
    pub mean: f64,
    pub standard_error: f64,
    pub num_replications: usize,
}

impl SummaryRow {
    pub fn is_flagged(&self) -> bool {
        self.num_replications < 2
    }
}

pub fn metric_value(record: &MetricsRecord, metric: &str) -> Result<f64> {
    Ok(match metric {
        "q_mse" => record.q_mse,
        "tpr" => record.tpr,
        "fpr" => record.fpr,
        "fp_count" => record.fp_count,
        "wall_time_ms" => record.wall_time_ms,
        other => return Err(Error::UnknownMetric(other.to_string())),
    })
}

/// Mean and `sd / √k` (sample sd, `k − 1` divisor) per `(method, n, metric)`
/// over successful replications. Failed rows (non-finite `q_mse`) are
/// dropped; groups with no successful replication produce no rows.
pub fn summarize_records(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, usize), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.is_failed()) {
        groups.entry((r.method, r.n)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((method, n), group) in groups {
        for metric in METRICS {
            let values: Vec<f64> = group
                .iter()
                .map(|r| metric_value(r, metric).expect("known metric"))
                .collect();
            let k = values.len();
            let mean = values.iter().sum::<f64>() / k as f64;
            let standard_error = if k < 2 {
                0.0
            } else {
                let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
                (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt()
            };
            rows.push(SummaryRow {
                method,
                n,
                metric: metric.to_string(),
                mean,
                standard_error,
                num_replications: k,
            });
        }
    }
    rows
}

pub fn write_results_csv<W: Write>(records: &[MetricsRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MetricsRecord::HEADER)?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.n.to_string(),
            r.replication.to_string(),
            r.q_mse.to_string(),
            r.tpr.to_string(),
            r.fpr.to_string(),
            r.fp_count.to_string(),
            r.wall_time_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn malformed(row: usize, message: impl Into<String>) -> Error {
    Error::MalformedInput {
        row,
        message: message.into(),
    }
}

fn check_header(r: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = r.headers().map_err(|e| malformed(0, e.to_string()))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(malformed(0, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, row: usize) -> Result<T> {
    let raw = rec.get(col).ok_or_else(|| malformed(row, format!("missing column {col}")))?;
    raw.parse()
        .map_err(|_| malformed(row, format!("cannot parse `{raw}` in column {col}")))
}

/// Rows are numbered from 1 after the header.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &MetricsRecord::HEADER)?;
    let mut records = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        if rec.len() != MetricsRecord::HEADER.len() {
            return Err(malformed(row, format!("expected {} fields", MetricsRecord::HEADER.len())));
        }
        records.push(MetricsRecord {
            method: rec[0].parse().map_err(|_| malformed(row, format!("unknown method `{}`", &rec[0])))?,
            n: field(&rec, 1, row)?,
            replication: field(&rec, 2, row)?,
            q_mse: field(&rec, 3, row)?,
            tpr: field(&rec, 4, row)?,
            fpr: field(&rec, 5, row)?,
            fp_count: field(&rec, 6, row)?,
            wall_time_ms: field(&rec, 7, row)?,
        });
    }
    Ok(records)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record([
            s.method.to_string(),
            s.n.to_string(),
            s.metric.clone(),
            s.mean.to_string(),
            s.standard_error.to_string(),
            s.num_replications.to_string(),
            if s.is_flagged() { SINGLE_REPLICATION_FLAG } else { "" }.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    check_header(&mut r, &SUMMARY_HEADER)?;
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| malformed(row, e.to_string()))?;
        let standard_error: f64 = field(&rec, 4, row)?;
        if !(standard_error >= 0.0) {
            return Err(malformed(row, "standard_error must be >= 0"));
        }
        rows.push(SummaryRow {
            method: rec[0].parse().map_err(|_| malformed(row, format!("unknown method `{}`", &rec[0])))?,
            n: field(&rec, 1, row)?,
            metric: rec[2].to_string(),
            mean: field(&rec, 3, row)?,
            standard_error,
            num_replications: field(&rec, 5, row)?,
        });
    }
    Ok(rows)
}

/// Reads a results CSV and writes its summary.
pub fn summarize(results_csv: &Path, summary_csv: &Path) -> Result<()> {
    let records = read_results_csv(crate::io::open(results_csv)?)?;
    write_summary_csv(&summarize_records(&records), crate::io::create(summary_csv)?)
}
