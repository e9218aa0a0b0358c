use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::GapCoverage;

pub const SSNR_COLUMN: &str = "ssnr_db";
pub const STOI_COLUMN: &str = "stoi";
const FIXED_COLUMNS: [&str; 5] = ["utterance_id", "noise_class", "snr_db", SSNR_COLUMN, STOI_COLUMN];

/// Scores for one evaluated utterance. `extra` holds externally supplied
/// metrics such as PESQ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub utterance_id: String,
    pub noise_class: String,
    pub snr_db: f64,
    pub ssnr_db: Option<f64>,
    pub stoi: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl MetricRow {
    /// Every metric present on the row, keyed by column name.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = self.extra.clone();
        if let Some(v) = self.ssnr_db {
            m.insert(SSNR_COLUMN.into(), v);
        }
        if let Some(v) = self.stoi {
            m.insert(STOI_COLUMN.into(), v);
        }
        m
    }
}

/// Mean scores of a `(noise_class, snr_db)` group. `snr_db` is `None` for
/// the average over all SNRs of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub noise_class: String,
    pub snr_db: Option<f64>,
    pub count: usize,
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
    #[serde(default)]
    pub config: serde_json::Value,
}

fn mean_metrics<'a>(rows: impl Iterator<Item = &'a MetricRow>) -> (usize, BTreeMap<String, f64>) {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut count = 0;
    for r in rows {
        count += 1;
        for (k, v) in r.metrics() {
            let e = sums.entry(k).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    (count, sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

/// Means of every metric over all rows.
pub fn overall_means(rows: &[MetricRow]) -> BTreeMap<String, f64> {
    mean_metrics(rows.iter()).1
}

impl MetricReport {
    pub fn new(rows: Vec<MetricRow>, config: serde_json::Value) -> Self {
        let mut notes = BTreeMap::new();
        notes.insert("pesq".to_string(), "external".to_string());
        let mut report = Self { rows, aggregates: Vec::new(), notes, config };
        report.refresh_aggregates();
        report
    }

    /// Per-(class, SNR) means followed by each class's average, classes in
    /// first-seen order and SNRs ascending.
    pub fn refresh_aggregates(&mut self) {
        let mut classes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !classes.contains(&r.noise_class.as_str()) {
                classes.push(&r.noise_class);
            }
        }
        let mut out = Vec::new();
        for class in classes {
            let of_class: Vec<&MetricRow> = self.rows.iter().filter(|r| r.noise_class == class).collect();
            let mut snrs: Vec<f64> = of_class.iter().map(|r| r.snr_db).collect();
            snrs.sort_by(f64::total_cmp);
            snrs.dedup();
            for snr in snrs {
                let (count, means) = mean_metrics(of_class.iter().copied().filter(|r| r.snr_db == snr));
                out.push(Aggregate { noise_class: class.to_string(), snr_db: Some(snr), count, means });
            }
            let (count, means) = mean_metrics(of_class.iter().copied());
            out.push(Aggregate { noise_class: class.to_string(), snr_db: None, count, means });
        }
        self.aggregates = out;
    }

    fn extra_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.rows.iter().flat_map(|r| r.extra.keys().cloned()).collect();
        cols.sort();
        cols.dedup();
        cols
    }

    pub fn write_rows_csv(&self, path: &Path) -> Result<()> {
        let extra = self.extra_columns();
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(extra.iter().cloned());
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.rows {
            let mut rec = vec![r.utterance_id.clone(), r.noise_class.clone(), r.snr_db.to_string(), opt(r.ssnr_db), opt(r.stoi)];
            rec.extend(extra.iter().map(|k| opt(r.extra.get(k).copied())));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv(&self, path: &Path) -> Result<()> {
        let mut metrics: Vec<String> = self.aggregates.iter().flat_map(|a| a.means.keys().cloned()).collect();
        metrics.sort();
        metrics.dedup();
        let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
        let mut header = vec!["noise_class".to_string(), "snr_db".into(), "count".into()];
        header.extend(metrics.iter().cloned());
        w.write_record(&header).map_err(csv_error)?;
        for a in &self.aggregates {
            let snr = a.snr_db.map_or_else(|| "avg".to_string(), |s| s.to_string());
            let mut rec = vec![a.noise_class.clone(), snr, a.count.to_string()];
            rec.extend(metrics.iter().map(|k| opt(a.means.get(k).copied())));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Writes `<stem>.csv`, `<stem>_summary.csv` and `<stem>.json` into `dir`.
    pub fn write_all(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_rows_csv(&dir.join(format!("{stem}.csv")))?;
        self.write_aggregates_csv(&dir.join(format!("{stem}_summary.csv")))?;
        self.write_json(&dir.join(format!("{stem}.json")))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, reason: format!("{kind:?}") },
    }
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        return Ok(None);
    }
    cell.trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|e| Error::Parse { line, reason: format!("column {column}: {e}") })
}

/// Reads per-utterance rows written by [`MetricReport::write_rows_csv`].
pub fn read_rows_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(Error::Parse { line: 1, reason: format!("header must start with {}", FIXED_COLUMNS.join(",")) });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let snr_db = parse_cell(&rec[2], line, "snr_db")?
            .ok_or_else(|| Error::Parse { line, reason: "snr_db is empty".into() })?;
        let mut extra = BTreeMap::new();
        for (name, cell) in header.iter().zip(rec.iter()).skip(FIXED_COLUMNS.len()) {
            if let Some(v) = parse_cell(cell, line, name)? {
                extra.insert(name.clone(), v);
            }
        }
        rows.push(MetricRow {
            utterance_id: rec[0].to_string(),
            noise_class: rec[1].to_string(),
            snr_db,
            ssnr_db: parse_cell(&rec[3], line, SSNR_COLUMN)?,
            stoi: parse_cell(&rec[4], line, STOI_COLUMN)?,
            extra,
        });
    }
    Ok(rows)
}

/// Gap coverage of every metric whose overall mean is present in all three
/// row sets.
pub fn gap_table(
    baseline: &[MetricRow],
    adapted: &[MetricRow],
    oracle: &[MetricRow],
) -> Result<BTreeMap<String, GapCoverage>> {
    let (b, a, o) = (overall_means(baseline), overall_means(adapted), overall_means(oracle));
    let mut out = BTreeMap::new();
    for (metric, bv) in &b {
        if let (Some(av), Some(ov)) = (a.get(metric), o.get(metric)) {
            out.insert(metric.clone(), GapCoverage::new(*bv, *av, *ov)?);
        }
    }
    Ok(out)
}
