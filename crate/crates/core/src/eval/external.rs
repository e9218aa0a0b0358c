use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::report::{MetricReport, SSNR_COLUMN, STOI_COLUMN};

/// One score computed outside this crate, e.g. PESQ from a reference tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub utterance_id: String,
    pub metric: String,
    pub value: f64,
}

const HEADER: [&str; 3] = ["utterance_id", "metric", "value"];

/// Parses a long-format `utterance_id,metric,value` CSV. A repeated
/// `(utterance_id, metric)` pair keeps the last value and logs a warning.
/// Scores come back in first-seen order.
pub fn ingest_external_scores(path: &Path) -> Result<Vec<ExternalScore>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let header: Vec<&str> = header.split(',').map(str::trim).collect();
    if header != HEADER {
        return Err(Error::Parse { line: 1, reason: format!("header must be {}", HEADER.join(",")) });
    }
    let mut out: Vec<ExternalScore> = Vec::new();
    let mut index: BTreeMap<(String, String), usize> = BTreeMap::new();
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |reason: String| Error::Parse { line: i + 1, reason };
        if cells.len() != 3 {
            return Err(parse(format!("expected 3 fields, found {}", cells.len())));
        }
        if cells[0].is_empty() || cells[1].is_empty() {
            return Err(parse("utterance_id and metric must be non-empty".into()));
        }
        let value: f64 = cells[2].parse().map_err(|e| parse(format!("value {:?}: {e}", cells[2])))?;
        let key = (cells[0].to_string(), cells[1].to_string());
        match index.get(&key) {
            Some(&k) => {
                log::warn!("line {}: duplicate score for {} / {}; keeping the later value", i + 1, key.0, key.1);
                out[k].value = value;
            }
            None => {
                index.insert(key.clone(), out.len());
                out.push(ExternalScore { utterance_id: key.0, metric: key.1, value });
            }
        }
    }
    Ok(out)
}

pub fn write_external_scores(path: &Path, scores: &[ExternalScore]) -> Result<()> {
    let mut text = HEADER.join(",");
    text.push('\n');
    for s in scores {
        text.push_str(&format!("{},{},{}\n", s.utterance_id, s.metric, s.value));
    }
    fs::write(path, text)?;
    Ok(())
}

impl MetricReport {
    /// Adds external scores as extra columns on matching rows and rebuilds
    /// the aggregates. Returns how many scores found no row.
    pub fn merge_external(&mut self, scores: &[ExternalScore]) -> Result<usize> {
        let mut unmatched = 0;
        for s in scores {
            if s.metric == SSNR_COLUMN || s.metric == STOI_COLUMN {
                return Err(Error::Argument(format!("external metric name {:?} is reserved", s.metric)));
            }
            let mut hit = false;
            for row in self.rows.iter_mut().filter(|r| r.utterance_id == s.utterance_id) {
                row.extra.insert(s.metric.clone(), s.value);
                hit = true;
            }
            if !hit {
                log::warn!("external score for unknown utterance {}", s.utterance_id);
                unmatched += 1;
            }
        }
        self.refresh_aggregates();
        Ok(unmatched)
    }
}
