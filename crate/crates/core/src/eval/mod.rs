//! Objective metrics and reports: segmental SNR, STOI, gap coverage,
//! external score intake and spectrogram export.

mod external;
mod gap;
mod report;
mod spectrogram;
mod ssnr;
mod stoi;

pub use external::{ingest_external_scores, write_external_scores, ExternalScore};
pub use gap::{gap_coverage, GapCoverage};
pub use report::{gap_table, overall_means, read_rows_csv, Aggregate, MetricReport, MetricRow, SSNR_COLUMN, STOI_COLUMN};
pub use spectrogram::{export_spectrogram_matrix, read_matrix_csv, write_matrix_csv};
pub use ssnr::{ssnr, ssnr_with, SsnrConfig};
pub use stoi::{resample, stoi, RESAMPLER_TAPS, STOI_RATE};

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::parallel::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ssnr,
    Stoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    pub ssnr: SsnrConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { metrics: vec![Metric::Ssnr, Metric::Stoi], ssnr: SsnrConfig::default() }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssnr.validate()
    }
}

/// A reference/test pair to score.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub utterance_id: String,
    pub noise_class: String,
    pub snr_db: f64,
    pub reference: Waveform,
    pub test: Waveform,
}

/// Scores one pair with the configured metrics.
pub fn evaluate_item(item: &EvalItem, cfg: &EvalConfig) -> Result<MetricRow> {
    let with_id = |e: Error| match e {
        Error::Argument(m) => Error::Argument(format!("{}: {m}", item.utterance_id)),
        Error::Degenerate(m) => Error::Degenerate(format!("{}: {m}", item.utterance_id)),
        other => other,
    };
    let ssnr_db = match cfg.metrics.contains(&Metric::Ssnr) {
        true => Some(ssnr_with(&item.reference, &item.test, &cfg.ssnr).map_err(with_id)?),
        false => None,
    };
    let stoi = match cfg.metrics.contains(&Metric::Stoi) {
        true => Some(stoi(&item.reference, &item.test).map_err(with_id)?),
        false => None,
    };
    Ok(MetricRow {
        utterance_id: item.utterance_id.clone(),
        noise_class: item.noise_class.clone(),
        snr_db: item.snr_db,
        ssnr_db,
        stoi,
        extra: Default::default(),
    })
}

/// Scores every pair; rows come back in input order for any `exec`.
pub fn evaluate(items: &[EvalItem], cfg: &EvalConfig, exec: Exec) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    exec.map(items, |item| evaluate_item(item, cfg)).into_iter().collect()
}
