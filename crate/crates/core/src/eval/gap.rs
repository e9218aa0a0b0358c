use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Share of the baseline-to-oracle distance closed by an adapted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapCoverage {
    pub baseline: f64,
    pub adapted: f64,
    pub oracle: f64,
    pub coverage_pct: f64,
}

impl GapCoverage {
    pub fn new(baseline: f64, adapted: f64, oracle: f64) -> Result<Self> {
        Ok(Self { baseline, adapted, oracle, coverage_pct: gap_coverage(baseline, adapted, oracle)? })
    }
}

/// `100 (adapted - baseline) / (oracle - baseline)`.
pub fn gap_coverage(baseline: f64, adapted: f64, oracle: f64) -> Result<f64> {
    let gap = oracle - baseline;
    if gap == 0.0 || !gap.is_finite() {
        return Err(Error::Degenerate(format!("no gap between baseline {baseline} and oracle {oracle}")));
    }
    Ok(100.0 * (adapted - baseline) / gap)
}
