use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsnrConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub min_db: f64,
    pub max_db: f64,
    /// Frames whose mean reference power is below this are skipped.
    pub silence_power: f64,
}

impl Default for SsnrConfig {
    /// 32 ms frames with 16 ms hop at 16 kHz, clamped to [-10, 35] dB.
    fn default() -> Self {
        Self { frame_len: 512, hop: 256, min_db: -10.0, max_db: 35.0, silence_power: 1e-8 }
    }
}

impl SsnrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop == 0 {
            return Err(Error::Config("ssnr frame length and hop must be positive".into()));
        }
        if !(self.min_db < self.max_db) {
            return Err(Error::Config("ssnr clamp range is empty".into()));
        }
        Ok(())
    }
}

/// Segmental SNR with the default frame and clamp settings.
pub fn ssnr(reference: &Waveform, test: &Waveform) -> Result<f64> {
    ssnr_with(reference, test, &SsnrConfig::default())
}

/// Mean over frames of `clamp(10 log10(sum ref^2 / sum (ref - test)^2))`.
pub fn ssnr_with(reference: &Waveform, test: &Waveform, cfg: &SsnrConfig) -> Result<f64> {
    cfg.validate()?;
    if reference.len() != test.len() {
        return Err(Error::Argument(format!(
            "reference has {} samples, test {}",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Argument("empty signals".into()));
    }
    let n = reference.len();
    let frame = cfg.frame_len.min(n);
    let count = (n - frame) / cfg.hop + 1;
    let (mut total, mut used) = (0.0, 0usize);
    for f in 0..count {
        let r = &reference.samples[f * cfg.hop..f * cfg.hop + frame];
        let t = &test.samples[f * cfg.hop..f * cfg.hop + frame];
        let signal: f64 = r.iter().map(|v| v * v).sum();
        if signal / frame as f64 <= cfg.silence_power {
            continue;
        }
        let error: f64 = r.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let db = if error == 0.0 { cfg.max_db } else { 10.0 * (signal / error).log10() };
        total += db.clamp(cfg.min_db, cfg.max_db);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate("every reference frame is silent".into()));
    }
    Ok(total / used as f64)
}
