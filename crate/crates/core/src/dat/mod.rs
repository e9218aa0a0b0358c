//! Losses, batching and the two adversarial training schemes.
//!
//! The enhancement loss is the mean absolute error between decoded and clean
//! log-power segments on source rows. The adversarial loss is the
//! discriminator's cross-entropy over every row of a batch. The alternating
//! scheme updates the discriminator first and then the encoder/decoder on
//! `L_regress - lambda * L_DAT`; the GRL scheme does both in one pass with a
//! gradient reversal layer between encoder and discriminator.

mod batch;
mod enhance;
mod loss;
mod step;
mod trainer;

pub use batch::{extract_features, fit_norms, make_batches, Batch, Domain, ExampleFeatures, PoolRow, SegmentPool};
pub use enhance::{enhance, enhance_lps};
pub use loss::{dat_loss, grl, regress_loss};
pub use step::{batch_gradients, evaluate_dat_loss, BatchGradients, Objective};
pub use trainer::{StepMetrics, TrainSummary, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Alternating,
    Grl,
}

/// Which rows train the model and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Supervised on source rows only.
    Baseline,
    /// Supervised on source rows, adversarial on source and target rows.
    #[default]
    Dat,
    /// Supervised on source and target rows (needs target clean references).
    Oracle,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Dat => "dat",
            TrainMode::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda: f64,
    pub lr_se: f64,
    pub lr_disc: f64,
    pub batch_size: usize,
    pub scheme: Scheme,
    pub epochs: usize,
    pub seed: u64,
    pub num_classes: usize,
    /// Discriminator updates per encoder/decoder update.
    pub disc_steps: usize,
    /// Global-norm gradient clip applied per optimizer; off when absent.
    pub clip_norm: Option<f64>,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Dat,
            lambda: 0.05,
            lr_se: 1e-4,
            lr_disc: 5e-4,
            batch_size: 16,
            scheme: Scheme::Alternating,
            epochs: 10,
            seed: 1234,
            num_classes: 6,
            disc_steps: 1,
            clip_norm: None,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be a finite value >= 0, got {}", self.lambda)));
        }
        for (name, lr) in [("lr_se", self.lr_se), ("lr_disc", self.lr_disc)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.disc_steps == 0 {
            return Err(Error::Config("disc_steps must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!((c.lambda, c.lr_se, c.lr_disc, c.batch_size), (0.05, 1e-4, 5e-4, 16));
        assert_eq!(c.scheme, Scheme::Alternating);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let bad = [
            TrainConfig { lambda: -0.1, ..Default::default() },
            TrainConfig { lr_se: 0.0, ..Default::default() },
            TrainConfig { lr_disc: f64::NAN, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { clip_norm: Some(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"lambda": 0.1, "lamda": 2}"#);
        assert!(err.is_err());
        let ok: TrainConfig = serde_json::from_str(r#"{"scheme": "grl"}"#).unwrap();
        assert_eq!(ok.scheme, Scheme::Grl);
        assert_eq!(ok.lambda, 0.05);
    }
}
