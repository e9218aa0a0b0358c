//! Run configuration: one TOML file with `dsp`, `corpus`, `model`, `train`
//! and `eval` sections. Missing sections and keys take their defaults;
//! unknown keys are rejected.

use std::path::Path;

use datse_core::corpus::CorpusConfig;
use datse_core::dat::TrainConfig;
use datse_core::dsp::FeatureConfig;
use datse_core::eval::EvalConfig;
use datse_core::nn::ModelConfig;
use datse_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "DATSE_SEED";
pub const RESOLVED_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub discriminator_hidden: usize,
    /// Discriminator classes; taken from the corpus roster when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            encoder_hidden: m.encoder_hidden,
            decoder_hidden: m.decoder_hidden,
            discriminator_hidden: m.discriminator_hidden,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dsp: FeatureConfig,
    pub corpus: CorpusConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => Ok(Self::default()),
        }
    }

    /// Applies `DATSE_SEED` (if set) to the corpus and training seeds.
    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            let seed: u64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
            self.corpus.seed = seed;
            self.train.seed = seed;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        self.corpus.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.model_config(self.model.num_classes.unwrap_or(2))?.validate()?;
        if self.corpus.sample_rate_hz != datse_core::dsp::DEFAULT_SAMPLE_RATE {
            log::warn!("corpus sample rate {} Hz differs from 16 kHz", self.corpus.sample_rate_hz);
        }
        Ok(())
    }

    /// Network shape for a roster of `num_classes` classes.
    pub fn model_config(&self, num_classes: usize) -> Result<ModelConfig> {
        if let Some(c) = self.model.num_classes {
            if c != num_classes {
                return Err(Error::Config(format!(
                    "model.num_classes = {c} but the corpus roster has {num_classes} classes"
                )));
            }
        }
        Ok(ModelConfig {
            feature_dim: self.dsp.n_bins(),
            encoder_hidden: self.model.encoder_hidden,
            decoder_hidden: self.model.decoder_hidden,
            discriminator_hidden: self.model.discriminator_hidden,
            num_classes,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(RESOLVED_FILE), self.to_toml()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use datse_core::dat::TrainMode;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_sections_fill_in() {
        let c = RunConfig::parse("[train]\nmode = \"baseline\"\nlambda = 0.1\n[dsp]\nhop = 128\n").unwrap();
        assert_eq!(c.train.mode, TrainMode::Baseline);
        assert_eq!(c.train.lambda, 0.1);
        assert_eq!(c.train.lr_se, TrainConfig::default().lr_se);
        assert_eq!(c.dsp.hop, 128);
        assert_eq!(c.corpus, CorpusConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["[train]\nlamda = 0.1\n", "[nope]\n", "[model]\nhidden = 3\n", "seed = 4\n"] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.model.num_classes = Some(6);
        c.train.clip_norm = Some(5.0);
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seed_override() {
        let mut c = RunConfig::default();
        c.apply_seed_override(Some("77")).unwrap();
        assert_eq!((c.corpus.seed, c.train.seed), (77, 77));
        assert!(c.apply_seed_override(Some("x")).is_err());
    }

    #[test]
    fn class_count_mismatch() {
        let mut c = RunConfig::default();
        c.model.num_classes = Some(4);
        assert!(matches!(c.model_config(6), Err(Error::Config(_))));
        assert_eq!(c.model_config(4).unwrap().feature_dim, 257);
    }
}
