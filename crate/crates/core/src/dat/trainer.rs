use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::batch::{make_batches, Batch, SegmentPool};
use super::step::{batch_gradients, BatchGradients, Objective};
use super::{Scheme, TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::nn::{clip_global_norm, AdamState, ModelParams, ParamGroup};
use crate::parallel::Exec;

const SE_GROUPS: [ParamGroup; 2] = [ParamGroup::Encoder, ParamGroup::Decoder];
const DISC_GROUPS: [ParamGroup; 1] = [ParamGroup::Discriminator];

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_regress: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_dat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disc_accuracy: Option<f64>,
    pub grad_norm_enc: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grad_norm_disc: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    /// Mean `L_regress` over the last epoch's supervised steps.
    pub final_l_regress: Option<f64>,
    pub final_l_dat: Option<f64>,
}

/// Owns a model and both optimizers.
///
/// The encoder and decoder share one Adam state (rate `lr_se`), the
/// discriminator has its own (rate `lr_disc`). A step whose losses or
/// gradients are not finite fails with [`Error::NumericAbort`] before any
/// parameter is touched.
pub struct Trainer {
    pub model: ModelParams<f32>,
    pub cfg: TrainConfig,
    exec: Exec,
    se_opt: AdamState<f32>,
    disc_opt: AdamState<f32>,
    step: u64,
    epoch: usize,
}

fn group_lens(model: &ModelParams<f32>, groups: &[ParamGroup]) -> Vec<usize> {
    model
        .tensors()
        .iter()
        .enumerate()
        .filter(|(i, _)| groups.contains(&ModelParams::<f32>::group_of(*i)))
        .map(|(_, t)| t.len())
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x}"))
}

impl Trainer {
    pub fn new(model: ModelParams<f32>, cfg: TrainConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        if cfg.num_classes != model.config.num_classes {
            return Err(Error::Config(format!(
                "train.num_classes = {} but the model has {} outputs",
                cfg.num_classes, model.config.num_classes
            )));
        }
        let se_opt = AdamState::new(group_lens(&model, &SE_GROUPS));
        let disc_opt = AdamState::new(group_lens(&model, &DISC_GROUPS));
        Ok(Self { model, cfg, exec, se_opt, disc_opt, step: 0, epoch: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn into_model(self) -> ModelParams<f32> {
        self.model
    }

    fn gradients(&self, batch: &Batch<'_>, objective: Objective) -> Result<BatchGradients<f32>> {
        let g = batch_gradients(&self.model, batch, objective, self.exec)?;
        let losses_ok = [g.l_regress, g.l_dat].iter().flatten().all(|v| v.is_finite());
        if !losses_ok || !g.grads.is_finite() {
            return Err(Error::NumericAbort(format!(
                "step {} epoch {} ({objective:?}): l_regress={} l_dat={} grad_norm_enc={} grad_norm_disc={}; \
                 parameters are left at their values before this step",
                self.step + 1,
                self.epoch,
                fmt_opt(g.l_regress),
                fmt_opt(g.l_dat),
                g.grads.norm(&[ParamGroup::Encoder]),
                g.grads.norm(&DISC_GROUPS),
            )));
        }
        Ok(g)
    }

    fn apply(&mut self, grads: &mut [Vec<f32>], groups: &[ParamGroup]) -> Result<()> {
        if let Some(max) = self.cfg.clip_norm {
            clip_global_norm(grads, max);
        }
        let (opt, lr) = if groups == DISC_GROUPS {
            (&mut self.disc_opt, self.cfg.lr_disc)
        } else {
            (&mut self.se_opt, self.cfg.lr_se)
        };
        let mut params = self.model.group_tensors_mut(groups);
        opt.step(&mut params, grads, lr)
    }

    fn se_slice(g: &mut BatchGradients<f32>) -> &mut [Vec<f32>] {
        let end = ModelParams::<f32>::ids(ParamGroup::Decoder).end;
        &mut g.grads.tensors[..end]
    }

    fn disc_slice(g: &mut BatchGradients<f32>) -> &mut [Vec<f32>] {
        let ids = ModelParams::<f32>::ids(ParamGroup::Discriminator);
        &mut g.grads.tensors[ids]
    }

    /// Phase 1: one discriminator update on `L_DAT` with the encoder frozen.
    /// Returns the gradients that were applied (before clipping).
    pub fn discriminator_step(&mut self, batch: &Batch<'_>) -> Result<BatchGradients<f32>> {
        let mut g = self.gradients(batch, Objective::Discriminator)?;
        let applied = g.clone();
        self.apply(Self::disc_slice(&mut g), &DISC_GROUPS)?;
        Ok(applied)
    }

    /// Phase 2: one encoder/decoder update on `L_regress - lambda * L_DAT`
    /// with the discriminator frozen. A batch without supervised rows
    /// updates the encoder on the adversarial term alone.
    pub fn adversarial_step(&mut self, batch: &Batch<'_>) -> Result<BatchGradients<f32>> {
        let mut g = self.gradients(batch, Objective::Adversarial { lambda: self.cfg.lambda })?;
        let applied = g.clone();
        self.apply(Self::se_slice(&mut g), &SE_GROUPS)?;
        Ok(applied)
    }

    fn metrics(&self, started: Instant, se: &BatchGradients<f32>, disc_norm: Option<f64>) -> StepMetrics {
        StepMetrics {
            step: self.step,
            epoch: self.epoch,
            l_regress: se.l_regress,
            l_dat: se.l_dat,
            disc_accuracy: se.disc_accuracy,
            grad_norm_enc: se.grads.norm(&[ParamGroup::Encoder]),
            grad_norm_disc: disc_norm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// Discriminator update(s) followed by a fresh-pass encoder/decoder update.
    pub fn train_step_alternating(&mut self, batch: &Batch<'_>) -> Result<StepMetrics> {
        let started = Instant::now();
        let mut disc_norm = 0.0;
        for _ in 0..self.cfg.disc_steps {
            disc_norm = self.discriminator_step(batch)?.grads.norm(&DISC_GROUPS);
        }
        let se = self.adversarial_step(batch)?;
        self.step += 1;
        Ok(self.metrics(started, &se, Some(disc_norm)))
    }

    /// Single pass through a gradient reversal layer; all three parameter
    /// sets are updated from the same gradients.
    pub fn train_step_grl(&mut self, batch: &Batch<'_>) -> Result<StepMetrics> {
        let started = Instant::now();
        let mut g = self.gradients(batch, Objective::Grl { lambda: self.cfg.lambda })?;
        let disc_norm = g.grads.norm(&DISC_GROUPS);
        let report = g.clone();
        self.apply(Self::disc_slice(&mut g), &DISC_GROUPS)?;
        self.apply(Self::se_slice(&mut g), &SE_GROUPS)?;
        self.step += 1;
        Ok(self.metrics(started, &report, Some(disc_norm)))
    }

    /// Plain regression update; the discriminator is not involved.
    pub fn train_step_supervised(&mut self, batch: &Batch<'_>) -> Result<StepMetrics> {
        let started = Instant::now();
        let mut g = self.gradients(batch, Objective::Supervised)?;
        let report = g.clone();
        self.apply(Self::se_slice(&mut g), &SE_GROUPS)?;
        self.step += 1;
        Ok(self.metrics(started, &report, None))
    }

    /// The step `cfg.mode` and `cfg.scheme` call for.
    pub fn train_step(&mut self, batch: &Batch<'_>) -> Result<StepMetrics> {
        match (self.cfg.mode, self.cfg.scheme) {
            (TrainMode::Baseline | TrainMode::Oracle, _) => self.train_step_supervised(batch),
            (TrainMode::Dat, Scheme::Alternating) => self.train_step_alternating(batch),
            (TrainMode::Dat, Scheme::Grl) => self.train_step_grl(batch),
        }
    }

    /// Runs `cfg.epochs` epochs over `pool`. `on_step` sees every step's
    /// metrics, `on_epoch` the model after each epoch (1-based index).
    pub fn fit(
        &mut self,
        pool: &SegmentPool,
        mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
        mut on_epoch: impl FnMut(usize, &ModelParams<f32>) -> Result<()>,
    ) -> Result<TrainSummary> {
        if pool.is_empty() {
            return Err(Error::Degenerate("training pool is empty".into()));
        }
        let mut summary = TrainSummary { steps: 0, epochs: 0, final_l_regress: None, final_l_dat: None };
        for epoch in 0..self.cfg.epochs {
            self.epoch = epoch + 1;
            let (mut reg, mut reg_n, mut dat, mut dat_n) = (0.0, 0usize, 0.0, 0usize);
            for batch in make_batches(pool, self.cfg.batch_size, self.cfg.seed, epoch) {
                let m = self.train_step(&batch)?;
                if let Some(v) = m.l_regress {
                    reg += v;
                    reg_n += 1;
                }
                if let Some(v) = m.l_dat {
                    dat += v;
                    dat_n += 1;
                }
                on_step(&m)?;
            }
            summary.final_l_regress = (reg_n > 0).then(|| reg / reg_n as f64);
            summary.final_l_dat = (dat_n > 0).then(|| dat / dat_n as f64);
            summary.epochs = self.epoch;
            log::info!(
                "epoch {}: l_regress {} l_dat {}",
                self.epoch,
                fmt_opt(summary.final_l_regress),
                fmt_opt(summary.final_l_dat)
            );
            on_epoch(self.epoch, &self.model)?;
        }
        summary.steps = self.step;
        Ok(summary)
    }
}
