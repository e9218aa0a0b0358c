use super::batch::{Batch, PoolRow};
use super::loss::grl;
use crate::error::{Error, Result};
use crate::nn::{ModelParams, ParamGrads, Scalar, Tape};
use crate::parallel::Exec;

/// What a gradient pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `L_DAT` with the encoder output detached; only the discriminator
    /// receives gradient.
    Discriminator,
    /// `L_regress - lambda * L_DAT` through the discriminator unchanged.
    Adversarial { lambda: f64 },
    /// `L_regress + L_DAT` with a reversal layer of strength `lambda`
    /// between encoder and discriminator.
    Grl { lambda: f64 },
    /// `L_regress` alone.
    Supervised,
}

impl Objective {
    fn uses_regress(self) -> bool {
        !matches!(self, Objective::Discriminator)
    }

    fn uses_dat(self) -> bool {
        !matches!(self, Objective::Supervised)
    }
}

/// Summed gradients of one batch plus the loss values they came from.
#[derive(Debug, Clone)]
pub struct BatchGradients<F> {
    pub grads: ParamGrads<F>,
    /// Absent when the objective has no regression term or the batch has no
    /// supervised row.
    pub l_regress: Option<f64>,
    pub l_dat: Option<f64>,
    pub disc_accuracy: Option<f64>,
}

struct RowOutcome<F> {
    grads: Option<ParamGrads<F>>,
    regress: f64,
    dat: f64,
    correct: bool,
}

fn to_scalar<F: Scalar>(v: &[f32]) -> Vec<F> {
    v.iter().map(|x| F::of(*x as f64)).collect()
}

fn argmax<F: Scalar>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn row_pass<F: Scalar>(
    model: &ModelParams<F>,
    row: &PoolRow,
    frames: usize,
    objective: Objective,
    w_regress: f64,
    w_dat: f64,
) -> Result<RowOutcome<F>> {
    let supervised = objective.uses_regress() && row.target.is_some();
    if !supervised && !objective.uses_dat() {
        return Ok(RowOutcome { grads: None, regress: 0.0, dat: 0.0, correct: false });
    }
    let bins = model.config.feature_dim;
    if row.input.len() != frames * bins {
        return Err(Error::Shape(format!("row has {} values, expected {frames}x{bins}", row.input.len())));
    }
    let num_classes = model.config.num_classes;
    if row.label == 0 || row.label as usize > num_classes {
        return Err(Error::Argument(format!("label {} outside 1..={num_classes}", row.label)));
    }

    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let x = tape.constant(to_scalar(&row.input), frames, bins)?;
    let f = vars.encode(&mut tape, x)?;
    let mut loss = None;
    let mut out = RowOutcome { grads: None, regress: 0.0, dat: 0.0, correct: false };

    if supervised {
        let target = row.target.as_deref().map(to_scalar::<F>).unwrap_or_default();
        let y = vars.decode(&mut tape, f)?;
        let mae = tape.mae(y, target, F::of(w_regress))?;
        out.regress = tape.value(mae)[0].as_f64();
        loss = Some(mae);
    }
    if objective.uses_dat() {
        let input = match objective {
            Objective::Discriminator => tape.detach(f),
            Objective::Grl { lambda } => grl(&mut tape, f, lambda),
            _ => f,
        };
        let probs = vars.discriminate(&mut tape, input)?;
        let label = row.label as usize - 1;
        out.correct = argmax(tape.value(probs)) == label;
        let ce = tape.cross_entropy(probs, &[label], F::of(w_dat))?;
        out.dat = tape.value(ce)[0].as_f64();
        let term = match objective {
            Objective::Adversarial { lambda } => tape.scale(ce, F::of(-lambda)),
            _ => ce,
        };
        loss = Some(match loss {
            Some(l) => tape.add(l, term)?,
            None => term,
        });
    }
    if let Some(loss) = loss {
        let grads = tape.backward(loss)?;
        out.grads = Some(ParamGrads::from_gradients(&grads, model));
    }
    Ok(out)
}

/// Gradients of `objective` summed over the batch.
///
/// `L_regress` averages absolute errors over supervised rows, frames and
/// bins; `L_DAT` averages cross-entropy over all rows. Rows are processed
/// independently (in parallel under [`Exec::Parallel`]) and reduced in row
/// order, so the result does not depend on `exec`.
pub fn batch_gradients<F: Scalar>(
    model: &ModelParams<F>,
    batch: &Batch<'_>,
    objective: Objective,
    exec: Exec,
) -> Result<BatchGradients<F>> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let n_sup = batch.supervised_rows();
    if objective == Objective::Supervised && n_sup == 0 {
        return Err(Error::Usage("regression loss needs at least one source row".into()));
    }
    let w_regress = 1.0 / (n_sup.max(1) * batch.frames * model.config.feature_dim) as f64;
    let w_dat = 1.0 / batch.len() as f64;

    let outcomes = exec.map(&batch.rows, |row| row_pass(model, row, batch.frames, objective, w_regress, w_dat));
    let mut grads = ParamGrads::zeros_like(model);
    let (mut regress, mut dat, mut correct) = (0.0, 0.0, 0usize);
    for o in outcomes {
        let o = o?;
        if let Some(g) = &o.grads {
            grads.add_assign(g);
        }
        regress += o.regress;
        dat += o.dat;
        correct += o.correct as usize;
    }
    let has_regress = objective.uses_regress() && n_sup > 0;
    Ok(BatchGradients {
        grads,
        l_regress: has_regress.then_some(regress),
        l_dat: objective.uses_dat().then_some(dat),
        disc_accuracy: objective.uses_dat().then(|| correct as f64 / batch.len() as f64),
    })
}

/// `L_DAT` of the batch under `model`, forward only.
pub fn evaluate_dat_loss<F: Scalar>(model: &ModelParams<F>, batch: &Batch<'_>, exec: Exec) -> Result<f64> {
    let per_row = exec.map(&batch.rows, |row| -> Result<f64> {
        let probs = model.classify(&to_scalar::<F>(&row.input), batch.frames)?;
        let p: Vec<f64> = probs.iter().map(|v| v.as_f64()).collect();
        super::dat_loss(&p, &[row.label], model.config.num_classes)
    });
    let mut total = 0.0;
    for v in per_row {
        total += v?;
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dat::{Domain, PoolRow};
    use crate::nn::{ModelConfig, ParamGroup};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig { feature_dim: 4, encoder_hidden: 3, decoder_hidden: 2, discriminator_hidden: 3, num_classes: 3 }
    }

    fn rows(n_src: usize, n_tgt: usize, frames: usize, seed: u64) -> Vec<PoolRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
        let mut out = Vec::new();
        for i in 0..n_src + n_tgt {
            let src = i < n_src;
            out.push(PoolRow {
                input: v(frames * 4),
                target: src.then(|| v(frames * 4)),
                label: if src { 1 + (i % 2) as u32 } else { 3 },
                domain: if src { Domain::Source } else { Domain::Target },
            });
        }
        out
    }

    #[test]
    fn discriminator_objective_only_touches_discriminator() {
        let m = ModelParams::<f64>::init(cfg(), 1).unwrap();
        let r = rows(2, 2, 3, 2);
        let batch = Batch::new(r.iter().collect(), 3);
        let g = batch_gradients(&m, &batch, Objective::Discriminator, Exec::Sequential).unwrap();
        assert_eq!(g.grads.norm(&[ParamGroup::Encoder, ParamGroup::Decoder]), 0.0);
        assert!(g.grads.norm(&[ParamGroup::Discriminator]) > 0.0);
        assert!(g.l_regress.is_none());
    }

    #[test]
    fn supervised_objective_ignores_discriminator() {
        let m = ModelParams::<f64>::init(cfg(), 1).unwrap();
        let r = rows(2, 1, 3, 2);
        let batch = Batch::new(r.iter().collect(), 3);
        let g = batch_gradients(&m, &batch, Objective::Supervised, Exec::Sequential).unwrap();
        assert_eq!(g.grads.norm(&[ParamGroup::Discriminator]), 0.0);
        assert!(g.l_dat.is_none());
        let target_only = Batch::new(r[2..].iter().collect(), 3);
        assert!(matches!(
            batch_gradients(&m, &target_only, Objective::Supervised, Exec::Sequential),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn loss_values_match_direct_evaluation() {
        let m = ModelParams::<f64>::init(cfg(), 4).unwrap();
        let r = rows(3, 2, 2, 5);
        let batch = Batch::new(r.iter().collect(), 2);
        let g = batch_gradients(&m, &batch, Objective::Adversarial { lambda: 0.3 }, Exec::Sequential).unwrap();

        let mut preds = Vec::new();
        let mut targets = Vec::new();
        for row in &r[..3] {
            let x: Vec<f64> = row.input.iter().map(|v| *v as f64).collect();
            preds.extend(m.predict(&x, 2).unwrap());
            targets.extend(row.target.as_ref().unwrap().iter().map(|v| *v as f64));
        }
        let reg = crate::dat::regress_loss(&preds, &targets).unwrap();
        assert!((g.l_regress.unwrap() - reg).abs() < 1e-12);
        let dat = evaluate_dat_loss(&m, &batch, Exec::Sequential).unwrap();
        assert!((g.l_dat.unwrap() - dat).abs() < 1e-12);
    }

    #[test]
    fn parallel_reduction_is_bit_identical() {
        let m = ModelParams::<f32>::init(cfg(), 7).unwrap();
        let r = rows(5, 3, 4, 8);
        let batch = Batch::new(r.iter().collect(), 4);
        for obj in [Objective::Discriminator, Objective::Adversarial { lambda: 0.05 }, Objective::Grl { lambda: 0.05 }] {
            let a = batch_gradients(&m, &batch, obj, Exec::Sequential).unwrap();
            let b = batch_gradients(&m, &batch, obj, Exec::Parallel).unwrap();
            assert_eq!(a.grads, b.grads);
            assert_eq!(a.l_dat, b.l_dat);
        }
    }

    #[test]
    fn zero_lambda_adversarial_equals_supervised_on_encoder_and_decoder() {
        let m = ModelParams::<f32>::init(cfg(), 9).unwrap();
        let r = rows(3, 2, 3, 10);
        let batch = Batch::new(r.iter().collect(), 3);
        let a = batch_gradients(&m, &batch, Objective::Adversarial { lambda: 0.0 }, Exec::Sequential).unwrap();
        let s = batch_gradients(&m, &batch, Objective::Supervised, Exec::Sequential).unwrap();
        for group in [ParamGroup::Encoder, ParamGroup::Decoder] {
            assert_eq!(a.grads.group(group), s.grads.group(group));
        }
    }
}
