use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BoundBlstm, BoundDense, BoundLstm};
use super::{Blstm, Dense, Direction, Gradients, LstmLayer, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Units per direction of the encoder BLSTM.
    pub encoder_hidden: usize,
    /// Units per direction of the decoder BLSTM.
    pub decoder_hidden: usize,
    pub discriminator_hidden: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { feature_dim: 257, encoder_hidden: 32, decoder_hidden: 32, discriminator_hidden: 32, num_classes: 6 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("discriminator_hidden", self.discriminator_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("model.num_classes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        2 * self.encoder_hidden
    }
}

/// Per-bin affine normalization `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub const STD_FLOOR: f64 = 1e-3;

    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and floored standard deviation of each bin over frame-major
    /// blocks of `dim` values.
    pub fn fit<'a>(dim: usize, blocks: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut count = 0usize;
        for block in blocks {
            if block.len() % dim != 0 {
                return Err(Error::Shape(format!("block of {} values is not a multiple of {dim}", block.len())));
            }
            for frame in block.chunks(dim) {
                for (k, v) in frame.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Degenerate("no frames to fit normalization".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(Self::STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, data: &mut [f64]) {
        let dim = self.dim();
        for frame in data.chunks_mut(dim) {
            for (k, v) in frame.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
    }

    pub fn denormalize(&self, data: &mut [f64]) {
        let dim = self.dim();
        for frame in data.chunks_mut(dim) {
            for (k, v) in frame.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
    }
}

/// Which optimizer owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Decoder,
    Discriminator,
}

/// Encoder BLSTM, decoder BLSTM plus projection, discriminator LSTM plus
/// classifier, and the feature normalizers applied around the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F = f32> {
    pub config: ModelConfig,
    pub encoder: Blstm<F>,
    pub decoder: Blstm<F>,
    pub projection: Dense<F>,
    pub discriminator: LstmLayer<F>,
    pub classifier: Dense<F>,
    pub input_norm: FeatureNorm,
    pub output_norm: FeatureNorm,
}

pub const NUM_PARAMS: usize = 19;
const ENCODER_IDS: std::ops::Range<usize> = 0..6;
const DECODER_IDS: std::ops::Range<usize> = 6..14;
const DISCRIMINATOR_IDS: std::ops::Range<usize> = 14..19;

const PARAM_NAMES: [&str; NUM_PARAMS] = [
    "encoder.fwd.w",
    "encoder.fwd.u",
    "encoder.fwd.b",
    "encoder.bwd.w",
    "encoder.bwd.u",
    "encoder.bwd.b",
    "decoder.fwd.w",
    "decoder.fwd.u",
    "decoder.fwd.b",
    "decoder.bwd.w",
    "decoder.bwd.u",
    "decoder.bwd.b",
    "projection.w",
    "projection.b",
    "discriminator.w",
    "discriminator.u",
    "discriminator.b",
    "classifier.w",
    "classifier.b",
];

impl<F: Scalar> ModelParams<F> {
    /// Seeded initialization; the same seed gives bit-identical weights.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = config.feature_width();
        Ok(Self {
            config,
            encoder: Blstm::init(config.feature_dim, config.encoder_hidden, &mut rng),
            decoder: Blstm::init(f, config.decoder_hidden, &mut rng),
            projection: Dense::init(2 * config.decoder_hidden, config.feature_dim, &mut rng),
            discriminator: LstmLayer::init(f, config.discriminator_hidden, Direction::Forward, &mut rng),
            classifier: Dense::init(config.discriminator_hidden, config.num_classes, &mut rng),
            input_norm: FeatureNorm::identity(config.feature_dim),
            output_norm: FeatureNorm::identity(config.feature_dim),
        })
    }

    /// Every weight and bias zero, identity normalizers.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let f = config.feature_width();
        Ok(Self {
            config,
            encoder: Blstm::zeros(config.feature_dim, config.encoder_hidden),
            decoder: Blstm::zeros(f, config.decoder_hidden),
            projection: Dense::zeros(2 * config.decoder_hidden, config.feature_dim),
            discriminator: LstmLayer::zeros(f, config.discriminator_hidden, Direction::Forward),
            classifier: Dense::zeros(config.discriminator_hidden, config.num_classes),
            input_norm: FeatureNorm::identity(config.feature_dim),
            output_norm: FeatureNorm::identity(config.feature_dim),
        })
    }

    pub fn param_names() -> &'static [&'static str] {
        &PARAM_NAMES
    }

    pub fn group_of(id: usize) -> ParamGroup {
        if ENCODER_IDS.contains(&id) {
            ParamGroup::Encoder
        } else if DECODER_IDS.contains(&id) {
            ParamGroup::Decoder
        } else {
            ParamGroup::Discriminator
        }
    }

    pub fn ids(group: ParamGroup) -> std::ops::Range<usize> {
        match group {
            ParamGroup::Encoder => ENCODER_IDS,
            ParamGroup::Decoder => DECODER_IDS,
            ParamGroup::Discriminator => DISCRIMINATOR_IDS,
        }
    }

    /// Parameters in declared order.
    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut v: Vec<&Tensor<F>> = self.encoder.tensors().chain(self.decoder.tensors()).collect();
        v.extend(self.projection.tensors());
        v.extend(self.discriminator.tensors());
        v.extend(self.classifier.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut v: Vec<&mut Tensor<F>> = self.encoder.tensors_mut().chain(self.decoder.tensors_mut()).collect();
        v.extend(self.projection.tensors_mut());
        v.extend(self.discriminator.tensors_mut());
        v.extend(self.classifier.tensors_mut());
        v
    }

    /// Tensors of the listed groups, in declared order.
    pub fn group_tensors_mut(&mut self, groups: &[ParamGroup]) -> Vec<&mut Tensor<F>> {
        self.tensors_mut()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| groups.contains(&Self::group_of(*i)))
            .map(|(_, t)| t)
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config,
            encoder: cast_blstm(&self.encoder),
            decoder: cast_blstm(&self.decoder),
            projection: Dense { w: self.projection.w.cast(), b: self.projection.b.cast() },
            discriminator: cast_lstm(&self.discriminator),
            classifier: Dense { w: self.classifier.w.cast(), b: self.classifier.b.cast() },
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
        }
    }

    /// Places every parameter on `tape` under its declared id.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>) -> ParamVars {
        ParamVars {
            encoder: self.encoder.bind(tape, ENCODER_IDS.start),
            decoder: self.decoder.bind(tape, DECODER_IDS.start),
            projection: self.projection.bind(tape, DECODER_IDS.start + 6),
            discriminator: self.discriminator.bind(tape, DISCRIMINATOR_IDS.start),
            classifier: self.classifier.bind(tape, DISCRIMINATOR_IDS.start + 3),
        }
    }

    /// Decoded (normalized-space) output for one normalized input segment
    /// of `frames x feature_dim` values; no gradients are kept.
    pub fn predict(&self, input: &[F], frames: usize) -> Result<Vec<F>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(input.to_vec(), frames, self.config.feature_dim)?;
        let f = vars.encode(&mut tape, x)?;
        let y = vars.decode(&mut tape, f)?;
        Ok(tape.value(y).to_vec())
    }

    /// Discriminator class posteriors for one normalized input segment.
    pub fn classify(&self, input: &[F], frames: usize) -> Result<Vec<F>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(input.to_vec(), frames, self.config.feature_dim)?;
        let f = vars.encode(&mut tape, x)?;
        let p = vars.discriminate(&mut tape, f)?;
        Ok(tape.value(p).to_vec())
    }
}

fn cast_lstm<F: Scalar, G: Scalar>(l: &LstmLayer<F>) -> LstmLayer<G> {
    LstmLayer {
        input_dim: l.input_dim,
        hidden_dim: l.hidden_dim,
        direction: l.direction,
        w: l.w.cast(),
        u: l.u.cast(),
        b: l.b.cast(),
    }
}

fn cast_blstm<F: Scalar, G: Scalar>(b: &Blstm<F>) -> Blstm<G> {
    Blstm { fwd: cast_lstm(&b.fwd), bwd: cast_lstm(&b.bwd) }
}

/// Tape handles of every model parameter.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub encoder: BoundBlstm,
    pub decoder: BoundBlstm,
    pub projection: BoundDense,
    pub discriminator: BoundLstm,
    pub classifier: BoundDense,
}

impl ParamVars {
    /// Latent feature sequence, `T x 2H`.
    pub fn encode<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        self.encoder.forward(tape, x)
    }

    /// Decoded features, `T x feature_dim`.
    pub fn decode<F: Scalar>(&self, tape: &mut Tape<'_, F>, f: Var) -> Result<Var> {
        let h = self.decoder.forward(tape, f)?;
        self.projection.forward(tape, h)
    }

    /// Class posteriors `1 x C` from the discriminator's last frame.
    pub fn discriminate<F: Scalar>(&self, tape: &mut Tape<'_, F>, f: Var) -> Result<Var> {
        let h = self.discriminator.forward(tape, f)?;
        let last = tape.last_row(h);
        let z = self.classifier.forward(tape, last)?;
        Ok(tape.softmax(z))
    }
}

/// Gradient buffers shaped like the model's parameters, in declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<F = f32> {
    pub tensors: Vec<Vec<F>>,
}

impl<F: Scalar> ParamGrads<F> {
    pub fn zeros_like(model: &ModelParams<F>) -> Self {
        Self { tensors: model.tensors().iter().map(|t| vec![F::zero(); t.len()]).collect() }
    }

    /// Collects parameter gradients; parameters without one stay zero.
    pub fn from_gradients(grads: &Gradients<F>, model: &ModelParams<F>) -> Self {
        let mut out = Self::zeros_like(model);
        for (id, slot) in out.tensors.iter_mut().enumerate() {
            if let Some(g) = grads.param(id) {
                *slot = g;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn group(&self, group: ParamGroup) -> &[Vec<F>] {
        &self.tensors[ModelParams::<F>::ids(group)]
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> &mut [Vec<F>] {
        &mut self.tensors[ModelParams::<F>::ids(group)]
    }

    /// L2 norm over the listed groups, accumulated in f64.
    pub fn norm(&self, groups: &[ParamGroup]) -> f64 {
        groups
            .iter()
            .flat_map(|g| self.group(*g))
            .flat_map(|t| t.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}
