use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// One LSTM direction. Gates are stacked `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<F = f32> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub direction: Direction,
    /// `4H x input_dim`
    pub w: Tensor<F>,
    /// `4H x H`
    pub u: Tensor<F>,
    /// `4H`
    pub b: Tensor<F>,
}

/// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
fn uniform_init<F: Scalar, R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor<F> {
    let k = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| F::of(rng.random_range(-k..k)))
}

impl<F: Scalar> LstmLayer<F> {
    pub fn zeros(input_dim: usize, hidden_dim: usize, direction: Direction) -> Self {
        let g = 4 * hidden_dim;
        Self {
            input_dim,
            hidden_dim,
            direction,
            w: Tensor::zeros(vec![g, input_dim]),
            u: Tensor::zeros(vec![g, hidden_dim]),
            b: Tensor::zeros(vec![g]),
        }
    }

    /// Random weights, forget-gate bias 1.0, other biases 0.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, direction: Direction, rng: &mut R) -> Self {
        let g = 4 * hidden_dim;
        let w = uniform_init(vec![g, input_dim], input_dim, rng);
        let u = uniform_init(vec![g, hidden_dim], hidden_dim, rng);
        let b = Tensor::from_fn(vec![g], |i| {
            if (hidden_dim..2 * hidden_dim).contains(&i) {
                F::one()
            } else {
                F::zero()
            }
        });
        Self { input_dim, hidden_dim, direction, w, u, b }
    }

    pub fn tensors(&self) -> [&Tensor<F>; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<F>; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    /// Places the weights on `tape` as parameters `first_id..first_id + 3`.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>, first_id: usize) -> BoundLstm {
        BoundLstm {
            w: tape.param(first_id, &self.w),
            u: tape.param(first_id + 1, &self.u),
            b: tape.param(first_id + 2, &self.b),
            reverse: self.direction == Direction::Backward,
        }
    }

    /// Binds with ids starting at 0 and runs over `x`.
    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, F>, x: Var) -> Result<Var> {
        self.bind(tape, 0).forward(tape, x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLstm {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    reverse: bool,
}

impl BoundLstm {
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        tape.lstm(x, self.w, self.u, self.b, self.reverse)
    }
}

/// Forward and backward LSTM whose outputs are concatenated per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Blstm<F = f32> {
    pub fwd: LstmLayer<F>,
    pub bwd: LstmLayer<F>,
}

impl<F: Scalar> Blstm<F> {
    pub fn new(fwd: LstmLayer<F>, bwd: LstmLayer<F>) -> Result<Self> {
        if fwd.hidden_dim != bwd.hidden_dim || fwd.input_dim != bwd.input_dim {
            return Err(Error::Shape(format!(
                "directions disagree: {}->{} vs {}->{}",
                fwd.input_dim, fwd.hidden_dim, bwd.input_dim, bwd.hidden_dim
            )));
        }
        if fwd.direction != Direction::Forward || bwd.direction != Direction::Backward {
            return Err(Error::Argument("blstm needs one forward and one backward layer".into()));
        }
        Ok(Self { fwd, bwd })
    }

    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let fwd = LstmLayer::init(input_dim, hidden_dim, Direction::Forward, rng);
        let bwd = LstmLayer::init(input_dim, hidden_dim, Direction::Backward, rng);
        Self { fwd, bwd }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            fwd: LstmLayer::zeros(input_dim, hidden_dim, Direction::Forward),
            bwd: LstmLayer::zeros(input_dim, hidden_dim, Direction::Backward),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden_dim
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.fwd.tensors().into_iter().chain(self.bwd.tensors())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.fwd.tensors_mut().into_iter().chain(self.bwd.tensors_mut())
    }

    /// Parameters `first_id..first_id + 6`, forward direction first.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>, first_id: usize) -> BoundBlstm {
        BoundBlstm { fwd: self.fwd.bind(tape, first_id), bwd: self.bwd.bind(tape, first_id + 3) }
    }

    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, F>, x: Var) -> Result<Var> {
        self.bind(tape, 0).forward(tape, x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBlstm {
    pub fwd: BoundLstm,
    pub bwd: BoundLstm,
}

impl BoundBlstm {
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        let f = self.fwd.forward(tape, x)?;
        let b = self.bwd.forward(tape, x)?;
        tape.concat_cols(f, b)
    }
}

/// Affine map `x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F = f32> {
    /// `out x in`
    pub w: Tensor<F>,
    pub b: Tensor<F>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(w: Tensor<F>, b: Tensor<F>) -> Result<Self> {
        let (out, _) = w.matrix_dims();
        if w.shape().len() != 2 || b.len() != out {
            return Err(Error::Shape(format!("dense weights {:?} with bias {:?}", w.shape(), b.shape())));
        }
        Ok(Self { w, b })
    }

    pub fn init<R: Rng>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        Self { w: uniform_init(vec![output_dim, input_dim], input_dim, rng), b: Tensor::zeros(vec![output_dim]) }
    }

    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Self { w: Tensor::zeros(vec![output_dim, input_dim]), b: Tensor::zeros(vec![output_dim]) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.matrix_dims().1
    }

    pub fn output_dim(&self) -> usize {
        self.w.matrix_dims().0
    }

    pub fn tensors(&self) -> [&Tensor<F>; 2] {
        [&self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<F>; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, F>, first_id: usize) -> BoundDense {
        BoundDense { w: tape.param(first_id, &self.w), b: tape.param(first_id + 1, &self.b) }
    }

    pub fn forward<'p>(&'p self, tape: &mut Tape<'p, F>, x: Var) -> Result<Var> {
        self.bind(tape, 0).forward(tape, x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: Var,
    pub b: Var,
}

impl BoundDense {
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<'_, F>, x: Var) -> Result<Var> {
        tape.dense(x, self.w, self.b)
    }
}
