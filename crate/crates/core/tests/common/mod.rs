//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use datse_core::nn::{Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;
pub const FD_ABS_TOL: f64 = 1e-5;

/// A differentiable input: values plus matrix shape.
#[derive(Clone)]
pub struct Input {
    pub name: &'static str,
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Input {
    /// Uniform values drawn in `f32` and promoted, like trained parameters.
    pub fn random(name: &'static str, rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let values = (0..rows * cols).map(|_| (rng.random_range(-scale..scale) as f32) as f64).collect();
        Self { name, values, rows, cols }
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub name: &'static str,
    pub rel_err: f64,
    pub abs_err: f64,
}

impl FdReport {
    pub fn passes(&self) -> bool {
        self.rel_err < FD_REL_TOL && self.abs_err < FD_ABS_TOL
    }
}

/// Scalar loss built on a fresh tape from variables in `inputs` order.
pub type LossFn = dyn for<'p> Fn(&mut Tape<'p, f64>, &[Var]) -> Var;

fn evaluate(inputs: &[Input], build: &LossFn) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> =
        inputs.iter().map(|i| tape.variable(i.values.clone(), i.rows, i.cols).unwrap()).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss)[0]
}

/// Compares tape gradients with central differences for every element of
/// every input. The relative error is norm-wise per input, the absolute
/// error is the largest elementwise deviation.
pub fn fd_check(inputs: &[Input], build: &LossFn) -> Vec<FdReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> =
        inputs.iter().map(|i| tape.variable(i.values.clone(), i.rows, i.cols).unwrap()).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let mut reports = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic: Vec<f64> =
            grads.wrt(vars[k]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; input.values.len()]);
        let mut numeric = Vec::with_capacity(input.values.len());
        for j in 0..input.values.len() {
            let mut plus = inputs.to_vec();
            plus[k].values[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].values[j] -= FD_STEP;
            numeric.push((evaluate(&plus, build) - evaluate(&minus, build)) / (2.0 * FD_STEP));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel_err = if scale == 0.0 { 0.0 } else { diff / scale };
        let abs_err = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
        reports.push(FdReport { name: input.name, rel_err, abs_err });
    }
    reports
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Targets at least 0.1 away from `pred` so the absolute value has no kink
/// within a finite-difference step.
pub fn offset_targets(pred: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    pred.iter()
        .map(|p| {
            let d = rng.random_range(0.1..0.6);
            if rng.random_bool(0.5) {
                p + d
            } else {
                p - d
            }
        })
        .collect()
}

pub type Case = (Vec<Input>, Box<LossFn>);

/// Layers covered by the gradient checks, in reporting order.
pub const LAYERS: [&str; 6] = ["lstm-fwd", "lstm-bwd", "blstm", "dense", "softmax-ce", "mae"];

pub fn layer_case(layer: &str, seed: u64) -> Case {
    match layer {
        "lstm-fwd" => lstm_case(seed, false),
        "lstm-bwd" => lstm_case(seed, true),
        "blstm" => blstm_case(seed),
        "dense" => dense_case(seed),
        "softmax-ce" => softmax_ce_case(seed),
        "mae" => mae_case(seed),
        other => panic!("unknown layer {other}"),
    }
}

fn lstm_inputs(seed: u64, t: usize, input: usize, hidden: usize) -> Vec<Input> {
    let mut g = rng(seed);
    let kw = 1.0 / (input as f64).sqrt();
    let ku = 1.0 / (hidden as f64).sqrt();
    vec![
        Input::random("x", t, input, 1.0, &mut g),
        Input::random("w", 4 * hidden, input, kw, &mut g),
        Input::random("u", 4 * hidden, hidden, ku, &mut g),
        Input::random("b", 1, 4 * hidden, 0.5, &mut g),
    ]
}

fn lstm_case(seed: u64, reverse: bool) -> Case {
    let (t, input, hidden) = (4, 3, 3);
    let inputs = lstm_inputs(seed, t, input, hidden);
    let weights = random_weights(t * hidden, &mut rng(seed + 1000));
    let build = move |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let h = tape.lstm(v[0], v[1], v[2], v[3], reverse).unwrap();
        tape.weighted_sum(h, weights.clone()).unwrap()
    };
    (inputs, Box::new(build))
}

fn blstm_case(seed: u64) -> Case {
    let (t, input, hidden) = (4, 3, 2);
    let mut inputs = lstm_inputs(seed, t, input, hidden);
    let back = lstm_inputs(seed + 500, t, input, hidden);
    inputs.extend(back.into_iter().skip(1).map(|mut i| {
        i.name = match i.name {
            "w" => "w_bwd",
            "u" => "u_bwd",
            _ => "b_bwd",
        };
        i
    }));
    let weights = random_weights(t * 2 * hidden, &mut rng(seed + 1000));
    let build = move |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let f = tape.lstm(v[0], v[1], v[2], v[3], false).unwrap();
        let b = tape.lstm(v[0], v[4], v[5], v[6], true).unwrap();
        let y = tape.concat_cols(f, b).unwrap();
        tape.weighted_sum(y, weights.clone()).unwrap()
    };
    (inputs, Box::new(build))
}

fn dense_case(seed: u64) -> Case {
    let mut g = rng(seed);
    let inputs = vec![
        Input::random("x", 3, 5, 1.0, &mut g),
        Input::random("w", 4, 5, 0.5, &mut g),
        Input::random("b", 1, 4, 0.5, &mut g),
    ];
    let weights = random_weights(12, &mut g);
    let build = move |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let y = tape.dense(v[0], v[1], v[2]).unwrap();
        tape.weighted_sum(y, weights.clone()).unwrap()
    };
    (inputs, Box::new(build))
}

fn softmax_ce_case(seed: u64) -> Case {
    let mut g = rng(seed);
    let inputs = vec![
        Input::random("x", 3, 4, 1.0, &mut g),
        Input::random("w", 5, 4, 1.0, &mut g),
        Input::random("b", 1, 5, 0.5, &mut g),
    ];
    let labels = [(seed % 5) as usize, 2, 4];
    let build = move |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let z = tape.dense(v[0], v[1], v[2]).unwrap();
        let p = tape.softmax(z);
        tape.cross_entropy(p, &labels, 1.0 / 3.0).unwrap()
    };
    (inputs, Box::new(build))
}

fn mae_case(seed: u64) -> Case {
    let mut g = rng(seed);
    let inputs = vec![
        Input::random("x", 3, 4, 1.0, &mut g),
        Input::random("w", 4, 4, 0.5, &mut g),
        Input::random("b", 1, 4, 0.5, &mut g),
    ];
    let mut tape = Tape::new();
    let v: Vec<Var> = inputs.iter().map(|i| tape.constant(i.values.clone(), i.rows, i.cols).unwrap()).collect();
    let pred = tape.dense(v[0], v[1], v[2]).unwrap();
    let target = offset_targets(tape.value(pred), &mut g);
    let build = move |tape: &mut Tape<'_, f64>, v: &[Var]| {
        let y = tape.dense(v[0], v[1], v[2]).unwrap();
        tape.mae(y, target.clone(), 1.0 / 12.0).unwrap()
    };
    (inputs, Box::new(build))
}
