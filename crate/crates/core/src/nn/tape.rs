use std::borrow::Cow;

use super::kernels::{axpy, dot};
use super::{sigmoid, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Cross-entropy probabilities are floored here before the log.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

struct LstmRecord<F> {
    x: Var,
    w: Var,
    u: Var,
    b: Var,
    reverse: bool,
    hidden: usize,
    /// Post-activation gates per frame, `[i, f, g, o]` blocks of `hidden`.
    gates: Vec<F>,
    cells: Vec<F>,
    tanh_cells: Vec<F>,
}

enum Op<F> {
    Leaf,
    Lstm(Box<LstmRecord<F>>),
    Dense { x: Var, w: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    Grl { x: Var, lambda: F },
    LastRow { x: Var },
    Softmax { x: Var },
    CrossEntropy { probs: Var, labels: Vec<usize>, weight: F },
    Mae { pred: Var, target: Vec<F>, weight: F },
    Sum { x: Var },
    WeightedSum { x: Var, weights: Vec<F> },
    Scale { x: Var, k: F },
    Add { a: Var, b: Var },
}

struct Node<'p, F: Scalar> {
    value: Cow<'p, [F]>,
    rows: usize,
    cols: usize,
    requires_grad: bool,
    param: Option<usize>,
    op: Op<F>,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Every value is a `rows x cols` matrix; parameters are borrowed from their
/// tensors rather than copied. A tape is single-threaded and meant to be
/// built, differentiated once and dropped.
pub struct Tape<'p, F: Scalar> {
    nodes: Vec<Node<'p, F>>,
}

impl<F: Scalar> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Cow<'p, [F]>, rows: usize, cols: usize, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { value, rows, cols, requires_grad, param: None, op });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, values: Vec<F>, rows: usize, cols: usize) -> Result<Var> {
        check_len(values.len(), rows, cols)?;
        Ok(self.push(Cow::Owned(values), rows, cols, Op::Leaf, false))
    }

    /// Input whose gradient is kept by [`Tape::backward`].
    pub fn variable(&mut self, values: Vec<F>, rows: usize, cols: usize) -> Result<Var> {
        check_len(values.len(), rows, cols)?;
        Ok(self.push(Cow::Owned(values), rows, cols, Op::Leaf, true))
    }

    /// Trainable parameter, borrowed from `t`; its gradient is reported under `id`.
    pub fn param(&mut self, id: usize, t: &'p Tensor<F>) -> Var {
        let (rows, cols) = t.matrix_dims();
        let v = self.push(Cow::Borrowed(t.data()), rows, cols, Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Copy of `x` cut off from the graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let values = self.value(x).to_vec();
        self.push(Cow::Owned(values), rows, cols, Op::Leaf, false)
    }

    /// LSTM over the rows of `x` (`T x input`) with zero initial state.
    ///
    /// `w` is `4H x input`, `u` is `4H x H`, `b` has `4H` entries, gates in
    /// the order input, forget, cell, output. With `reverse` the sequence is
    /// consumed last-to-first and outputs are written back at their original
    /// frame index.
    pub fn lstm(&mut self, x: Var, w: Var, u: Var, b: Var, reverse: bool) -> Result<Var> {
        let (t_len, in_dim) = self.shape(x);
        let (g4, w_cols) = self.shape(w);
        if t_len == 0 {
            return Err(Error::Shape("lstm input has no frames".into()));
        }
        if g4 == 0 || g4 % 4 != 0 || w_cols != in_dim {
            return Err(Error::Shape(format!(
                "lstm input weights are {g4}x{w_cols}, input is {t_len}x{in_dim}"
            )));
        }
        let h = g4 / 4;
        if self.shape(u) != (g4, h) {
            return Err(Error::Shape(format!("recurrent weights must be {g4}x{h}, got {:?}", self.shape(u))));
        }
        if self.value(b).len() != g4 {
            return Err(Error::Shape(format!("lstm bias must have {g4} entries")));
        }

        let xv = self.value(x);
        let wv = self.value(w);
        let uv = self.value(u);
        let bv = self.value(b);
        let mut out = vec![F::zero(); t_len * h];
        let mut gates = vec![F::zero(); t_len * g4];
        let mut cells = vec![F::zero(); t_len * h];
        let mut tanh_cells = vec![F::zero(); t_len * h];
        let mut h_prev = vec![F::zero(); h];
        let mut c_prev = vec![F::zero(); h];
        let mut z = vec![F::zero(); g4];

        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let xt = &xv[t * in_dim..(t + 1) * in_dim];
            for r in 0..g4 {
                z[r] = bv[r]
                    + dot(&wv[r * in_dim..(r + 1) * in_dim], xt)
                    + dot(&uv[r * h..(r + 1) * h], &h_prev);
            }
            let gt = &mut gates[t * g4..(t + 1) * g4];
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let c_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                let c = f_g * c_prev[j] + i_g * c_g;
                let tc = c.tanh();
                gt[j] = i_g;
                gt[h + j] = f_g;
                gt[2 * h + j] = c_g;
                gt[3 * h + j] = o_g;
                cells[t * h + j] = c;
                tanh_cells[t * h + j] = tc;
                out[t * h + j] = o_g * tc;
            }
            h_prev.copy_from_slice(&out[t * h..(t + 1) * h]);
            c_prev.copy_from_slice(&cells[t * h..(t + 1) * h]);
        }

        let requires = self.grad_of(&[x, w, u, b]);
        let record = LstmRecord { x, w, u, b, reverse, hidden: h, gates, cells, tanh_cells };
        Ok(self.push(Cow::Owned(out), t_len, h, Op::Lstm(Box::new(record)), requires))
    }

    /// `x W^T + b` per row; no activation.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (rows, in_dim) = self.shape(x);
        let (out_dim, w_cols) = self.shape(w);
        if w_cols != in_dim || self.value(b).len() != out_dim {
            return Err(Error::Shape(format!(
                "dense weights {out_dim}x{w_cols} and bias {} do not fit input {rows}x{in_dim}",
                self.value(b).len()
            )));
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = Vec::with_capacity(rows * out_dim);
        for r in 0..rows {
            let xr = &xv[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                out.push(bv[o] + dot(&wv[o * in_dim..(o + 1) * in_dim], xr));
            }
        }
        let requires = self.grad_of(&[x, w, b]);
        Ok(self.push(Cow::Owned(out), rows, out_dim, Op::Dense { x, w, b }, requires))
    }

    /// Joins two matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(Error::Shape(format!("cannot concatenate {ra} rows with {rb} rows")));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            out.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        let requires = self.grad_of(&[a, b]);
        Ok(self.push(Cow::Owned(out), ra, ca + cb, Op::ConcatCols { a, b }, requires))
    }

    /// Gradient reversal: identity forward, gradient scaled by `-lambda` backward.
    pub fn grl(&mut self, x: Var, lambda: F) -> Var {
        let (rows, cols) = self.shape(x);
        let values = self.value(x).to_vec();
        let requires = self.grad_of(&[x]);
        self.push(Cow::Owned(values), rows, cols, Op::Grl { x, lambda }, requires)
    }

    pub fn last_row(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let values = self.value(x)[(rows - 1) * cols..].to_vec();
        let requires = self.grad_of(&[x]);
        self.push(Cow::Owned(values), 1, cols, Op::LastRow { x }, requires)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let values: Vec<F> = self.value(x).chunks(cols).flat_map(softmax_row).collect();
        let requires = self.grad_of(&[x]);
        self.push(Cow::Owned(values), rows, cols, Op::Softmax { x }, requires)
    }

    /// `-weight * sum_r ln(max(probs[r, labels[r]], 1e-12))`, labels zero-based.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize], weight: F) -> Result<Var> {
        let (rows, cols) = self.shape(probs);
        if labels.len() != rows {
            return Err(Error::Shape(format!("{} labels for {rows} probability rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Argument(format!("label index {bad} out of range for {cols} classes")));
        }
        let pv = self.value(probs);
        let floor = F::of(LOG_PROB_FLOOR);
        let total = labels
            .iter()
            .enumerate()
            .fold(F::zero(), |acc, (r, &l)| acc + pv[r * cols + l].max(floor).ln());
        let requires = self.grad_of(&[probs]);
        let op = Op::CrossEntropy { probs, labels: labels.to_vec(), weight };
        Ok(self.push(Cow::Owned(vec![-weight * total]), 1, 1, op, requires))
    }

    /// `weight * sum |pred - target|`.
    pub fn mae(&mut self, pred: Var, target: Vec<F>, weight: F) -> Result<Var> {
        if target.len() != self.value(pred).len() {
            return Err(Error::Shape(format!(
                "target has {} values, prediction {}",
                target.len(),
                self.value(pred).len()
            )));
        }
        let total = self
            .value(pred)
            .iter()
            .zip(&target)
            .fold(F::zero(), |acc, (p, t)| acc + (*p - *t).abs());
        let requires = self.grad_of(&[pred]);
        Ok(self.push(Cow::Owned(vec![weight * total]), 1, 1, Op::Mae { pred, target, weight }, requires))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().fold(F::zero(), |a, v| a + *v);
        let requires = self.grad_of(&[x]);
        self.push(Cow::Owned(vec![total]), 1, 1, Op::Sum { x }, requires)
    }

    /// `sum_i weights[i] * x[i]`.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<F>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::Shape("weights must match the input length".into()));
        }
        let total = self.value(x).iter().zip(&weights).fold(F::zero(), |a, (v, w)| a + *v * *w);
        let requires = self.grad_of(&[x]);
        Ok(self.push(Cow::Owned(vec![total]), 1, 1, Op::WeightedSum { x, weights }, requires))
    }

    pub fn scale(&mut self, x: Var, k: F) -> Var {
        let (rows, cols) = self.shape(x);
        let values = self.value(x).iter().map(|v| *v * k).collect();
        let requires = self.grad_of(&[x]);
        self.push(Cow::Owned(values), rows, cols, Op::Scale { x, k }, requires)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("cannot add {:?} and {:?}", self.shape(a), self.shape(b))));
        }
        let (rows, cols) = self.shape(a);
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let requires = self.grad_of(&[a, b]);
        Ok(self.push(Cow::Owned(values), rows, cols, Op::Add { a, b }, requires))
    }

    /// Reverse-mode accumulation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!("loss must be a scalar, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Lstm(rec) => self.lstm_backward(rec, &node.value, &g, &mut grads),
                Op::Dense { x, w, b } => {
                    let (rows, in_dim) = self.shape(*x);
                    let out_dim = node.cols;
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        for r in 0..rows {
                            let dxr = &mut dx[r * in_dim..(r + 1) * in_dim];
                            for o in 0..out_dim {
                                axpy(dxr, g[r * out_dim + o], &wv[o * in_dim..(o + 1) * in_dim]);
                            }
                        }
                    }
                    if let Some(dw) = self.slot(&mut grads, *w) {
                        for r in 0..rows {
                            let xr = &xv[r * in_dim..(r + 1) * in_dim];
                            for o in 0..out_dim {
                                axpy(&mut dw[o * in_dim..(o + 1) * in_dim], g[r * out_dim + o], xr);
                            }
                        }
                    }
                    if let Some(db) = self.slot(&mut grads, *b) {
                        for r in 0..rows {
                            axpy(db, F::one(), &g[r * out_dim..(r + 1) * out_dim]);
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.shape(*a).1;
                    let cb = self.shape(*b).1;
                    if let Some(da) = self.slot(&mut grads, *a) {
                        for r in 0..node.rows {
                            axpy(&mut da[r * ca..(r + 1) * ca], F::one(), &g[r * (ca + cb)..r * (ca + cb) + ca]);
                        }
                    }
                    if let Some(db) = self.slot(&mut grads, *b) {
                        for r in 0..node.rows {
                            axpy(&mut db[r * cb..(r + 1) * cb], F::one(), &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)]);
                        }
                    }
                }
                Op::Grl { x, lambda } => {
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        axpy(dx, -*lambda, &g);
                    }
                }
                Op::LastRow { x } => {
                    let (rows, cols) = self.shape(*x);
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        axpy(&mut dx[(rows - 1) * cols..], F::one(), &g);
                    }
                }
                Op::Softmax { x } => {
                    let cols = node.cols;
                    let p = &node.value;
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        for r in 0..node.rows {
                            let pr = &p[r * cols..(r + 1) * cols];
                            let gr = &g[r * cols..(r + 1) * cols];
                            let inner = dot(pr, gr);
                            for k in 0..cols {
                                dx[r * cols + k] = dx[r * cols + k] + pr[k] * (gr[k] - inner);
                            }
                        }
                    }
                }
                Op::CrossEntropy { probs, labels, weight } => {
                    let cols = self.shape(*probs).1;
                    let pv = self.value(*probs);
                    let floor = F::of(LOG_PROB_FLOOR);
                    if let Some(dp) = self.slot(&mut grads, *probs) {
                        for (r, &l) in labels.iter().enumerate() {
                            let p = pv[r * cols + l];
                            if p > floor {
                                dp[r * cols + l] = dp[r * cols + l] - g[0] * *weight / p;
                            }
                        }
                    }
                }
                Op::Mae { pred, target, weight } => {
                    let pv = self.value(*pred);
                    let scale = g[0] * *weight;
                    if let Some(dp) = self.slot(&mut grads, *pred) {
                        for ((d, p), t) in dp.iter_mut().zip(pv).zip(target) {
                            let diff = *p - *t;
                            if diff > F::zero() {
                                *d = *d + scale;
                            } else if diff < F::zero() {
                                *d = *d - scale;
                            }
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        dx.iter_mut().for_each(|d| *d = *d + g[0]);
                    }
                }
                Op::WeightedSum { x, weights } => {
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        axpy(dx, g[0], weights);
                    }
                }
                Op::Scale { x, k } => {
                    if let Some(dx) = self.slot(&mut grads, *x) {
                        axpy(dx, *k, &g);
                    }
                }
                Op::Add { a, b } => {
                    if let Some(da) = self.slot(&mut grads, *a) {
                        axpy(da, F::one(), &g);
                    }
                    if let Some(db) = self.slot(&mut grads, *b) {
                        axpy(db, F::one(), &g);
                    }
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, i)))
            .collect();
        Ok(Gradients { grads, params })
    }

    /// Gradient accumulator for `v`, allocated on first use; `None` when `v`
    /// does not take gradients.
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<F>>], v: Var) -> Option<&'g mut Vec<F>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.len()]))
    }

    fn lstm_backward(&self, rec: &LstmRecord<F>, hv: &[F], dout: &[F], grads: &mut [Option<Vec<F>>]) {
        let (t_len, in_dim) = self.shape(rec.x);
        let h = rec.hidden;
        let g4 = 4 * h;
        let xv = self.value(rec.x);
        let wv = self.value(rec.w);
        let uv = self.value(rec.u);

        let mut dx = self.nodes[rec.x.0].requires_grad.then(|| vec![F::zero(); t_len * in_dim]);
        let mut dw = self.nodes[rec.w.0].requires_grad.then(|| vec![F::zero(); g4 * in_dim]);
        let mut du = self.nodes[rec.u.0].requires_grad.then(|| vec![F::zero(); g4 * h]);
        let mut db = self.nodes[rec.b.0].requires_grad.then(|| vec![F::zero(); g4]);

        let zeros = vec![F::zero(); h];
        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        let mut dz = vec![F::zero(); g4];
        let one = F::one();

        for step in (0..t_len).rev() {
            let t = if rec.reverse { t_len - 1 - step } else { step };
            let prev = (step > 0).then(|| if rec.reverse { t + 1 } else { t - 1 });
            let c_prev = prev.map_or(&zeros[..], |p| &rec.cells[p * h..(p + 1) * h]);
            let h_prev = prev.map_or(&zeros[..], |p| &hv[p * h..(p + 1) * h]);
            let gt = &rec.gates[t * g4..(t + 1) * g4];
            for j in 0..h {
                let dh = dout[t * h + j] + dh_next[j];
                let (i_g, f_g, c_g, o_g) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
                let tc = rec.tanh_cells[t * h + j];
                let d_o = dh * tc;
                let dc = dh * o_g * (one - tc * tc) + dc_next[j];
                dc_next[j] = dc * f_g;
                dz[j] = dc * c_g * i_g * (one - i_g);
                dz[h + j] = dc * c_prev[j] * f_g * (one - f_g);
                dz[2 * h + j] = dc * i_g * (one - c_g * c_g);
                dz[3 * h + j] = d_o * o_g * (one - o_g);
            }
            let xt = &xv[t * in_dim..(t + 1) * in_dim];
            dh_next.iter_mut().for_each(|v| *v = F::zero());
            for r in 0..g4 {
                let d = dz[r];
                if let Some(dw) = dw.as_mut() {
                    axpy(&mut dw[r * in_dim..(r + 1) * in_dim], d, xt);
                }
                if let Some(du) = du.as_mut() {
                    axpy(&mut du[r * h..(r + 1) * h], d, h_prev);
                }
                if let Some(dx) = dx.as_mut() {
                    axpy(&mut dx[t * in_dim..(t + 1) * in_dim], d, &wv[r * in_dim..(r + 1) * in_dim]);
                }
                axpy(&mut dh_next, d, &uv[r * h..(r + 1) * h]);
            }
            if let Some(db) = db.as_mut() {
                axpy(db, one, &dz);
            }
        }

        for (var, local) in [(rec.x, dx), (rec.w, dw), (rec.u, du), (rec.b, db)] {
            if let (Some(local), Some(slot)) = (local, self.slot(grads, var)) {
                axpy(slot, one, &local);
            }
        }
    }
}

fn check_len(len: usize, rows: usize, cols: usize) -> Result<()> {
    if len != rows * cols {
        return Err(Error::Shape(format!("{len} values cannot form a {rows}x{cols} matrix")));
    }
    Ok(())
}

pub(crate) fn softmax_row<F: Scalar>(z: &[F]) -> Vec<F> {
    let m = z.iter().fold(F::neg_infinity(), |a, b| a.max(*b));
    let e: Vec<F> = z.iter().map(|v| (*v - m).exp()).collect();
    let s = e.iter().fold(F::zero(), |a, b| a + *b);
    e.into_iter().map(|v| v / s).collect()
}

/// Result of [`Tape::backward`]: gradients of leaves that take gradients.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    params: Vec<(usize, usize)>,
}

impl<F: Scalar> Gradients<F> {
    /// Gradient of a leaf; `None` if nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient reported for parameter `id`, summed over every leaf
    /// registered under it.
    pub fn param(&self, id: usize) -> Option<Vec<F>> {
        let mut out: Option<Vec<F>> = None;
        for &(pid, node) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match out.as_mut() {
                    Some(o) => axpy(o, F::one(), g),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }
}
