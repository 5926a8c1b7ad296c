//! Dense linear algebra and the neural building blocks used by every
//! trainable component: a row-major [`Matrix`], numerically stable
//! softmax, a small fully-connected [`Mlp`] with exact backpropagation,
//! the pairwise hinge ranking loss, inverted dropout, plain SGD and a
//! central-difference gradient checker.
//!
//! Everything is `f64`. Training is reproducible from a seed: all
//! randomness flows through caller-supplied RNGs.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self x`. Panics on a length mismatch; use [`Matrix::try_matvec`]
    /// at API boundaries.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec: input length");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    pub fn try_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.matvec(x))
    }

    /// `selfᵀ x`, i.e. the row vector `xᵀ self`.
    pub fn tmatvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tmatvec: input length");
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += xr * m;
            }
        }
        out
    }

    /// `uᵀ self v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        assert_eq!(u.len(), self.rows, "bilinear: left length");
        assert_eq!(v.len(), self.cols, "bilinear: right length");
        u.iter()
            .enumerate()
            .map(|(r, &ur)| {
                if ur == 0.0 {
                    0.0
                } else {
                    ur * dot(self.row(r), v)
                }
            })
            .sum()
    }

    /// `self += s · u vᵀ`.
    pub fn add_outer(&mut self, s: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let f = s * ur;
            if f == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (m, &vc) in row.iter_mut().zip(v) {
                *m += f * vc;
            }
        }
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} += {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax. An empty input yields an empty output.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(scores)` against the class `target`.
/// Returns the loss and its gradient with respect to `scores`.
pub fn softmax_cross_entropy(scores: &[f64], target: usize) -> (f64, Vec<f64>) {
    let mut p = softmax(scores);
    let loss = -p[target].max(f64::MIN_POSITIVE).ln();
    p[target] -= 1.0;
    (loss, p)
}

/// Natural-log entropy; zero-probability terms contribute 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HingeRank {
    pub loss: f64,
    /// d loss / d s_true
    pub d_true: f64,
    /// d loss / d s_false
    pub d_false: f64,
}

/// `max(0, delta − s_true + s_false)`. At the hinge itself the
/// subgradient is taken as 0.
pub fn hinge_rank_loss(s_true: f64, s_false: f64, delta: f64) -> HingeRank {
    debug_assert!(delta >= 0.0);
    let margin = delta - s_true + s_false;
    if margin > 0.0 {
        HingeRank {
            loss: margin,
            d_true: -1.0,
            d_false: 1.0,
        }
    } else {
        HingeRank {
            loss: 0.0,
            d_true: 0.0,
            d_false: 0.0,
        }
    }
}

/// Inverted dropout mask: each unit is dropped with probability `rate`
/// and survivors are scaled by `1 / (1 − rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// out × in
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Fully connected network. Gradients are returned as an `Mlp` of the
/// same shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    /// Input to each layer (after the previous layer's dropout).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    /// Dropout mask applied to each layer's output, if any.
    masks: Vec<Option<Vec<f64>>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`; `activations` has one entry per layer.
    pub fn new<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layer sizes with {} activations",
                sizes.len(),
                activations.len()
            )));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Dense {
                weight: Matrix::xavier(w[1], w[0], rng),
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.bias.len()).unwrap_or(0)
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.rows() != pair[1].weight.cols() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values, layer {} expects {}",
                    pair[0].weight.rows(),
                    i + 1,
                    pair[1].weight.cols()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weight.rows() {
                return Err(Error::Shape("bias length".into()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut z = l.weight.matvec(&h);
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi = l.activation.apply(*zi + b);
            }
            h = z;
        }
        h
    }

    pub fn try_forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.forward(x))
    }

    /// Forward pass that records what backprop needs. With `dropout`,
    /// hidden-layer outputs are masked (never the final layer).
    pub fn forward_trace(
        &self,
        x: &[f64],
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> MlpTrace {
        let n = self.layers.len();
        let mut trace = MlpTrace {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            output: Vec::new(),
        };
        let mut h = x.to_vec();
        for (li, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matvec(&h);
            for (zi, b) in z.iter_mut().zip(&l.bias) {
                *zi += b;
            }
            let a: Vec<f64> = z.iter().map(|&zi| l.activation.apply(zi)).collect();
            let mask = match (&mut dropout, li + 1 < n) {
                (Some((rate, rng)), true) if *rate > 0.0 => {
                    Some(dropout_mask(a.len(), *rate, *rng))
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => a.iter().zip(m).map(|(v, k)| v * k).collect(),
                None => a.clone(),
            };
            trace.inputs.push(h);
            trace.pre.push(z);
            trace.post.push(a);
            trace.masks.push(mask);
            h = next;
        }
        trace.output = h;
        trace
    }

    /// Backpropagates `d_output` (gradient of a scalar loss with respect
    /// to the network output) through a recorded pass. Gradients are
    /// accumulated into `grads`; the gradient w.r.t. the input is returned.
    pub fn backward(&self, trace: &MlpTrace, d_output: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let mut delta = d_output.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            if let Some(m) = &trace.masks[li] {
                for (d, k) in delta.iter_mut().zip(m) {
                    *d *= k;
                }
            }
            for ((d, &z), &a) in delta.iter_mut().zip(&trace.pre[li]).zip(&trace.post[li]) {
                *d *= l.activation.derivative(z, a);
            }
            let g = &mut grads.layers[li];
            g.weight.add_outer(1.0, &delta, &trace.inputs[li]);
            for (gb, d) in g.bias.iter_mut().zip(&delta) {
                *gb += d;
            }
            delta = l.weight.tmatvec(&delta);
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.data().len();
            l.weight.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// SGD update using gradients of the same shape.
    pub fn sgd_update(&mut self, grads: &Mlp, lr: f64) -> Result<()> {
        if self.layers.len() != grads.layers.len() {
            return Err(Error::Shape("layer count".into()));
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.axpy(-lr, &g.weight)?;
            sgd_step(&mut l.bias, &g.bias, lr)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
    pub total: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Coordinates beyond this many are sampled instead of checked exhaustively.
pub const GRAD_CHECK_EXHAUSTIVE_LIMIT: usize = 10_000;
const GRAD_CHECK_SAMPLE: usize = 2_000;
/// Denominator floor for the relative error, so that components that are
/// numerically zero are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compares `analytic` against central differences of `loss` at `params`.
///
/// Relative error per coordinate is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`.
pub fn grad_check<F>(
    mut loss: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "grad_check: gradient length");
    let total = params.len();
    let coords: Vec<usize> = if total > GRAD_CHECK_EXHAUSTIVE_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(total as u64);
        let mut idx = sample(&mut rng, total, GRAD_CHECK_SAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..total).collect()
    };
    let mut p = params.to_vec();
    let mut worst = (0.0f64, 0usize);
    for &i in &coords {
        let orig = p[i];
        p[i] = orig + step;
        let up = loss(&p);
        p[i] = orig - step;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > worst.0 || rel.is_nan() {
            worst = (if rel.is_nan() { f64::INFINITY } else { rel }, i);
        }
    }
    GradCheckReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: coords.len(),
        total,
        tolerance,
    }
}
