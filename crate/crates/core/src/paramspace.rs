//! The classifier and its flat parameter space.
//!
//! The network is fixed: `logits = W2 · tanh(W1 · x + b1) + b2`, followed by a
//! softmax over `num_classes` outputs. All parameters live in one flat vector
//! with the layout
//!
//! ```text
//! [ W1 (hidden × input, row-major) | b1 | W2 (classes × hidden, row-major) | b2 ]
//! ```
//!
//! Gradients of any scalar loss are returned in the same layout, so the
//! multi-objective machinery only ever sees plain `&[f64]` vectors.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of the two-layer classifier plus the seed used to initialize it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            input_dim,
            hidden_dim,
            num_classes,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("input_dim and hidden_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    /// Number of trainable parameters `d`.
    pub fn num_params(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.num_classes
            + self.num_classes
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = w1 + self.input_dim * self.hidden_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.hidden_dim * self.num_classes;
        [w1, b1, w2, b2]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim("matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

/// Flattened trainable parameters of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    config: ModelConfig,
    values: Vec<f64>,
}

/// The four parameter blocks of the network, each in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamVector {
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.num_params() {
            return Err(Error::dim("parameter vector", config.num_params(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("parameter vector contains non-finite entries".into()));
        }
        Ok(Self { config, values })
    }

    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            values: vec![0.0; config.num_params()],
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn unflatten(&self) -> NetworkWeights {
        let [w1, b1, w2, b2] = self.config.offsets();
        NetworkWeights {
            w1: self.values[w1..b1].to_vec(),
            b1: self.values[b1..w2].to_vec(),
            w2: self.values[w2..b2].to_vec(),
            b2: self.values[b2..].to_vec(),
        }
    }

    pub fn flatten(config: ModelConfig, weights: &NetworkWeights) -> Result<Self> {
        let mut values = Vec::with_capacity(config.num_params());
        values.extend_from_slice(&weights.w1);
        values.extend_from_slice(&weights.b1);
        values.extend_from_slice(&weights.w2);
        values.extend_from_slice(&weights.b2);
        Self::from_values(config, values)
    }

    fn blocks(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let [w1, b1, w2, b2] = self.config.offsets();
        (
            &self.values[w1..b1],
            &self.values[b1..w2],
            &self.values[w2..b2],
            &self.values[b2..],
        )
    }
}

/// Glorot-uniform weights, zero biases. Deterministic in `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamVector> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = Vec::with_capacity(cfg.num_params());
    for (fan_in, fan_out) in [
        (cfg.input_dim, cfg.hidden_dim),
        (cfg.hidden_dim, cfg.num_classes),
    ] {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new(-limit, limit).expect("finite positive limit");
        values.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::from_values(*cfg, values)
}

/// Logits and softmax probabilities for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub logits: Matrix,
    pub probs: Matrix,
}

/// A forward pass plus the hidden activations needed to differentiate it.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: BatchOutput,
    hidden: Matrix,
}

fn check_features(p: &ParamVector, x: &Matrix) -> Result<()> {
    if x.cols() != p.config.input_dim {
        return Err(Error::dim("feature columns", p.config.input_dim, x.cols()));
    }
    Ok(())
}

/// Writes the softmax of `logits` into `probs`.
pub(crate) fn softmax_into(logits: &[f64], probs: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

pub fn forward_pass(p: &ParamVector, x: &Matrix) -> Result<ForwardPass> {
    check_features(p, x)?;
    let cfg = &p.config;
    let (w1, b1, w2, b2) = p.blocks();
    let n = x.rows();
    let mut hidden = Matrix::zeros(n, cfg.hidden_dim);
    let mut logits = Matrix::zeros(n, cfg.num_classes);
    let mut probs = Matrix::zeros(n, cfg.num_classes);
    for r in 0..n {
        let xr = x.row(r);
        let h = hidden.row_mut(r);
        for (j, hj) in h.iter_mut().enumerate() {
            let w = &w1[j * cfg.input_dim..(j + 1) * cfg.input_dim];
            let mut acc = b1[j];
            for (wi, xi) in w.iter().zip(xr) {
                acc += wi * xi;
            }
            *hj = acc.tanh();
        }
        let h = hidden.row(r);
        let z = logits.row_mut(r);
        for (k, zk) in z.iter_mut().enumerate() {
            let w = &w2[k * cfg.hidden_dim..(k + 1) * cfg.hidden_dim];
            let mut acc = b2[k];
            for (wj, hj) in w.iter().zip(h) {
                acc += wj * hj;
            }
            *zk = acc;
        }
        softmax_into(logits.row(r), probs.row_mut(r));
    }
    Ok(ForwardPass {
        output: BatchOutput { logits, probs },
        hidden,
    })
}

pub fn forward(p: &ParamVector, x: &Matrix) -> Result<BatchOutput> {
    forward_pass(p, x).map(|f| f.output)
}

/// Gradient of a scalar loss given its gradient with respect to the logits.
pub fn backward_logits(p: &ParamVector, x: &Matrix, upstream: &Matrix) -> Result<Vec<f64>> {
    let pass = forward_pass(p, x)?;
    backward_from_pass(p, x, &pass, upstream)
}

/// Gradient of a scalar loss given its gradient with respect to the probabilities.
pub fn backward_probs(p: &ParamVector, x: &Matrix, upstream: &Matrix) -> Result<Vec<f64>> {
    let pass = forward_pass(p, x)?;
    let dlogits = probs_to_logits_grad(&pass.output.probs, upstream)?;
    backward_from_pass(p, x, &pass, &dlogits)
}

/// Pulls a probability-space gradient back through the softmax Jacobian.
pub fn probs_to_logits_grad(probs: &Matrix, dprobs: &Matrix) -> Result<Matrix> {
    if probs.rows() != dprobs.rows() || probs.cols() != dprobs.cols() {
        return Err(Error::dim(
            "upstream gradient",
            probs.rows() * probs.cols(),
            dprobs.rows() * dprobs.cols(),
        ));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let pr = probs.row(r);
        let gr = dprobs.row(r);
        let dot: f64 = pr.iter().zip(gr).map(|(p, g)| p * g).sum();
        for ((o, p), g) in out.row_mut(r).iter_mut().zip(pr).zip(gr) {
            *o = p * (g - dot);
        }
    }
    Ok(out)
}

pub fn backward_from_pass(
    p: &ParamVector,
    x: &Matrix,
    pass: &ForwardPass,
    dlogits: &Matrix,
) -> Result<Vec<f64>> {
    let cfg = &p.config;
    if dlogits.rows() != x.rows() || dlogits.cols() != cfg.num_classes {
        return Err(Error::dim(
            "upstream gradient",
            x.rows() * cfg.num_classes,
            dlogits.rows() * dlogits.cols(),
        ));
    }
    let (_, _, w2, _) = p.blocks();
    let [o_w1, o_b1, o_w2, o_b2] = cfg.offsets();
    let mut grad = vec![0.0; cfg.num_params()];
    let mut dh = vec![0.0; cfg.hidden_dim];
    for r in 0..x.rows() {
        let xr = x.row(r);
        let h = pass.hidden.row(r);
        let dz = dlogits.row(r);
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (k, &dzk) in dz.iter().enumerate() {
            let gw = &mut grad[o_w2 + k * cfg.hidden_dim..o_w2 + (k + 1) * cfg.hidden_dim];
            for (g, hj) in gw.iter_mut().zip(h) {
                *g += dzk * hj;
            }
            grad[o_b2 + k] += dzk;
            let w = &w2[k * cfg.hidden_dim..(k + 1) * cfg.hidden_dim];
            for (d, wj) in dh.iter_mut().zip(w) {
                *d += wj * dzk;
            }
        }
        for (j, (&dhj, &hj)) in dh.iter().zip(h).enumerate() {
            let dz1 = dhj * (1.0 - hj * hj);
            let gw = &mut grad[o_w1 + j * cfg.input_dim..o_w1 + (j + 1) * cfg.input_dim];
            for (g, xi) in gw.iter_mut().zip(xr) {
                *g += dz1 * xi;
            }
            grad[o_b1 + j] += dz1;
        }
    }
    Ok(grad)
}

/// Argmax class per row, lowest index on ties.
pub fn predict(p: &ParamVector, x: &Matrix) -> Result<Vec<usize>> {
    let out = forward(p, x)?;
    Ok(out.probs.iter_rows().map(argmax).collect())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
