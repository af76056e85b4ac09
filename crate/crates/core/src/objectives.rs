//! The three scalar objectives and their parameter gradients.
//!
//! - classification loss: mean cross-entropy of the true class;
//! - fairness loss: for every label `y` and every attribute value `a` present
//!   with that label, the L1 distance between the mean probability row of the
//!   `(a, y)` cell and the mean probability row of all rows labelled `y`;
//! - reference constraint: KL divergence between the normalized loss vector
//!   and the normalized reference vector.

use serde::{Deserialize, Serialize};

use crate::paramspace::{backward_from_pass, forward_pass, probs_to_logits_grad, Matrix, ParamVector};
use crate::{Error, Result};

/// Losses are clamped to this floor before the KL normalization.
pub const LOSS_FLOOR: f64 = 1e-8;

/// One mini-batch: features, labels and sensitive attributes, row aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedBatch {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub a: Vec<usize>,
}

impl GroupedBatch {
    pub fn new(x: Matrix, y: Vec<usize>, a: Vec<usize>) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::dim("batch labels", x.rows(), y.len()));
        }
        if a.len() != x.rows() {
            return Err(Error::dim("batch attributes", x.rows(), a.len()));
        }
        if x.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { x, y, a })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// `(l_fair, l_acc)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossVector {
    pub l_fair: f64,
    pub l_acc: f64,
}

impl LossVector {
    pub fn new(l_fair: f64, l_acc: f64) -> Self {
        Self { l_fair, l_acc }
    }

    fn clamped(self) -> (f64, f64) {
        (self.l_fair.max(LOSS_FLOOR), self.l_acc.max(LOSS_FLOOR))
    }
}

/// The user preference `(v_fair, v_acc)`: the desired ratio of the two losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceVector {
    pub v_fair: f64,
    pub v_acc: f64,
}

impl ReferenceVector {
    pub fn new(v_fair: f64, v_acc: f64) -> Result<Self> {
        let v = Self { v_fair, v_acc };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_fair > 0.0 && self.v_acc > 0.0 && self.v_fair.is_finite() && self.v_acc.is_finite()) {
            return Err(Error::Config(format!(
                "reference vector entries must be positive, got ({}, {})",
                self.v_fair, self.v_acc
            )));
        }
        Ok(())
    }

    /// `v_fair / (v_fair + v_acc)`.
    pub fn fair_share(&self) -> f64 {
        self.v_fair / (self.v_fair + self.v_acc)
    }
}

impl std::fmt::Display for ReferenceVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.v_fair, self.v_acc)
    }
}

fn check_labels(probs: &Matrix, y: &[usize]) -> Result<()> {
    if probs.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if y.len() != probs.rows() {
        return Err(Error::dim("labels", probs.rows(), y.len()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= probs.cols()) {
        return Err(Error::Schema(format!(
            "label {bad} out of range for {} classes",
            probs.cols()
        )));
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn loss_acc(probs: &Matrix, y: &[usize]) -> Result<f64> {
    check_labels(probs, y)?;
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(r, &label)| -probs.row(r)[label].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / y.len() as f64)
}

fn acc_logit_grad(probs: &Matrix, y: &[usize]) -> Matrix {
    let n = y.len() as f64;
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    for (r, &label) in y.iter().enumerate() {
        for (o, p) in g.row_mut(r).iter_mut().zip(probs.row(r)) {
            *o = p / n;
        }
        g.row_mut(r)[label] -= 1.0 / n;
    }
    g
}

/// Per-cell and per-label sums of probability rows.
struct CellStats {
    classes: usize,
    labels: usize,
    label_count: Vec<usize>,
    label_sum: Vec<f64>,
    cell_count: Vec<usize>,
    cell_sum: Vec<f64>,
}

impl CellStats {
    fn collect(probs: &Matrix, y: &[usize], a: &[usize]) -> Self {
        let classes = probs.cols();
        let labels = classes;
        let attrs = a.iter().copied().max().map_or(0, |m| m + 1);
        let mut s = Self {
            classes,
            labels,
            label_count: vec![0; labels],
            label_sum: vec![0.0; labels * classes],
            cell_count: vec![0; attrs * labels],
            cell_sum: vec![0.0; attrs * labels * classes],
        };
        for (r, (&yl, &al)) in y.iter().zip(a).enumerate() {
            let cell = al * labels + yl;
            s.label_count[yl] += 1;
            s.cell_count[cell] += 1;
            for (k, &p) in probs.row(r).iter().enumerate() {
                s.label_sum[yl * classes + k] += p;
                s.cell_sum[cell * classes + k] += p;
            }
        }
        s
    }

    fn attrs(&self) -> usize {
        self.cell_count.len() / self.labels
    }

    /// `mean(a, y)[k] - mean(y)[k]` for a present cell.
    fn gap(&self, attr: usize, label: usize, k: usize) -> f64 {
        let cell = attr * self.labels + label;
        self.cell_sum[cell * self.classes + k] / self.cell_count[cell] as f64
            - self.label_sum[label * self.classes + k] / self.label_count[label] as f64
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Differentiable equalized-odds gap summed over present `(attribute, label)` cells.
pub fn loss_fair(probs: &Matrix, y: &[usize], a: &[usize]) -> Result<f64> {
    check_labels(probs, y)?;
    if a.len() != y.len() {
        return Err(Error::dim("attributes", y.len(), a.len()));
    }
    let s = CellStats::collect(probs, y, a);
    let mut total = 0.0;
    for label in 0..s.labels {
        if s.label_count[label] == 0 {
            continue;
        }
        for attr in 0..s.attrs() {
            if s.cell_count[attr * s.labels + label] == 0 {
                continue;
            }
            for k in 0..s.classes {
                total += s.gap(attr, label, k).abs();
            }
        }
    }
    Ok(total)
}

/// Gradient of [`loss_fair`] with respect to the probability matrix.
/// Exact-zero gaps get subgradient 0.
pub fn fair_prob_grad(probs: &Matrix, y: &[usize], a: &[usize]) -> Result<Matrix> {
    check_labels(probs, y)?;
    if a.len() != y.len() {
        return Err(Error::dim("attributes", y.len(), a.len()));
    }
    let s = CellStats::collect(probs, y, a);
    let c = s.classes;
    let mut signs = vec![0.0; s.cell_count.len() * c];
    let mut label_sign_sum = vec![0.0; s.labels * c];
    for label in 0..s.labels {
        if s.label_count[label] == 0 {
            continue;
        }
        for attr in 0..s.attrs() {
            let cell = attr * s.labels + label;
            if s.cell_count[cell] == 0 {
                continue;
            }
            for k in 0..c {
                let sg = sign(s.gap(attr, label, k));
                signs[cell * c + k] = sg;
                label_sign_sum[label * c + k] += sg;
            }
        }
    }
    let mut g = Matrix::zeros(probs.rows(), c);
    for (r, (&yl, &al)) in y.iter().zip(a).enumerate() {
        let cell = al * s.labels + yl;
        let nc = s.cell_count[cell] as f64;
        let ny = s.label_count[yl] as f64;
        for (k, o) in g.row_mut(r).iter_mut().enumerate() {
            *o = signs[cell * c + k] / nc - label_sign_sum[yl * c + k] / ny;
        }
    }
    Ok(g)
}

/// `D_KL(l / |l|_1 || v / |v|_1)` in nats, losses floored at [`LOSS_FLOOR`].
pub fn kl_constraint(l: LossVector, v: ReferenceVector) -> f64 {
    let (lf, la) = l.clamped();
    let s = lf + la;
    let (p_f, p_a) = (lf / s, la / s);
    let vs = v.v_fair + v.v_acc;
    let (q_f, q_a) = (v.v_fair / vs, v.v_acc / vs);
    (p_f * (p_f / q_f).ln() + p_a * (p_a / q_a).ln()).max(0.0)
}

/// Partial derivatives of [`kl_constraint`] with respect to `(l_fair, l_acc)`.
pub fn kl_coefficients(l: LossVector, v: ReferenceVector) -> (f64, f64) {
    let (lf, la) = l.clamped();
    let s = lf + la;
    let p = lf / s;
    let q = v.fair_share();
    let log_ratio = (p * (1.0 - q) / (q * (1.0 - p))).ln();
    ((1.0 - p) * log_ratio / s, -p * log_ratio / s)
}

/// Chain rule through the KL constraint: `c_fair * g_fair + c_acc * g_acc`.
pub fn grad_kl(l: LossVector, v: ReferenceVector, g_fair: &[f64], g_acc: &[f64]) -> Result<Vec<f64>> {
    if g_fair.len() != g_acc.len() {
        return Err(Error::dim("kl gradient inputs", g_fair.len(), g_acc.len()));
    }
    let (cf, ca) = kl_coefficients(l, v);
    Ok(g_fair
        .iter()
        .zip(g_acc)
        .map(|(f, a)| cf * f + ca * a)
        .collect())
}

/// Both batch losses and their gradients from a single forward pass.
#[derive(Debug, Clone)]
pub struct BatchObjectives {
    pub losses: LossVector,
    pub g_fair: Vec<f64>,
    pub g_acc: Vec<f64>,
}

pub fn batch_objectives(p: &ParamVector, batch: &GroupedBatch) -> Result<BatchObjectives> {
    let pass = forward_pass(p, &batch.x)?;
    let probs = &pass.output.probs;
    let l_acc = loss_acc(probs, &batch.y)?;
    let l_fair = loss_fair(probs, &batch.y, &batch.a)?;
    let g_acc = backward_from_pass(p, &batch.x, &pass, &acc_logit_grad(probs, &batch.y))?;
    let dfair = probs_to_logits_grad(probs, &fair_prob_grad(probs, &batch.y, &batch.a)?)?;
    let g_fair = backward_from_pass(p, &batch.x, &pass, &dfair)?;
    Ok(BatchObjectives {
        losses: LossVector::new(l_fair, l_acc),
        g_fair,
        g_acc,
    })
}

pub fn grad_acc(p: &ParamVector, batch: &GroupedBatch) -> Result<Vec<f64>> {
    let pass = forward_pass(p, &batch.x)?;
    check_labels(&pass.output.probs, &batch.y)?;
    backward_from_pass(p, &batch.x, &pass, &acc_logit_grad(&pass.output.probs, &batch.y))
}

pub fn grad_fair(p: &ParamVector, batch: &GroupedBatch) -> Result<Vec<f64>> {
    let pass = forward_pass(p, &batch.x)?;
    let probs = &pass.output.probs;
    let dfair = probs_to_logits_grad(probs, &fair_prob_grad(probs, &batch.y, &batch.a)?)?;
    backward_from_pass(p, &batch.x, &pass, &dfair)
}
