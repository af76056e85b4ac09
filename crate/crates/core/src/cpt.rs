//! The training engine.
//!
//! Every step computes the batch fairness and classification losses and their
//! gradients, then moves the parameters along a direction chosen by the
//! configured [`Method`]:
//!
//! - `cpt`: exponential moving averages of both gradients and losses. While the
//!   KL constraint between the smoothed loss vector and the reference exceeds
//!   `psi`, descend the single objective that is too large (correction stage).
//!   Otherwise also average the KL gradient, prune all three averages to the
//!   high-magnitude parameters and descend along their min-norm combination
//!   (MOO stage).
//! - `cpt_no_ga`: the same with every moving-average weight forced to zero.
//! - `cpt_no_prune`: the same with an all-ones mask.
//! - `mgda`: min-norm combination of the two raw batch gradients.
//! - `scalarization`: a fixed weighted sum of the two raw batch gradients.
//!
//! The update is SGD with heavy-ball momentum on the chosen direction; in the
//! MOO stage masked-out coordinates keep both their value and a zero momentum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{batches, GroupedDataset};
use crate::moosolver::{self, combine, dot, GradientBundle};
use crate::objectives::{batch_objectives, grad_kl, kl_constraint, GroupedBatch, LossVector, ReferenceVector};
use crate::paramspace::{init_params, ModelConfig, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cpt,
    CptNoGa,
    CptNoPrune,
    Mgda,
    Scalarization,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Cpt,
        Method::CptNoGa,
        Method::CptNoPrune,
        Method::Mgda,
        Method::Scalarization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cpt => "cpt",
            Method::CptNoGa => "cpt_no_ga",
            Method::CptNoPrune => "cpt_no_prune",
            Method::Mgda => "mgda",
            Method::Scalarization => "scalarization",
        }
    }

    fn is_two_stage(self) -> bool {
        matches!(self, Method::Cpt | Method::CptNoGa | Method::CptNoPrune)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
            })
    }
}

/// How the pruning threshold is derived from `‖θ‖₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneThreshold {
    /// `γ · ‖θ‖₁ / d`
    #[default]
    Mean,
    /// `γ · ‖θ‖₁`
    L1,
}

impl FromStr for PruneThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "l1" => Ok(Self::L1),
            other => Err(Error::Config(format!(
                "unknown prune threshold mode `{other}`; valid: mean, l1"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Betas {
    pub fair: f64,
    pub acc: f64,
    pub kl: f64,
}

impl Default for Betas {
    fn default() -> Self {
        Self {
            fair: 0.85,
            acc: 0.80,
            kl: 0.80,
        }
    }
}

impl Betas {
    pub const ZERO: Betas = Betas {
        fair: 0.0,
        acc: 0.0,
        kl: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub reference: ReferenceVector,
    pub psi: f64,
    pub gamma: f64,
    pub prune_threshold: PruneThreshold,
    pub betas: Betas,
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub method: Method,
    /// Weight on the fairness loss for scalarization. When absent it is
    /// derived from the reference as `v_acc / (v_fair + v_acc)`.
    pub scalar_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reference: ReferenceVector {
                v_fair: 1.0,
                v_acc: 1.0,
            },
            psi: 0.002,
            gamma: 0.5,
            prune_threshold: PruneThreshold::Mean,
            betas: Betas::default(),
            lr: 0.01,
            lr_decay: 0.8,
            momentum: 0.9,
            epochs: 40,
            batch_size: 128,
            hidden_dim: 16,
            seed: 0,
            method: Method::Cpt,
            scalar_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reference.validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.psi > 0.0) {
            return bad("psi must be > 0");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be >= 0");
        }
        for b in [self.betas.fair, self.betas.acc, self.betas.kl] {
            if !(0.0..1.0).contains(&b) {
                return bad("moving-average weights must lie in [0, 1)");
            }
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_dim == 0 {
            return bad("epochs, batch_size and hidden_dim must be >= 1");
        }
        if let Some(w) = self.scalar_weight {
            if !(0.0..=1.0).contains(&w) {
                return bad("scalar_weight must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Moving-average weights actually used by the method.
    pub fn effective_betas(&self) -> Betas {
        match self.method {
            Method::CptNoGa => Betas::ZERO,
            _ => self.betas,
        }
    }

    pub fn fairness_weight(&self) -> f64 {
        self.scalar_weight
            .unwrap_or_else(|| self.reference.v_acc / (self.reference.v_fair + self.reference.v_acc))
    }
}

/// `β · state + (1 − β) · grad`, no bias correction.
pub fn ema_update(state: &[f64], grad: &[f64], beta: f64) -> Result<Vec<f64>> {
    if state.len() != grad.len() {
        return Err(Error::dim("moving average", state.len(), grad.len()));
    }
    Ok(state
        .iter()
        .zip(grad)
        .map(|(s, g)| beta * s + (1.0 - beta) * g)
        .collect())
}

fn ema_in_place(state: &mut [f64], grad: &[f64], beta: f64) {
    for (s, g) in state.iter_mut().zip(grad) {
        *s = beta * *s + (1.0 - beta) * g;
    }
}

/// Binary mask over parameters; `false` marks a pruned coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn ones(d: usize) -> Self {
        Self { bits: vec![true; d] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Fraction of kept coordinates.
    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }
}

/// Zeroes every coordinate with `|θ_i| ≤ threshold`.
pub fn make_mask(params: &[f64], gamma: f64, mode: PruneThreshold) -> PruneMask {
    let l1: f64 = params.iter().map(|v| v.abs()).sum();
    let threshold = match mode {
        PruneThreshold::Mean if params.is_empty() => 0.0,
        PruneThreshold::Mean => gamma * l1 / params.len() as f64,
        PruneThreshold::L1 => gamma * l1,
    };
    PruneMask {
        bits: params.iter().map(|v| v.abs() > threshold).collect(),
    }
}

pub fn prune(grad: &[f64], mask: &PruneMask) -> Result<Vec<f64>> {
    if grad.len() != mask.len() {
        return Err(Error::dim("prune mask", grad.len(), mask.len()));
    }
    Ok(grad
        .iter()
        .zip(&mask.bits)
        .map(|(&g, &keep)| if keep { g } else { 0.0 })
        .collect())
}

/// Moving averages carried across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub g_fair: Vec<f64>,
    pub g_acc: Vec<f64>,
    pub g_kl: Vec<f64>,
    pub betas: Betas,
    /// Smoothed `(l_fair, l_acc)`; `None` until the first batch is seen.
    pub losses: Option<LossVector>,
}

impl EmaState {
    pub fn new(d: usize, betas: Betas) -> Self {
        Self {
            g_fair: vec![0.0; d],
            g_acc: vec![0.0; d],
            g_kl: vec![0.0; d],
            betas,
            losses: None,
        }
    }

    /// Seeds the smoothed losses with the first observation, then averages.
    fn observe_losses(&mut self, raw: LossVector) -> LossVector {
        let next = match self.losses {
            None => raw,
            Some(prev) => LossVector::new(
                self.betas.fair * prev.l_fair + (1.0 - self.betas.fair) * raw.l_fair,
                self.betas.acc * prev.l_acc + (1.0 - self.betas.acc) * raw.l_acc,
            ),
        };
        self.losses = Some(next);
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Correction,
    Moo,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Correction => "correction",
            Stage::Moo => "moo",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correction" => Ok(Stage::Correction),
            "moo" => Ok(Stage::Moo),
            other => Err(Error::Schema(format!("unknown stage `{other}`"))),
        }
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    /// Raw batch losses.
    pub l_fair: f64,
    pub l_acc: f64,
    /// KL constraint at the smoothed losses.
    pub psi: f64,
    /// Combination weights (fair, acc[, kl]); absent in the correction stage.
    pub alpha: Option<Vec<f64>>,
    pub mask_density: f64,
    pub lr: f64,
    /// `min_i gᵀG̃_i` over the combined gradients, when a combination was formed.
    #[serde(skip)]
    pub min_inner: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn stage_transitions(&self) -> usize {
        self.records
            .windows(2)
            .filter(|w| w[0].stage != w[1].stage)
            .count()
    }
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    params: ParamVector,
    state: EmaState,
    velocity: Vec<f64>,
    lr: f64,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, params: ParamVector) -> Result<Self> {
        cfg.validate()?;
        let d = params.len();
        Ok(Self {
            state: EmaState::new(d, cfg.effective_betas()),
            velocity: vec![0.0; d],
            lr: cfg.lr,
            step: 0,
            cfg,
            params,
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn state(&self) -> &EmaState {
        &self.state
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decay_lr(&mut self) {
        self.lr *= self.cfg.lr_decay;
    }

    fn numerical(&self, what: &str) -> Error {
        Error::Numerical {
            step: self.step,
            what: what.to_string(),
        }
    }

    /// One update on `batch`.
    pub fn step(&mut self, batch: &GroupedBatch) -> Result<StepRecord> {
        let method = self.cfg.method;
        let d = self.params.len();
        let mask = match method {
            Method::Cpt | Method::CptNoGa => {
                make_mask(self.params.as_slice(), self.cfg.gamma, self.cfg.prune_threshold)
            }
            _ => PruneMask::ones(d),
        };

        let obj = batch_objectives(&self.params, batch)?;
        let raw = obj.losses;
        if !raw.l_fair.is_finite() || !raw.l_acc.is_finite() {
            return Err(self.numerical("batch loss"));
        }
        if obj.g_fair.iter().chain(&obj.g_acc).any(|v| !v.is_finite()) {
            return Err(self.numerical("batch gradient"));
        }

        let smoothed = self.state.observe_losses(raw);
        let reference = self.cfg.reference;
        let psi = kl_constraint(smoothed, reference);

        let (stage, direction, alpha, min_inner) = match method {
            Method::Scalarization => {
                let w = self.cfg.fairness_weight();
                let grads = [obj.g_fair, obj.g_acc];
                let g = combine(&grads, &[w, 1.0 - w])?;
                (Stage::Moo, g, Some(vec![w, 1.0 - w]), None)
            }
            Method::Mgda => {
                let bundle = GradientBundle::new(vec![obj.g_fair, obj.g_acc])?;
                let alpha = moosolver::min_norm_default(&bundle)?;
                let g = moosolver::common_descent(&bundle, &alpha)?;
                let inner = min_inner(&g, bundle.grads());
                (Stage::Moo, g, Some(alpha.into_vec()), Some(inner))
            }
            _ => {
                let betas = self.state.betas;
                ema_in_place(&mut self.state.g_fair, &obj.g_fair, betas.fair);
                ema_in_place(&mut self.state.g_acc, &obj.g_acc, betas.acc);
                if psi > self.cfg.psi {
                    let fair_too_large =
                        smoothed.l_fair * reference.v_acc > reference.v_fair * smoothed.l_acc;
                    let g = if fair_too_large {
                        self.state.g_fair.clone()
                    } else {
                        self.state.g_acc.clone()
                    };
                    (Stage::Correction, g, None, None)
                } else {
                    let g_kl = grad_kl(smoothed, reference, &obj.g_fair, &obj.g_acc)?;
                    ema_in_place(&mut self.state.g_kl, &g_kl, betas.kl);
                    let pruned = vec![
                        prune(&self.state.g_fair, &mask)?,
                        prune(&self.state.g_acc, &mask)?,
                        prune(&self.state.g_kl, &mask)?,
                    ];
                    let bundle = GradientBundle::new(pruned)?;
                    let alpha = moosolver::min_norm_default(&bundle)?;
                    let g = moosolver::common_descent(&bundle, &alpha)?;
                    let inner = min_inner(&g, bundle.grads());
                    (Stage::Moo, g, Some(alpha.into_vec()), Some(inner))
                }
            }
        };
        if direction.iter().any(|v| !v.is_finite()) {
            return Err(self.numerical("descent direction"));
        }

        let restrict = method.is_two_stage() && stage == Stage::Moo;
        let mu = self.cfg.momentum;
        for (i, (u, g)) in self.velocity.iter_mut().zip(&direction).enumerate() {
            if restrict && !mask.bits[i] {
                *u = 0.0;
                continue;
            }
            *u = mu * *u + g;
        }
        let lr = self.lr;
        for (p, u) in self.params.as_mut_slice().iter_mut().zip(&self.velocity) {
            *p -= lr * u;
        }
        if self.params.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(self.numerical("parameters"));
        }

        let record = StepRecord {
            step: self.step,
            stage,
            l_fair: raw.l_fair,
            l_acc: raw.l_acc,
            psi,
            alpha,
            mask_density: mask.density(),
            lr,
            min_inner,
        };
        self.step += 1;
        Ok(record)
    }
}

fn min_inner(g: &[f64], grads: &[Vec<f64>]) -> f64 {
    grads
        .iter()
        .map(|gi| dot(g, gi))
        .fold(f64::INFINITY, f64::min)
}

/// Seed for the shuffle of one epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Full training run: fresh initialization from `cfg.seed`, per-epoch seeded
/// shuffles, learning rate multiplied by `lr_decay` after every epoch.
pub fn train(dataset: &GroupedDataset, cfg: &TrainConfig) -> Result<(ParamVector, TrainTrace)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let model = ModelConfig::new(dataset.dim(), cfg.hidden_dim, dataset.num_classes(), cfg.seed)?;
    let mut trainer = Trainer::new(cfg.clone(), init_params(&model)?)?;
    let mut trace = TrainTrace::default();
    for epoch in 0..cfg.epochs {
        for batch in batches(dataset, cfg.batch_size, epoch_seed(cfg.seed, epoch)) {
            trace.records.push(trainer.step(&batch)?);
        }
        trainer.decay_lr();
    }
    Ok((trainer.into_params(), trace))
}
