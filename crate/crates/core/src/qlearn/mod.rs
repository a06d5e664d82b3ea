//! Sample-based Q-learning with the lagged (TN) and regularized (FR) losses.

mod approx;
mod replay;

pub use approx::{param_count, ApproxKind, QApproximator, StateEncoding, DEFAULT_HIDDEN};
pub use replay::{ReplayBuffer, Transition};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_fa::polyak_update;
use crate::mdp::argmax;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Tn,
    Fr,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Tn => "tn",
            LossKind::Fr => "fr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM_DEFAULT: OptimizerKind = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub kappa: f64,
    /// Periodic copy `θ̄ ← θ` every `T` steps. Exclusive with `polyak_tau`.
    pub target_period: Option<u64>,
    pub polyak_tau: Option<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub gamma: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.target_period, self.polyak_tau) {
            (Some(0), None) => return Err(Error::invalid("target_period must be at least 1")),
            (Some(_), None) => {}
            (None, Some(tau)) if (0.0..=1.0).contains(&tau) => {}
            (None, Some(tau)) => return Err(Error::invalid(format!("polyak_tau {tau} outside [0, 1]"))),
            _ => return Err(Error::invalid("exactly one of target_period and polyak_tau must be set")),
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be finite and nonnegative, got {}", self.kappa)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

pub fn q_forward(q: &QApproximator, s: &StateEncoding) -> Result<Vec<f64>> {
    q.q_values(s)
}

/// `r + γ max_a' Q(s', a')` from `θ̄` (`use_lagging`) or `θ`; `r` at terminals.
pub fn td_target(q: &QApproximator, t: &Transition, gamma: f64, use_lagging: bool) -> Result<f64> {
    if t.terminal {
        return Ok(t.r);
    }
    let next = if use_lagging { q.lagging_q_values(&t.s_next)? } else { q.q_values(&t.s_next)? };
    Ok(t.r + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Bootstrap targets for a batch, computed once and held fixed.
pub fn batch_targets(q: &QApproximator, batch: &[Transition], cfg: &TrainConfig) -> Result<Vec<f64>> {
    let lagging = cfg.loss == LossKind::Tn;
    batch.iter().map(|t| td_target(q, t, cfg.gamma, lagging)).collect()
}

/// Loss under parameters `params` with the targets and `θ̄` held fixed.
pub fn loss_with_targets(q: &QApproximator, params: &[f64], batch: &[Transition], targets: &[f64], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let qa = q.forward_with(params, &t.s)?[t.a];
        total += 0.5 * (y - qa).powi(2);
        if cfg.loss == LossKind::Fr {
            total += 0.5 * cfg.kappa * (qa - q.lagging_q_values(&t.s)?[t.a]).powi(2);
        }
    }
    Ok(total / batch.len() as f64)
}

fn check_batch(q: &QApproximator, batch: &[Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(t) = batch.iter().find(|t| t.a >= q.n_actions || !t.r.is_finite()) {
        return Err(Error::invalid(format!("transition with action {} and reward {}", t.a, t.r)));
    }
    Ok(())
}

/// Loss and semi-gradient: nothing flows through the targets or `Q_θ̄`.
pub fn loss_and_grad(q: &QApproximator, batch: &[Transition], cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    let (loss, grad, _) = loss_grad_and_max_q(q, batch, cfg)?;
    Ok((loss, grad))
}

/// Also returns `max |Q_θ|` over the batch states.
fn loss_grad_and_max_q(q: &QApproximator, batch: &[Transition], cfg: &TrainConfig) -> Result<(f64, Vec<f64>, f64)> {
    check_batch(q, batch)?;
    let targets = batch_targets(q, batch, cfg)?;
    let m = batch.len() as f64;
    let mut grad = vec![0.0; q.theta.len()];
    let (mut loss, mut max_abs_q) = (0.0, 0.0f64);
    for (t, &y) in batch.iter().zip(&targets) {
        let (values, z) = q.forward_traced(&t.s)?;
        max_abs_q = values.iter().fold(max_abs_q, |acc, v| acc.max(v.abs()));
        let qa = values[t.a];
        let mut coef = -(y - qa);
        loss += 0.5 * (y - qa).powi(2);
        if cfg.loss == LossKind::Fr {
            let qbar = q.lagging_q_values(&t.s)?[t.a];
            coef += cfg.kappa * (qa - qbar);
            loss += 0.5 * cfg.kappa * (qa - qbar).powi(2);
        }
        q.backward(&t.s, t.a, coef / m, &z, &mut grad);
    }
    Ok((loss / m, grad, max_abs_q))
}

#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    fn apply(&mut self, kind: OptimizerKind, lr: f64, theta: &mut [f64], grad: &[f64]) {
        match kind {
            OptimizerKind::Sgd => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.m.len() != theta.len() {
                    self.m = vec![0.0; theta.len()];
                    self.v = vec![0.0; theta.len()];
                }
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for (((p, g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    // Moments of parameters that stop receiving gradient decay
                    // into subnormals, where float arithmetic is very slow.
                    if !m.is_normal() {
                        *m = 0.0;
                    }
                    if !v.is_normal() {
                        *v = 0.0;
                    }
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    /// `max |Q_θ(s, a)|` over the batch states, before the update.
    pub max_abs_q: f64,
    pub target_sync_count: u64,
}

/// A single-threaded learner: approximator, optimizer moments and sync count.
#[derive(Clone, Debug)]
pub struct Learner {
    pub q: QApproximator,
    pub cfg: TrainConfig,
    opt: OptimizerState,
    sync_count: u64,
}

impl Learner {
    pub fn new(q: QApproximator, cfg: TrainConfig) -> Result<Learner> {
        cfg.validate()?;
        Ok(Learner { q, cfg, opt: OptimizerState::default(), sync_count: 0 })
    }

    pub fn sync_count(&self) -> u64 {
        self.sync_count
    }

    /// Samples a batch and applies [`Learner::step_on_batch`].
    pub fn train_step(&mut self, buf: &mut ReplayBuffer, step_index: u64) -> Result<StepMetrics> {
        if buf.len() < self.cfg.batch_size {
            return Err(Error::invalid(format!("buffer holds {} transitions, batch needs {}", buf.len(), self.cfg.batch_size)));
        }
        let batch = buf.sample(self.cfg.batch_size);
        self.step_on_batch(&batch, step_index)
    }

    /// In periodic mode `θ̄ ← θ` first when `step_index mod T = 0`; then one
    /// optimizer step; in Polyak mode `θ̄` is averaged after the step.
    pub fn step_on_batch(&mut self, batch: &[Transition], step_index: u64) -> Result<StepMetrics> {
        if let Some(period) = self.cfg.target_period {
            if step_index % period == 0 {
                self.q.sync();
                self.sync_count += 1;
            }
        }
        let (loss, grad, max_abs_q) = loss_grad_and_max_q(&self.q, batch, &self.cfg)?;
        self.opt.apply(self.cfg.optimizer, self.cfg.lr, &mut self.q.theta, &grad);
        if let Some(tau) = self.cfg.polyak_tau {
            self.q.theta_bar = polyak_update(&self.q.theta, &self.q.theta_bar, tau)?;
        }
        Ok(StepMetrics { step: step_index, loss, max_abs_q, target_sync_count: self.sync_count })
    }

    /// Greedy action of `Q_θ` (lowest index on ties).
    pub fn greedy(&self, s: &StateEncoding) -> Result<usize> {
        Ok(argmax(&self.q.q_values(s)?))
    }
}

pub fn write_metrics_csv<W: Write>(rows: &[StepMetrics], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests;
