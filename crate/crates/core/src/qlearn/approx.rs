//! Q-function approximators with a lagging parameter copy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse state features: `(index, value)` pairs over `dim` inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateEncoding {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl StateEncoding {
    pub fn one_hot(dim: usize, index: usize) -> StateEncoding {
        assert!(index < dim, "one-hot index {index} out of range {dim}");
        StateEncoding { dim, entries: vec![(index, 1.0)] }
    }

    pub fn dense(values: &[f64]) -> StateEncoding {
        StateEncoding { dim: values.len(), entries: values.iter().copied().enumerate().collect() }
    }

    /// The hot index when this is a one-hot vector.
    pub fn hot_index(&self) -> Option<usize> {
        match self.entries.as_slice() {
            [(i, v)] if *v == 1.0 => Some(*i),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ApproxKind {
    /// One entry per (state, action); inputs must be one-hot.
    Tabular,
    /// `Q(s, ·) = W x` with `W` of shape `n_actions x input_dim`, no bias.
    Linear,
    /// One rectifier hidden layer.
    Mlp1 { hidden: usize },
}

pub const DEFAULT_HIDDEN: usize = 64;

/// `Q_θ` and its lagging copy `Q_θ̄`.
///
/// Parameter layouts: tabular `θ[s·A + a]`; linear `θ[a·d + i]`; mlp1
/// `[W1 (d x H, input-major), b1 (H), W2 (A x H), b2 (A)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QApproximator {
    pub kind: ApproxKind,
    pub input_dim: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
    pub theta_bar: Vec<f64>,
}

pub fn param_count(kind: ApproxKind, input_dim: usize, n_actions: usize) -> usize {
    match kind {
        ApproxKind::Tabular | ApproxKind::Linear => input_dim * n_actions,
        ApproxKind::Mlp1 { hidden } => input_dim * hidden + hidden + n_actions * hidden + n_actions,
    }
}

impl QApproximator {
    /// Zero-initialized tabular or linear approximator.
    pub fn zeros(kind: ApproxKind, input_dim: usize, n_actions: usize) -> QApproximator {
        let n = param_count(kind, input_dim, n_actions);
        QApproximator { kind, input_dim, n_actions, theta: vec![0.0; n], theta_bar: vec![0.0; n] }
    }

    /// Fan-in scaled uniform initialization `U(±1/√fan_in)` for mlp1 (biases
    /// included); tabular and linear start at zero. `θ̄ = θ` initially.
    pub fn init(kind: ApproxKind, input_dim: usize, n_actions: usize, rng: &mut impl Rng) -> QApproximator {
        let mut q = QApproximator::zeros(kind, input_dim, n_actions);
        if let ApproxKind::Mlp1 { hidden } = kind {
            let b1 = 1.0 / (input_dim as f64).sqrt();
            let b2 = 1.0 / (hidden as f64).sqrt();
            let first = input_dim * hidden + hidden;
            for (k, p) in q.theta.iter_mut().enumerate() {
                let bound = if k < first { b1 } else { b2 };
                *p = rng.random_range(-bound..bound);
            }
            q.theta_bar = q.theta.clone();
        }
        q
    }

    fn check_input(&self, s: &StateEncoding) -> Result<()> {
        if s.dim != self.input_dim || s.entries.iter().any(|&(i, _)| i >= self.input_dim) {
            return Err(Error::dims("q_forward", format!("input of dimension {}, expected {}", s.dim, self.input_dim)));
        }
        if self.kind == ApproxKind::Tabular && s.hot_index().is_none() {
            return Err(Error::invalid("tabular approximator needs one-hot inputs"));
        }
        Ok(())
    }

    /// `Q(s, ·)` under the given parameter vector.
    pub fn forward_with(&self, params: &[f64], s: &StateEncoding) -> Result<Vec<f64>> {
        self.check_input(s)?;
        let (d, na) = (self.input_dim, self.n_actions);
        Ok(match self.kind {
            ApproxKind::Tabular => {
                let i = s.hot_index().expect("checked");
                params[i * na..(i + 1) * na].to_vec()
            }
            ApproxKind::Linear => (0..na)
                .map(|a| s.entries.iter().map(|&(i, x)| params[a * d + i] * x).sum())
                .collect(),
            ApproxKind::Mlp1 { hidden } => self.mlp_output(params, &self.hidden_pre(params, s, hidden), hidden),
        })
    }

    fn hidden_pre(&self, params: &[f64], s: &StateEncoding, hidden: usize) -> Vec<f64> {
        let d = self.input_dim;
        let mut z = params[d * hidden..d * hidden + hidden].to_vec();
        for &(i, x) in &s.entries {
            for (zk, w) in z.iter_mut().zip(&params[i * hidden..(i + 1) * hidden]) {
                *zk += w * x;
            }
        }
        z
    }

    fn mlp_output(&self, params: &[f64], z: &[f64], hidden: usize) -> Vec<f64> {
        let w2_at = self.input_dim * hidden + hidden;
        let (w2, b2) = (&params[w2_at..], &params[w2_at + self.n_actions * hidden..]);
        (0..self.n_actions)
            .map(|a| b2[a] + w2[a * hidden..(a + 1) * hidden].iter().zip(z).map(|(w, x)| w * x.max(0.0)).sum::<f64>())
            .collect()
    }

    /// Hidden pre-activations under `θ`; empty for tabular and linear.
    pub fn pre_activations(&self, s: &StateEncoding) -> Vec<f64> {
        match self.kind {
            ApproxKind::Mlp1 { hidden } => self.hidden_pre(&self.theta, s, hidden),
            _ => Vec::new(),
        }
    }

    /// `Q_θ(s, ·)` together with the pre-activations that
    /// [`QApproximator::backward`] needs.
    pub fn forward_traced(&self, s: &StateEncoding) -> Result<(Vec<f64>, Vec<f64>)> {
        match self.kind {
            ApproxKind::Mlp1 { hidden } => {
                self.check_input(s)?;
                let z = self.hidden_pre(&self.theta, s, hidden);
                Ok((self.mlp_output(&self.theta, &z, hidden), z))
            }
            _ => Ok((self.q_values(s)?, Vec::new())),
        }
    }

    pub fn q_values(&self, s: &StateEncoding) -> Result<Vec<f64>> {
        self.forward_with(&self.theta, s)
    }

    pub fn lagging_q_values(&self, s: &StateEncoding) -> Result<Vec<f64>> {
        self.forward_with(&self.theta_bar, s)
    }

    /// Adds `coef · ∂Q_θ(s, a)/∂θ` into `grad`.
    pub fn accumulate_grad(&self, s: &StateEncoding, a: usize, coef: f64, grad: &mut [f64]) -> Result<()> {
        self.check_input(s)?;
        let z = self.pre_activations(s);
        self.backward(s, a, coef, &z, grad);
        Ok(())
    }

    /// [`QApproximator::accumulate_grad`] with the pre-activations `z` from
    /// [`QApproximator::forward_traced`] on the same, already checked, input.
    pub fn backward(&self, s: &StateEncoding, a: usize, coef: f64, z: &[f64], grad: &mut [f64]) {
        let (d, na) = (self.input_dim, self.n_actions);
        match self.kind {
            ApproxKind::Tabular => grad[s.hot_index().expect("checked") * na + a] += coef,
            ApproxKind::Linear => {
                for &(i, x) in &s.entries {
                    grad[a * d + i] += coef * x;
                }
            }
            ApproxKind::Mlp1 { hidden } => {
                let w2_at = d * hidden + hidden;
                let b2_at = w2_at + na * hidden;
                grad[b2_at + a] += coef;
                for k in 0..hidden {
                    grad[w2_at + a * hidden + k] += coef * z[k].max(0.0);
                }
                for k in 0..hidden {
                    if z[k] <= 0.0 {
                        continue;
                    }
                    let back = coef * self.theta[w2_at + a * hidden + k];
                    grad[d * hidden + k] += back;
                    for &(i, x) in &s.entries {
                        grad[i * hidden + k] += back * x;
                    }
                }
            }
        }
    }

    pub fn sync(&mut self) {
        self.theta_bar.copy_from_slice(&self.theta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_tabular_forward() {
        let q = QApproximator::zeros(ApproxKind::Tabular, 5, 4);
        assert_eq!(q.q_values(&StateEncoding::one_hot(5, 2)).unwrap(), vec![0.0; 4]);
        assert!(q.q_values(&StateEncoding::dense(&[0.5; 5])).is_err());
    }

    #[test]
    fn linear_one_hot_reads_weight_column() {
        let mut q = QApproximator::zeros(ApproxKind::Linear, 3, 2);
        q.theta = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(q.q_values(&StateEncoding::one_hot(3, 1)).unwrap(), vec![2.0, 5.0]);
    }

    #[test]
    fn mlp_forward_is_finite_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = QApproximator::init(ApproxKind::Mlp1 { hidden: 16 }, 6, 3, &mut rng);
        let s = StateEncoding::dense(&[0.3, -0.2, 0.9, 0.0, 1.0, -1.0]);
        let a = q.q_values(&s).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, q.q_values(&s).unwrap());
        assert_eq!(q.theta, q.theta_bar);
        assert!(q.q_values(&StateEncoding::dense(&[0.0; 5])).is_err());
    }

    #[test]
    fn gradient_of_q_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = QApproximator::init(ApproxKind::Mlp1 { hidden: 8 }, 4, 3, &mut rng);
        let s = StateEncoding::dense(&[0.7, -0.4, 0.2, 0.9]);
        let mut g = vec![0.0; q.theta.len()];
        q.accumulate_grad(&s, 1, 1.0, &mut g).unwrap();
        for k in 0..q.theta.len() {
            let mut up = q.theta.clone();
            let mut dn = q.theta.clone();
            up[k] += 1e-6;
            dn[k] -= 1e-6;
            let fd = (q.forward_with(&up, &s).unwrap()[1] - q.forward_with(&dn, &s).unwrap()[1]) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "param {k}: {fd} vs {}", g[k]);
        }
    }
}
