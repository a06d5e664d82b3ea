//! Seeded random problem instances for property tests and the verify suites.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LinearFaProblem;
use crate::error::{Error, Result};
use crate::mdp::{policy_transition, random_distribution, random_mdp, random_policy, stationary_distribution};
use crate::smallmat::{condition_number, Matrix};

/// How the sampling distribution `D` is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    /// Flat Dirichlet over state-action pairs (off-policy).
    Dirichlet,
    /// Stationary distribution of `P^π` (on-policy).
    Stationary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    /// Upper bound on `|S||A|`.
    pub max_pairs: usize,
    /// Upper bound on `p` when `n_features` is unset.
    pub max_features: usize,
    pub n_features: Option<usize>,
    pub gamma: f64,
    /// `None` picks either kind with equal probability.
    pub dist: Option<DistKind>,
    /// Largest accepted condition number of `ΦᵀDΦ`.
    pub max_gram_condition: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            max_pairs: 6,
            max_features: 3,
            n_features: None,
            gamma: 0.99,
            dist: None,
            max_gram_condition: 1e6,
        }
    }
}

const MAX_FEATURE_DRAWS: usize = 1000;

/// Draws an MDP with Dirichlet transition rows, a random policy, `D`, and
/// uniform[-1,1] features, redrawing features until `ΦᵀDΦ` is well conditioned.
pub fn random_instance(rng: &mut impl Rng, spec: &InstanceSpec) -> Result<LinearFaProblem> {
    let p = spec.n_features.unwrap_or_else(|| rng.random_range(1..=spec.max_features.max(1)));
    if p == 0 || p > spec.max_pairs {
        return Err(Error::invalid(format!("{p} features do not fit in {} state-action pairs", spec.max_pairs)));
    }
    let n_actions = if spec.max_pairs >= 4 { rng.random_range(1..=2) } else { 1 };
    let min_states = p.div_ceil(n_actions).max(2);
    let max_states = (spec.max_pairs / n_actions).max(min_states);
    let n_states = rng.random_range(min_states..=max_states);
    let n = n_states * n_actions;

    let mdp = random_mdp(rng, n_states, n_actions, spec.gamma)?;
    let pi = random_policy(rng, n_states, n_actions);
    let kind = spec.dist.unwrap_or(if rng.random_bool(0.5) { DistKind::Dirichlet } else { DistKind::Stationary });
    let dist = match kind {
        DistKind::Dirichlet => random_distribution(rng, n),
        DistKind::Stationary => stationary_distribution(&policy_transition(&mdp, &pi)?)?,
    };

    for _ in 0..MAX_FEATURE_DRAWS {
        let phi = Matrix::new(n, p, (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let mut gram = Matrix::zeros(p, p);
        for i in 0..n {
            for a in 0..p {
                for b in 0..p {
                    gram[(a, b)] += dist[i] * phi[(i, a)] * phi[(i, b)];
                }
            }
        }
        if condition_number(&gram)? < spec.max_gram_condition {
            return LinearFaProblem::from_mdp(&mdp, &pi, phi, dist);
        }
    }
    Err(Error::NoConvergence { what: "feature draw with a well-conditioned Gram matrix".into(), iterations: MAX_FEATURE_DRAWS })
}
