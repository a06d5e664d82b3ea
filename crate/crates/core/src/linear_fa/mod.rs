//! Expected updates of TD(0), target-network and functionally regularized
//! value iteration under linear function approximation.
//!
//! Notation: `Φ` is the `n x p` feature matrix over state-action pairs, `D`
//! the diagonal sampling distribution, `P` the state-action transition matrix
//! of the evaluated policy. The problem caches `G = ΦᵀDΦ`, its inverse,
//! `C = ΦᵀDPΦ` and `b = ΦᵀDR`; everything below is expressed in those terms.

mod instances;
mod iteration;

pub use instances::{random_instance, DistKind, InstanceSpec};
pub use iteration::{
    adaptive_eta, classify, classify_matrix, fr_limit_matrix, iteration_matrix, k_lower_bound, run_iteration,
    tn_limit_matrix, Algorithm, Classification, IterationSpec, MatrixKind, SpectralReport, Trajectory,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{policy_transition, Mdp, Policy};
use crate::smallmat::{inverse_named, solve, Matrix};

#[derive(Clone, Debug)]
pub struct LinearFaProblem {
    phi: Matrix,
    dist: Vec<f64>,
    transition: Matrix,
    reward: Vec<f64>,
    gamma: f64,
    gram: Matrix,
    gram_inv: Matrix,
    cross: Matrix,
    phi_d_r: Vec<f64>,
}

/// Current weights `w` and frozen weights `w̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub frozen: Vec<f64>,
}

impl WeightVector {
    pub fn new(w: Vec<f64>, frozen: Vec<f64>) -> WeightVector {
        WeightVector { w, frozen }
    }

    /// `w̄ = w`.
    pub fn synced(w: Vec<f64>) -> WeightVector {
        WeightVector { frozen: w.clone(), w }
    }
}

impl LinearFaProblem {
    pub fn from_mdp(mdp: &Mdp, policy: &Policy, phi: Matrix, dist: Vec<f64>) -> Result<LinearFaProblem> {
        let transition = policy_transition(mdp, policy)?;
        LinearFaProblem::from_matrices(phi, dist, transition, mdp.reward_vector().to_vec(), mdp.gamma())
    }

    /// Builds a problem from `P^π` and `R` directly. Rows of `transition` may
    /// sum to less than one, which models transitions into a terminal state.
    pub fn from_matrices(
        phi: Matrix,
        dist: Vec<f64>,
        transition: Matrix,
        reward: Vec<f64>,
        gamma: f64,
    ) -> Result<LinearFaProblem> {
        let n = phi.rows();
        if transition.rows() != n || transition.cols() != n {
            return Err(Error::dims("LinearFaProblem", format!("P is {}x{}, expected {n}x{n}", transition.rows(), transition.cols())));
        }
        if dist.len() != n || reward.len() != n {
            return Err(Error::dims("LinearFaProblem", "dist and reward must have one entry per state-action pair"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must be in [0,1), got {gamma}")));
        }
        if dist.iter().any(|&x| !(x >= 0.0)) || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::invalid("dist must be nonnegative and sum to 1"));
        }
        for i in 0..n {
            let row = transition.row(i);
            if row.iter().any(|&x| x < 0.0) || row.iter().sum::<f64>() > 1.0 + 1e-12 {
                return Err(Error::invalid(format!("row {i} of P is not sub-stochastic")));
            }
        }
        // ΦᵀD, then the cached products.
        let mut phi_t_d = phi.transpose();
        for k in 0..phi_t_d.rows() {
            for i in 0..n {
                phi_t_d[(k, i)] *= dist[i];
            }
        }
        let gram = phi_t_d.mul(&phi)?;
        let gram_inv = inverse_named(&gram, "feature Gram matrix")?;
        let cross = phi_t_d.mul(&transition.mul(&phi)?)?;
        let phi_d_r = phi_t_d.mul_vec(&reward)?;
        Ok(LinearFaProblem { phi, dist, transition, reward, gamma, gram, gram_inv, cross, phi_d_r })
    }

    pub fn n_features(&self) -> usize {
        self.phi.cols()
    }

    pub fn n_pairs(&self) -> usize {
        self.phi.rows()
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn dist(&self) -> &[f64] {
        &self.dist
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `ΦᵀDΦ`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    pub fn gram_inv(&self) -> &Matrix {
        &self.gram_inv
    }

    /// `ΦᵀDPΦ`.
    pub fn cross(&self) -> &Matrix {
        &self.cross
    }

    /// `ΦᵀDR`.
    pub fn phi_d_r(&self) -> &[f64] {
        &self.phi_d_r
    }

    /// `A_κ = ΦᵀD(I + κ − γP)Φ = (1+κ)G − γC`.
    pub fn a_kappa(&self, kappa: f64) -> Matrix {
        self.gram.scale(1.0 + kappa).sub(&self.cross.scale(self.gamma)).expect("same shape")
    }

    /// `Υ = G⁻¹C`.
    pub fn upsilon(&self) -> Matrix {
        self.gram_inv.mul(&self.cross).expect("same shape")
    }

    fn check_dim(&self, v: &[f64], op: &'static str) -> Result<()> {
        if v.len() != self.n_features() {
            return Err(Error::dims(op, format!("weights have length {}, expected {}", v.len(), self.n_features())));
        }
        Ok(())
    }

    /// `−ΦᵀD(R + γPΦw_boot − Φw)`.
    fn semigradient(&self, w: &[f64], w_boot: &[f64]) -> Result<Vec<f64>> {
        let v = self.phi.mul_vec(w)?;
        let boot = self.transition.mul_vec(&self.phi.mul_vec(w_boot)?)?;
        let delta: Vec<f64> = (0..self.n_pairs())
            .map(|i| -self.dist[i] * (self.reward[i] + self.gamma * boot[i] - v[i]))
            .collect();
        self.phi.tr_mul_vec(&delta)
    }
}

/// `−ΦᵀD(R + γPΦw − Φw)`.
pub fn td_semigradient(p: &LinearFaProblem, w: &WeightVector) -> Result<Vec<f64>> {
    p.check_dim(&w.w, "td_semigradient")?;
    p.semigradient(&w.w, &w.w)
}

/// `−ΦᵀD(R + γPΦw̄ − Φw)`.
pub fn tn_semigradient(p: &LinearFaProblem, w: &WeightVector) -> Result<Vec<f64>> {
    p.check_dim(&w.w, "tn_semigradient")?;
    p.check_dim(&w.frozen, "tn_semigradient")?;
    p.semigradient(&w.w, &w.frozen)
}

/// TD semi-gradient plus `κΦᵀDΦ(w − w̄)`.
pub fn fr_semigradient(p: &LinearFaProblem, kappa: f64, w: &WeightVector) -> Result<Vec<f64>> {
    p.check_dim(&w.frozen, "fr_semigradient")?;
    let mut g = td_semigradient(p, w)?;
    let diff: Vec<f64> = w.w.iter().zip(&w.frozen).map(|(a, b)| a - b).collect();
    let reg = p.gram.mul_vec(&diff)?;
    for (gi, ri) in g.iter_mut().zip(reg) {
        *gi += kappa * ri;
    }
    Ok(g)
}

/// `w* = A₀⁻¹ΦᵀDR`.
pub fn td_fixed_point(p: &LinearFaProblem) -> Result<Vec<f64>> {
    solve(&p.a_kappa(0.0), &p.phi_d_r).map_err(|e| match e {
        Error::Singular { pivot, .. } => Error::Singular { what: "TD system (no TD fixed point)".into(), pivot },
        other => other,
    })
}

/// `w*(w̄) = G⁻¹ΦᵀD(R + γPΦw̄)`.
pub fn tn_inner_fixed_point(p: &LinearFaProblem, wbar: &[f64]) -> Result<Vec<f64>> {
    p.check_dim(wbar, "tn_inner_fixed_point")?;
    let c = p.cross.mul_vec(wbar)?;
    let rhs: Vec<f64> = p.phi_d_r.iter().zip(c).map(|(b, c)| b + p.gamma * c).collect();
    p.gram_inv.mul_vec(&rhs)
}

/// `w_κ(w̄) = A_κ⁻¹(ΦᵀDR + κGw̄)`.
pub fn fr_inner_fixed_point(p: &LinearFaProblem, kappa: f64, wbar: &[f64]) -> Result<Vec<f64>> {
    p.check_dim(wbar, "fr_inner_fixed_point")?;
    let g = p.gram.mul_vec(wbar)?;
    let rhs: Vec<f64> = p.phi_d_r.iter().zip(g).map(|(b, g)| b + kappa * g).collect();
    solve(&p.a_kappa(kappa), &rhs).map_err(|e| match e {
        Error::Singular { pivot, .. } => Error::Singular { what: "A_kappa".into(), pivot },
        other => other,
    })
}

/// Minimizer of `½‖x − θ‖² + ((1−τ)/(2τ))‖x − θ̄‖²`, i.e. `τθ + (1−τ)θ̄`.
pub fn polyak_update(theta: &[f64], theta_bar: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must be in (0,1), got {tau}")));
    }
    if theta.len() != theta_bar.len() {
        return Err(Error::dims("polyak_update", "theta and theta_bar differ in length"));
    }
    Ok(theta.iter().zip(theta_bar).map(|(t, b)| tau * t + (1.0 - tau) * b).collect())
}

/// `½‖R + γPΦw_boot − Φw‖²_D`: the squared Bellman error with the bootstrap
/// held at `w_boot`. Its gradient in `w` is the semi-gradient.
pub fn frozen_bellman_loss(p: &LinearFaProblem, w: &[f64], w_boot: &[f64]) -> Result<f64> {
    let v = p.phi.mul_vec(w)?;
    let boot = p.transition.mul_vec(&p.phi.mul_vec(w_boot)?)?;
    Ok(0.5
        * (0..p.n_pairs())
            .map(|i| {
                let e = p.reward[i] + p.gamma * boot[i] - v[i];
                p.dist[i] * e * e
            })
            .sum::<f64>())
}
