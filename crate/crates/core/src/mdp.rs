//! Finite MDPs, policies and exact evaluation in state-action space.

use std::path::Path;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NumericPolicy;
use crate::smallmat::{solve, Matrix};

const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite MDP. `transition` is flattened as `[s][a][s']`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp", into = "RawMdp")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    initial: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<Vec<f64>>,
    gamma: f64,
    initial: Vec<f64>,
}

impl TryFrom<RawMdp> for Mdp {
    type Error = Error;
    fn try_from(raw: RawMdp) -> Result<Mdp> {
        if raw.reward.len() != raw.n_states || raw.reward.iter().any(|r| r.len() != raw.n_actions) {
            return Err(Error::dims("Mdp", "reward table must be n_states x n_actions"));
        }
        let reward = raw.reward.concat();
        Mdp::new(raw.n_states, raw.n_actions, raw.transition, reward, raw.gamma, raw.initial)
    }
}

impl From<Mdp> for RawMdp {
    fn from(m: Mdp) -> RawMdp {
        RawMdp {
            reward: m.reward.chunks(m.n_actions).map(|c| c.to_vec()).collect(),
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition: m.transition,
            gamma: m.gamma,
            initial: m.initial,
        }
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL * p.len().max(1) as f64 {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        gamma: f64,
        initial: Vec<f64>,
    ) -> Result<Mdp> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("an MDP needs at least one state and one action"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::dims("Mdp", format!("transition has {} entries", transition.len())));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::dims("Mdp", format!("reward has {} entries", reward.len())));
        }
        if initial.len() != n_states {
            return Err(Error::dims("Mdp", format!("initial has {} entries", initial.len())));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must be in [0,1), got {gamma}")));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward has a non-finite entry"));
        }
        for (k, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, &format!("P[{}][{}]", k / n_actions, k % n_actions))?;
        }
        check_distribution(&initial, "initial distribution")?;
        Ok(Mdp { n_states, n_actions, transition, reward, gamma, initial })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Size of the state-action space.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair(s, a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[self.pair(s, a)]
    }

    /// Rewards as a state-action vector.
    pub fn reward_vector(&self) -> &[f64] {
        &self.reward
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Mdp> {
        let mut m = self.clone();
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("gamma must be in [0,1), got {gamma}")));
        }
        m.gamma = gamma;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Mdp> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Mdp> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mdp::from_json(&text)
    }
}

/// A stochastic policy `π[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Policy> {
        if probs.len() != n_states * n_actions {
            return Err(Error::dims("Policy", format!("{} entries for {n_states}x{n_actions}", probs.len())));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("pi[{s}]"))?;
        }
        Ok(Policy { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Policy {
        Policy { n_states, n_actions, probs: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Policy> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy { n_states: actions.len(), n_actions, probs })
    }

    /// Mixes a deterministic choice with uniform noise: `(1-ε)·δ_a + ε/|A|`.
    pub fn epsilon_smoothed(n_actions: usize, actions: &[usize], epsilon: f64) -> Result<Policy> {
        let base = Policy::deterministic(n_actions, actions)?;
        let probs = base.probs.iter().map(|p| (1.0 - epsilon) * p + epsilon / n_actions as f64).collect();
        Policy::new(actions.len(), n_actions, probs)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// Action values `Q[s][a]`, always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<QTable> {
        if values.len() != n_states * n_actions {
            return Err(Error::dims("QTable", format!("{} entries for {n_states}x{n_actions}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "Q table".into() });
        }
        Ok(QTable { n_states, n_actions, values })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> QTable {
        QTable { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s))).collect()
    }

    pub fn greedy_policy(&self) -> Policy {
        Policy::deterministic(self.n_actions, &self.greedy_actions()).expect("argmax is in range")
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn check_shapes(mdp: &Mdp, pi: &Policy) -> Result<()> {
    if mdp.n_states != pi.n_states || mdp.n_actions != pi.n_actions {
        return Err(Error::dims(
            "policy_transition",
            format!(
                "MDP is {}x{}, policy is {}x{}",
                mdp.n_states, mdp.n_actions, pi.n_states, pi.n_actions
            ),
        ));
    }
    Ok(())
}

/// `P^π` on state-action pairs: `((s,a),(s',a')) ↦ P[s][a][s']·π[s'][a']`.
pub fn policy_transition(mdp: &Mdp, pi: &Policy) -> Result<Matrix> {
    check_shapes(mdp, pi)?;
    let n = mdp.n_pairs();
    let mut m = Matrix::zeros(n, n);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.pair(s, a);
            for (s2, &p) in mdp.next_distribution(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..mdp.n_actions {
                    m[(row, mdp.pair(s2, a2))] = p * pi.prob(s2, a2);
                }
            }
        }
    }
    Ok(m)
}

/// Stationary distribution of a row-stochastic matrix by power iteration.
pub fn stationary_distribution(p: &Matrix) -> Result<Vec<f64>> {
    let n = p.require_square("stationary_distribution")?;
    let policy = NumericPolicy::DEFAULT;
    let mut d = vec![1.0 / n as f64; n];
    for _ in 0..policy.stationary_max_iterations {
        let mut next = p.tr_mul_vec(&d)?;
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        let change = next.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        d = next;
        if change < policy.stationary_tol {
            return Ok(d);
        }
    }
    Err(Error::NoConvergence {
        what: "stationary distribution (chain not irreducible or periodic)".into(),
        iterations: policy.stationary_max_iterations,
    })
}

/// `Q^π = (I − γP^π)⁻¹ R`.
pub fn evaluate_policy_exact(mdp: &Mdp, pi: &Policy) -> Result<QTable> {
    let p = policy_transition(mdp, pi)?;
    let system = Matrix::identity(mdp.n_pairs()).sub(&p.scale(mdp.gamma))?;
    let q = solve(&system, &mdp.reward)?;
    QTable::new(mdp.n_states, mdp.n_actions, q)
}

/// Optimal action values and a greedy optimal policy.
///
/// Value iteration runs until the optimality residual drops below `tol`; the
/// greedy policy is then polished by exact policy iteration, so the returned
/// table is the exact value of the returned policy.
pub fn value_iteration_exact(mdp: &Mdp, tol: f64) -> Result<(QTable, Policy)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    loop {
        let next = bellman_optimality(mdp, &q);
        let residual = next.max_abs_diff(&q);
        q = next;
        if residual < tol {
            break;
        }
    }
    let mut actions = q.greedy_actions();
    let mut iterations = 0;
    loop {
        let pi = Policy::deterministic(mdp.n_actions, &actions)?;
        let q_pi = evaluate_policy_exact(mdp, &pi)?;
        let mut changed = false;
        for (s, a) in actions.iter_mut().enumerate() {
            let best = argmax(q_pi.row(s));
            // Only switch for a real improvement; avoids cycling on ties.
            if q_pi.get(s, best) > q_pi.get(s, *a) + 1e-12 {
                *a = best;
                changed = true;
            }
        }
        iterations += 1;
        if !changed || iterations > 1000 {
            return Ok((q_pi, pi));
        }
    }
}

/// One application of the optimality operator.
pub fn bellman_optimality(mdp: &Mdp, q: &QTable) -> QTable {
    let v: Vec<f64> = (0..mdp.n_states)
        .map(|s| q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let values = (0..mdp.n_states)
        .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
        .map(|(s, a)| {
            let next: f64 = mdp.next_distribution(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
            mdp.reward(s, a) + mdp.gamma * next
        })
        .collect();
    QTable { n_states: mdp.n_states, n_actions: mdp.n_actions, values }
}

/// Sample from the flat Dirichlet on `n` points (normalized exponentials).
pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let sum: f64 = x.iter().sum();
    x.into_iter().map(|v| v / sum).collect()
}

/// Random MDP with flat-Dirichlet transition rows and uniform[-1,1] rewards.
pub fn random_mdp(rng: &mut impl Rng, n_states: usize, n_actions: usize, gamma: f64) -> Result<Mdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_distribution(rng, n_states));
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
    let initial = random_distribution(rng, n_states);
    renormalize_rows(&mut transition, n_states);
    Mdp::new(n_states, n_actions, transition, reward, gamma, initial)
}

pub fn random_policy(rng: &mut impl Rng, n_states: usize, n_actions: usize) -> Policy {
    let probs = (0..n_states).flat_map(|_| random_distribution(rng, n_actions)).collect();
    Policy { n_states, n_actions, probs }
}

fn renormalize_rows(data: &mut [f64], width: usize) {
    for row in data.chunks_mut(width) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallmat::{eigenvectors, spectrum};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> Mdp {
        Mdp::new(2, 1, vec![0.0, 1.0, 0.5, 0.5], vec![0.0, 0.0], 0.99, vec![0.5, 0.5]).unwrap()
    }

    /// Chain 0 -> 1 -> 2 with reward 1 on leaving state 1, state 2 absorbing.
    fn chain() -> Mdp {
        #[rustfmt::skip]
        let t = vec![
            0.0, 1.0, 0.0,   1.0, 0.0, 0.0,
            0.0, 0.0, 1.0,   1.0, 0.0, 0.0,
            0.0, 0.0, 1.0,   0.0, 0.0, 1.0,
        ];
        Mdp::new(3, 2, t, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 0.9, vec![1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn single_state_transition() {
        let m = Mdp::new(1, 1, vec![1.0], vec![0.0], 0.5, vec![1.0]).unwrap();
        let p = policy_transition(&m, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(p, Matrix::identity(1));
    }

    #[test]
    fn two_state_transition_and_stationary() {
        let m = two_state();
        let p = policy_transition(&m, &Policy::uniform(2, 1)).unwrap();
        assert_eq!(p, Matrix::from_rows(&[[0.0, 1.0], [0.5, 0.5]]).unwrap());
        let d = stationary_distribution(&p).unwrap();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12 && (d[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_chain_is_uniform() {
        let p = Matrix::new(3, 3, vec![1.0 / 3.0; 9]).unwrap();
        let d = stationary_distribution(&p).unwrap();
        assert!(d.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn periodic_chain_fails() {
        let p = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(stationary_distribution(&p), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn stationary_matches_left_eigenvector() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let m = random_mdp(&mut rng, 4, 1, 0.9).unwrap();
            let p = policy_transition(&m, &Policy::uniform(4, 1)).unwrap();
            let d = stationary_distribution(&p).unwrap();
            let pt = p.transpose();
            let spec = spectrum(&pt).unwrap();
            let k = spec.eigenvalues.iter().position(|z| (z.re - 1.0).abs() < 1e-9 && z.im.abs() < 1e-9).unwrap();
            let v = &eigenvectors(&pt, &spec).unwrap()[k];
            let sum: f64 = v.iter().map(|z| z.re).sum();
            for (x, z) in d.iter().zip(v) {
                assert!((x - z.re / sum).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn random_transition_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(&mut rng, 3, 2, 0.9).unwrap();
        let p = policy_transition(&m, &random_policy(&mut rng, 3, 2)).unwrap();
        for i in 0..6 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_cases() {
        let mut m = chain();
        m.reward = vec![0.0; 6];
        let q = evaluate_policy_exact(&m, &Policy::uniform(3, 2)).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));

        let absorbing = Mdp::new(1, 1, vec![1.0], vec![1.0], 0.5, vec![1.0]).unwrap();
        let q = evaluate_policy_exact(&absorbing, &Policy::uniform(1, 1)).unwrap();
        assert!((q.get(0, 0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn value_iteration_on_chain() {
        let (q, pi) = value_iteration_exact(&chain(), 1e-12).unwrap();
        // Hand evaluation: Q(1,0) = 1, Q(0,0) = 0.9, Q(1,1) = 0.9·0.9 = 0.81, Q(0,1) = 0.9·0.9.
        assert!((q.get(1, 0) - 1.0).abs() < 1e-12);
        assert!((q.get(0, 0) - 0.9).abs() < 1e-12);
        assert!((q.get(1, 1) - 0.81).abs() < 1e-12);
        assert!((q.get(0, 1) - 0.81).abs() < 1e-12);
        assert_eq!(q.get(2, 0), 0.0);
        assert_eq!(pi.row(0), &[1.0, 0.0]);
        // Tie at the absorbing state resolves to action 0.
        assert_eq!(pi.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn zero_reward_value_iteration() {
        let mut m = chain();
        m.reward = vec![0.0; 6];
        let (q, _) = value_iteration_exact(&m, 1e-12).unwrap();
        assert!(q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let m = chain();
        let back = Mdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let bad = m.to_json().unwrap().replace("0.9", "1.5");
        assert!(Mdp::from_json(&bad).is_err());
        assert!(Mdp::new(1, 1, vec![0.7], vec![0.0], 0.5, vec![1.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn evaluation_satisfies_bellman(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mdp(&mut rng, 4, 3, 0.95).unwrap();
            let pi = random_policy(&mut rng, 4, 3);
            let q = evaluate_policy_exact(&m, &pi).unwrap();
            let p = policy_transition(&m, &pi).unwrap();
            let pq = p.mul_vec(q.values()).unwrap();
            for i in 0..12 {
                proptest::prop_assert!((m.reward_vector()[i] + 0.95 * pq[i] - q.values()[i]).abs() < 1e-10);
            }
        }

        #[test]
        fn optimal_values_dominate(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mdp(&mut rng, 4, 2, 0.9).unwrap();
            let (q_star, _) = value_iteration_exact(&m, 1e-10).unwrap();
            let residual = bellman_optimality(&m, &q_star).max_abs_diff(&q_star);
            proptest::prop_assert!(residual < 1e-10);
            for _ in 0..5 {
                let q = evaluate_policy_exact(&m, &random_policy(&mut rng, 4, 2)).unwrap();
                for (a, b) in q_star.values().iter().zip(q.values()) {
                    proptest::prop_assert!(*a >= b - 1e-10);
                }
            }
        }

        #[test]
        fn stationary_is_fixed(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_mdp(&mut rng, 5, 2, 0.9).unwrap();
            let p = policy_transition(&m, &random_policy(&mut rng, 5, 2)).unwrap();
            let d = stationary_distribution(&p).unwrap();
            let dp = p.tr_mul_vec(&d).unwrap();
            proptest::prop_assert!(d.iter().zip(&dp).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }
}
