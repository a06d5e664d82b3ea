//! Seeded property suites over random instances. Each suite returns the
//! number of instances checked, how many were excluded (marginal verdicts)
//! and a description of every counterexample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourrooms::{
    mann_whitney_less, run_sweep, true_q_of_greedy, ExactOracle, ExperimentConfig, FourRoomsEnv, ResultRow, N_ACTIONS,
};
use crate::linear_fa::{
    adaptive_eta, classify, fr_semigradient, iteration_matrix, k_lower_bound, polyak_update, random_instance,
    run_iteration, td_fixed_point, tn_semigradient, Algorithm, Classification, InstanceSpec, IterationSpec,
    LinearFaProblem, WeightVector,
};
use crate::mdp::{
    argmax, bellman_optimality, evaluate_policy_exact, policy_transition, random_mdp, random_policy,
    value_iteration_exact, QTable,
};
use crate::qlearn::{
    batch_targets, loss_and_grad, loss_with_targets, ApproxKind, Learner, LossKind, OptimizerKind, QApproximator,
    StateEncoding, TrainConfig, Transition,
};
use crate::smallmat::{norm_2, spectrum, Matrix};

/// Period used where only "large enough" is required.
pub const LARGE_PERIOD: u64 = 10_000;

#[derive(Clone, Debug, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub checked: usize,
    pub excluded: usize,
    pub failures: Vec<String>,
}

impl SuiteOutcome {
    fn new(name: &str) -> SuiteOutcome {
        SuiteOutcome { name: name.to_string(), checked: 0, excluded: 0, failures: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Draws instances until `accept` has taken `n` of them, or gives up after
/// `50 n` draws.
fn accepted_instances(
    seed: u64,
    n: usize,
    spec: &InstanceSpec,
    mut accept: impl FnMut(&LinearFaProblem) -> Result<bool>,
) -> Result<Vec<(usize, LinearFaProblem)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draw = 0;
    while out.len() < n {
        if draw > 50 * n.max(1) {
            return Err(Error::NoConvergence { what: "instance sampling".into(), iterations: draw });
        }
        let p = random_instance(&mut rng, spec)?;
        if accept(&p)? {
            out.push((draw, p));
        }
        draw += 1;
    }
    Ok(out)
}

/// With `γρ(Υ) < 1`, TN with period `max(K, 10⁴)` converges.
pub fn prop1_suite(n: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("prop1");
    let spec = InstanceSpec::default();
    let instances = accepted_instances(seed, n, &spec, |p| {
        Ok(p.gamma() * spectrum(&p.upsilon())?.radius < 1.0)
    })?;
    for (draw, p) in instances {
        let eta = adaptive_eta(&p, Algorithm::Tn, 0.0)?;
        let k = match k_lower_bound(&p, eta) {
            Ok(k) => k,
            Err(Error::BoundInapplicable(_)) => 1,
            Err(e) => return Err(e),
        };
        let period = k.max(LARGE_PERIOD);
        let r = classify(&p, &IterationSpec::tn(eta, period)?)?;
        match r.classification {
            Classification::Converges => out.checked += 1,
            Classification::Marginal => out.excluded += 1,
            Classification::Diverges => {
                out.checked += 1;
                out.failures.push(format!("draw {draw}: TN with T={period} has rho={}", r.radius()));
            }
        }
    }
    Ok(out)
}

pub const PROP2_KAPPAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// With `Sp(A₀)` in the open right half-plane, some small `κ` makes FR converge.
pub fn prop2_suite(n: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("prop2");
    let spec = InstanceSpec::default();
    let instances = accepted_instances(seed, n, &spec, |p| Ok(spectrum(&p.a_kappa(0.0))?.min_real_part() > 0.0))?;
    for (draw, p) in instances {
        let mut verdicts = Vec::new();
        for kappa in PROP2_KAPPAS {
            let eta = adaptive_eta(&p, Algorithm::Fr, kappa)?;
            let r = classify(&p, &IterationSpec::fr(eta, LARGE_PERIOD, kappa)?)?;
            verdicts.push((kappa, r.classification, r.radius()));
        }
        if verdicts.iter().any(|v| v.1 == Classification::Converges) {
            out.checked += 1;
        } else if verdicts.iter().any(|v| v.1 == Classification::Marginal) {
            out.excluded += 1;
        } else {
            out.checked += 1;
            out.failures.push(format!("draw {draw}: no kappa converges: {verdicts:?}"));
        }
    }
    Ok(out)
}

pub const COROLLARY_KAPPA: f64 = 1e-3;

/// One feature: wherever TN converges, FR(κ = 10⁻³) converges too.
pub fn corollary_suite(n: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut out = SuiteOutcome::new("corollary");
    let spec = InstanceSpec { n_features: Some(1), ..InstanceSpec::default() };
    let instances = accepted_instances(seed, n, &spec, |_| Ok(true))?;
    for (draw, p) in instances {
        let eta_tn = adaptive_eta(&p, Algorithm::Tn, 0.0)?;
        let tn = classify(&p, &IterationSpec::tn(eta_tn, LARGE_PERIOD)?)?;
        let fr = match adaptive_eta(&p, Algorithm::Fr, COROLLARY_KAPPA) {
            Ok(eta) => classify(&p, &IterationSpec::fr(eta, LARGE_PERIOD, COROLLARY_KAPPA)?)?.classification,
            Err(Error::Singular { .. }) => Classification::Marginal,
            Err(e) => return Err(e),
        };
        if tn.classification == Classification::Marginal || fr == Classification::Marginal {
            out.excluded += 1;
            continue;
        }
        out.checked += 1;
        if tn.classification == Classification::Converges && fr != Classification::Converges {
            out.failures.push(format!("draw {draw}: TN converges (rho={}) but FR does not", tn.radius()));
        }
    }
    Ok(out)
}

/// Settings for the shared fixed point suite.
pub const SHARED_PERIOD: u64 = 20;
pub const SHARED_KAPPA: f64 = 0.5;
/// Instances are kept when both composed radii fall in this range, so the
/// error decays over enough outer steps for a slope estimate.
pub const SHARED_RHO_RANGE: (f64, f64) = (0.5, 0.95);

#[derive(Clone, Debug, Serialize)]
pub struct ContractionCheck {
    pub algorithm: Algorithm,
    pub rho: f64,
    pub measured: f64,
    pub final_error: f64,
}

/// Per-outer-step contraction measured by a least-squares fit of
/// `log s_k` against `k`, with `s_k = (‖e_k‖² + ‖e_{k+1}‖²)^½` smoothing the
/// rotation of a complex dominant pair. Only steps with `s_k` between `1e-6`
/// and `1e-14` of `s_0` enter the fit, which skips the transient.
pub fn measured_contraction(errors: &[f64]) -> Option<f64> {
    let smooth: Vec<f64> = errors.windows(2).map(|w| w[0].hypot(w[1])).collect();
    let s0 = *smooth.first()?;
    let pts: Vec<(f64, f64)> = smooth
        .iter()
        .enumerate()
        .filter(|(_, &e)| e <= 1e-6 * s0 && e >= 1e-14 * s0 && e > 0.0)
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some((sxy / sxx).exp())
}

fn run_to_fixed_point(p: &LinearFaProblem, spec: &IterationSpec, rho: f64) -> Result<ContractionCheck> {
    let w_star = td_fixed_point(p)?;
    // A large initial deviation leaves room for the fit window above the
    // rounding floor of `w*`.
    let w0: Vec<f64> = w_star.iter().enumerate().map(|(i, x)| x + 1e6 * (1.0 + 0.5 * i as f64)).collect();
    let steps = ((1e-22f64).ln() / rho.ln()).ceil() as usize + 50;
    let t = run_iteration(p, spec, &w0, steps)?;
    let errors: Vec<f64> = t
        .weights
        .iter()
        .map(|w| norm_2(&w.iter().zip(&w_star).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    Ok(ContractionCheck {
        algorithm: spec.algorithm,
        rho,
        measured: measured_contraction(&errors).unwrap_or(f64::NAN),
        final_error: *errors.last().expect("nonempty"),
    })
}

/// TN and FR both converge to the TD fixed point at the predicted rate.
pub fn shared_fixed_point_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, Vec<ContractionCheck>)> {
    let mut out = SuiteOutcome::new("shared_fixed_point");
    let spec = InstanceSpec::default();
    let specs = |p: &LinearFaProblem| -> Result<[IterationSpec; 2]> {
        Ok([
            IterationSpec::tn(adaptive_eta(p, Algorithm::Tn, 0.0)?, SHARED_PERIOD)?,
            IterationSpec::fr(adaptive_eta(p, Algorithm::Fr, SHARED_KAPPA)?, SHARED_PERIOD, SHARED_KAPPA)?,
        ])
    };
    let instances = accepted_instances(seed, n, &spec, |p| {
        for s in specs(p)? {
            let rho = spectrum(&iteration_matrix(p, &s)?)?.radius;
            if !(SHARED_RHO_RANGE.0..=SHARED_RHO_RANGE.1).contains(&rho) {
                return Ok(false);
            }
        }
        Ok(true)
    })?;
    let mut checks = Vec::new();
    for (draw, p) in instances {
        out.checked += 1;
        for s in specs(&p)? {
            let rho = spectrum(&iteration_matrix(&p, &s)?)?.radius;
            let c = run_to_fixed_point(&p, &s, rho)?;
            if !(c.final_error < 1e-6) {
                out.failures.push(format!("draw {draw} {:?}: final error {}", s.algorithm, c.final_error));
            }
            if !((c.measured - c.rho).abs() <= 0.05 * c.rho) {
                out.failures.push(format!("draw {draw} {:?}: measured {} vs rho {}", s.algorithm, c.measured, c.rho));
            }
            checks.push(c);
        }
    }
    Ok((out, checks))
}

/// The linear problem whose semi-gradient equals the sample gradient of a
/// linear one-hot learner on `batch`: `D̂` holds pair frequencies, `P̂` moves
/// each pair to the greedy successor pair (under `θ̄` for TN, `θ` for FR)
/// and `R̂` holds mean rewards. Terminal transitions leave `P̂` rows short.
/// Pair `(s, a)` has index `s·A + a`; its feature is parameter `a·d + s`.
pub fn empirical_linear_problem(q: &QApproximator, batch: &[Transition], loss: LossKind, gamma: f64) -> Result<LinearFaProblem> {
    if q.kind != ApproxKind::Linear {
        return Err(Error::invalid("empirical problem needs a linear approximator"));
    }
    let (d, na) = (q.input_dim, q.n_actions);
    let n = d * na;
    let hot = |s: &StateEncoding| s.hot_index().ok_or_else(|| Error::invalid("one-hot states required"));
    let mut count = vec![0.0; n];
    let mut reward = vec![0.0; n];
    let mut transition = Matrix::zeros(n, n);
    for t in batch {
        let pair = hot(&t.s)? * na + t.a;
        count[pair] += 1.0;
        reward[pair] += t.r;
        if !t.terminal {
            let next = hot(&t.s_next)?;
            let values = match loss {
                LossKind::Tn => q.lagging_q_values(&t.s_next)?,
                LossKind::Fr => q.q_values(&t.s_next)?,
            };
            transition[(pair, next * na + argmax(&values))] += 1.0;
        }
    }
    for pair in 0..n {
        if count[pair] == 0.0 {
            return Err(Error::invalid(format!("batch misses state-action pair {pair}")));
        }
        reward[pair] /= count[pair];
        for j in 0..n {
            transition[(pair, j)] /= count[pair];
        }
    }
    let mut phi = Matrix::zeros(n, n);
    for s in 0..d {
        for a in 0..na {
            phi[(s * na + a, a * d + s)] = 1.0;
        }
    }
    let dist = count.iter().map(|c| c / batch.len() as f64).collect();
    LinearFaProblem::from_matrices(phi, dist, transition, reward, gamma)
}

/// `max|a − n| / max(‖a‖∞, ‖n‖∞)`.
pub fn relative_gradient_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 { diff } else { diff / scale }
}

pub const FD_STEP: f64 = 1e-6;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Inputs whose hidden pre-activations come this close to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

fn random_input(rng: &mut ChaCha8Rng, d: usize) -> StateEncoding {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    StateEncoding::dense(&v)
}

/// mlp1 semi-gradients against central differences of the loss with
/// targets and `θ̄` frozen. Returns the outcome and each draw's error.
pub fn gradient_check_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, Vec<f64>)> {
    let mut out = SuiteOutcome::new("gradient_check");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(n);
    for draw in 0..n {
        let d = rng.random_range(1..=8);
        let hidden = rng.random_range(4..=16);
        let na = rng.random_range(2..=4);
        let mut q = QApproximator::init(ApproxKind::Mlp1 { hidden }, d, na, &mut rng);
        for b in q.theta_bar.iter_mut() {
            *b += rng.random_range(-0.1..0.1);
        }
        let loss = if rng.random_bool(0.5) { LossKind::Tn } else { LossKind::Fr };
        let cfg = TrainConfig {
            loss,
            kappa: rng.random_range(0.0..2.0),
            target_period: Some(1),
            polyak_tau: None,
            lr: 0.1,
            batch_size: 1,
            total_steps: 1,
            gamma: 0.9,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
        };
        let mut batch = Vec::new();
        for _ in 0..rng.random_range(1..=8) {
            let mut s = random_input(&mut rng, d);
            let mut tries = 0;
            while q.pre_activations(&s).iter().any(|z| z.abs() < KINK_MARGIN) {
                s = random_input(&mut rng, d);
                tries += 1;
                if tries > 1000 {
                    return Err(Error::NoConvergence { what: "input away from rectifier kinks".into(), iterations: tries });
                }
            }
            batch.push(Transition {
                s,
                a: rng.random_range(0..na),
                r: rng.random_range(-1.0..1.0),
                s_next: random_input(&mut rng, d),
                terminal: rng.random_bool(0.2),
            });
        }
        let (_, analytic) = loss_and_grad(&q, &batch, &cfg)?;
        let targets = batch_targets(&q, &batch, &cfg)?;
        let mut numeric = vec![0.0; q.theta.len()];
        for k in 0..q.theta.len() {
            let mut up = q.theta.clone();
            let mut dn = q.theta.clone();
            up[k] += FD_STEP;
            dn[k] -= FD_STEP;
            numeric[k] = (loss_with_targets(&q, &up, &batch, &targets, &cfg)?
                - loss_with_targets(&q, &dn, &batch, &targets, &cfg)?)
                / (2.0 * FD_STEP);
        }
        let err = relative_gradient_error(&analytic, &numeric);
        out.checked += 1;
        if !(err < GRADIENT_TOLERANCE) {
            out.failures.push(format!("draw {draw}: relative error {err:e}"));
        }
        errors.push(err);
    }
    Ok((out, errors))
}

/// Gradient of `½‖x − θ‖² + ((1−τ)/(2τ))‖x − θ̄‖²` at the Polyak average.
pub fn polyak_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, f64)> {
    let mut out = SuiteOutcome::new("polyak");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..n {
        let dim = rng.random_range(1..=20);
        let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bar: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau = rng.random_range(0.01..0.99);
        let x = polyak_update(&theta, &bar, tau)?;
        let w = (1.0 - tau) / tau;
        let g = (0..dim).map(|i| ((x[i] - theta[i]) + w * (x[i] - bar[i])).abs()).fold(0.0, f64::max);
        out.checked += 1;
        worst = worst.max(g);
        if !(g < 1e-12) {
            out.failures.push(format!("draw {draw}: gradient {g:e} at tau {tau}"));
        }
    }
    Ok((out, worst))
}

/// One SGD step of a linear one-hot learner against the matching step on
/// [`empirical_linear_problem`], for both losses.
pub fn linear_equivalence_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, f64)> {
    let mut out = SuiteOutcome::new("linear_equivalence");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..n {
        let (d, na) = (rng.random_range(2..=5), rng.random_range(2..=4));
        let mut batch = Vec::new();
        let mut push = |rng: &mut ChaCha8Rng, s: usize, a: usize| {
            batch.push(Transition {
                s: StateEncoding::one_hot(d, s),
                a,
                r: rng.random_range(-1.0..1.0),
                s_next: StateEncoding::one_hot(d, rng.random_range(0..d)),
                terminal: rng.random_bool(0.15),
            })
        };
        for s in 0..d {
            for a in 0..na {
                push(&mut rng, s, a);
            }
        }
        for _ in 0..rng.random_range(0..=20) {
            let (s, a) = (rng.random_range(0..d), rng.random_range(0..na));
            push(&mut rng, s, a);
        }
        let mut q = QApproximator::zeros(ApproxKind::Linear, d, na);
        q.theta = (0..d * na).map(|_| rng.random_range(-1.0..1.0)).collect();
        q.theta_bar = (0..d * na).map(|_| rng.random_range(-1.0..1.0)).collect();
        for loss in [LossKind::Tn, LossKind::Fr] {
            let kappa = if loss == LossKind::Fr { rng.random_range(0.0..2.0) } else { 0.0 };
            let cfg = TrainConfig {
                loss,
                kappa,
                target_period: Some(u64::MAX),
                polyak_tau: None,
                lr: rng.random_range(0.01..1.0),
                batch_size: batch.len(),
                total_steps: 1,
                gamma: 0.9,
                seed: 0,
                optimizer: OptimizerKind::Sgd,
            };
            let p = empirical_linear_problem(&q, &batch, loss, cfg.gamma)?;
            let wv = WeightVector::new(q.theta.clone(), q.theta_bar.clone());
            let g = match loss {
                LossKind::Tn => tn_semigradient(&p, &wv)?,
                LossKind::Fr => fr_semigradient(&p, kappa, &wv)?,
            };
            let mut learner = Learner::new(q.clone(), cfg.clone())?;
            learner.step_on_batch(&batch, 1)?;
            let dev = (0..g.len())
                .map(|k| (learner.q.theta[k] - (q.theta[k] - cfg.lr * g[k])).abs())
                .fold(0.0, f64::max);
            out.checked += 1;
            worst = worst.max(dev);
            if !(dev < 1e-10) {
                out.failures.push(format!("draw {draw} {loss:?}: deviation {dev:e}"));
            }
        }
    }
    Ok((out, worst))
}

/// Spectral radius by Gelfand's formula, `‖A^k‖^{1/k}` at `k = 2²⁰`, with
/// each squaring renormalized to stay in range.
pub fn gelfand_radius(a: &Matrix) -> Result<f64> {
    let fro = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut b = a.clone();
    let mut log_norm = 0.0;
    let c = fro(&b);
    if c == 0.0 {
        return Ok(0.0);
    }
    b = b.scale(1.0 / c);
    log_norm += c.ln();
    for _ in 0..20 {
        let sq = b.mul(&b)?;
        let c = fro(&sq);
        if c == 0.0 {
            return Ok(0.0);
        }
        b = sq.scale(1.0 / c);
        log_norm = 2.0 * log_norm + c.ln();
    }
    Ok((log_norm / f64::from(1u32 << 20)).exp())
}

/// Eigenvalue-based spectral radius against [`gelfand_radius`] on random
/// dense matrices.
pub fn spectral_radius_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, f64)> {
    let mut out = SuiteOutcome::new("spectral_radius");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..n {
        let dim = rng.random_range(1..=12);
        let data = (0..dim * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::new(dim, dim, data)?;
        let rho = spectrum(&m)?.radius;
        let oracle = gelfand_radius(&m)?;
        let rel = (rho - oracle).abs() / oracle.max(1e-300);
        out.checked += 1;
        worst = worst.max(rel);
        if !(rel < 1e-3) {
            out.failures.push(format!("draw {draw}: eigen radius {rho} vs Gelfand {oracle}"));
        }
    }
    Ok((out, worst))
}

/// Residuals of exact policy evaluation and of the optimal solver on random
/// MDPs.
pub fn bellman_residual_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, f64)> {
    let mut out = SuiteOutcome::new("bellman_residual");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..n {
        let (ns, na) = (rng.random_range(1..=8), rng.random_range(1..=4));
        let gamma = rng.random_range(0.0..0.99);
        let mdp = random_mdp(&mut rng, ns, na, gamma)?;
        let pi = random_policy(&mut rng, ns, na);
        let q = evaluate_policy_exact(&mdp, &pi)?;
        let pq = policy_transition(&mdp, &pi)?.mul_vec(q.values())?;
        let eval_res = (0..mdp.n_pairs())
            .map(|i| (mdp.reward_vector()[i] + gamma * pq[i] - q.values()[i]).abs())
            .fold(0.0, f64::max);
        let (q_star, _) = value_iteration_exact(&mdp, 1e-12)?;
        let opt_res = bellman_optimality(&mdp, &q_star).max_abs_diff(&q_star);
        let res = eval_res.max(opt_res);
        out.checked += 1;
        worst = worst.max(res);
        if !(res < 1e-10) {
            out.failures.push(format!("draw {draw}: residuals {eval_res:e} (policy) {opt_res:e} (optimal)"));
        }
    }
    Ok((out, worst))
}

/// Four Rooms: the exact value of the greedy policy of a random table
/// satisfies its Bellman equation and lies in `[0, 1]`.
pub fn fourrooms_oracle_suite(n: usize, seed: u64) -> Result<(SuiteOutcome, f64)> {
    let mut out = SuiteOutcome::new("fourrooms_oracle");
    let env = FourRoomsEnv::canonical();
    let oracle = ExactOracle::new(&env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..n {
        let values = (0..env.n_states() * N_ACTIONS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let table = QTable::new(env.n_states(), N_ACTIONS, values)?;
        let actions = table.greedy_actions();
        let q_pi = true_q_of_greedy(&oracle, &table)?;
        let mut res: f64 = 0.0;
        for s in 0..env.n_states() {
            for a in 0..N_ACTIONS {
                let next = if s == env.goal() { s } else { env.move_from(s, a) };
                let backup = oracle.mdp.reward(s, a) + env.gamma() * q_pi.get(next, actions[next]);
                res = res.max((backup - q_pi.get(s, a)).abs());
            }
        }
        let in_range = q_pi.values().iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v));
        out.checked += 1;
        worst = worst.max(res);
        if !(res < 1e-10) || !in_range {
            out.failures.push(format!("draw {draw}: residual {res:e}, values in [0,1]: {in_range}"));
        }
    }
    Ok((out, worst))
}

/// A named suite with its default size and seed.
pub struct SuiteSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub default_n: usize,
    pub seed: u64,
    pub run: fn(usize, u64) -> Result<SuiteOutcome>,
}

fn first<T>(r: Result<(SuiteOutcome, T)>) -> Result<SuiteOutcome> {
    r.map(|(o, _)| o)
}

pub const SUITES: &[SuiteSpec] = &[
    SuiteSpec { name: "spectral_radius", description: "eigenvalue radius vs Gelfand formula", default_n: 100, seed: 2020, run: |n, s| first(spectral_radius_suite(n, s)) },
    SuiteSpec { name: "bellman_residual", description: "exact evaluation and optimal-solver residuals", default_n: 100, seed: 2021, run: |n, s| first(bellman_residual_suite(n, s)) },
    SuiteSpec { name: "gradient_check", description: "mlp1 semi-gradient vs central differences", default_n: 100, seed: 2022, run: |n, s| first(gradient_check_suite(n, s)) },
    SuiteSpec { name: "linear_equivalence", description: "linear train step vs linear-FA semi-gradient step", default_n: 100, seed: 2023, run: |n, s| first(linear_equivalence_suite(n, s)) },
    SuiteSpec { name: "prop1", description: "TN converges for a large period when gamma*rho(Upsilon) < 1", default_n: 200, seed: 2024, run: prop1_suite },
    SuiteSpec { name: "prop2", description: "FR converges for some small kappa when Sp(A0) is in C+", default_n: 200, seed: 2025, run: prop2_suite },
    SuiteSpec { name: "corollary", description: "one feature: TN converges implies FR converges", default_n: 1000, seed: 2026, run: corollary_suite },
    SuiteSpec { name: "shared_fixed_point", description: "TN and FR reach the TD fixed point at rate rho", default_n: 50, seed: 2027, run: |n, s| first(shared_fixed_point_suite(n, s)) },
    SuiteSpec { name: "polyak", description: "Polyak average minimizes the proximal objective", default_n: 100, seed: 2028, run: |n, s| first(polyak_suite(n, s)) },
    SuiteSpec { name: "fourrooms_oracle", description: "greedy-policy values satisfy their Bellman equation", default_n: 20, seed: 2029, run: |n, s| first(fourrooms_oracle_suite(n, s)) },
];

/// Off-policy regret comparison on Four Rooms.
pub const OFFPOLICY_EPSILON: f64 = 0.95;
pub const TN_PERIODS: [u64; 4] = [10, 100, 250, 500];
pub const FR_KAPPAS: [f64; 3] = [0.5, 1.0, 2.5];
/// Lagging-copy period for every FR configuration in the regret comparison.
pub const FR_PERIOD: u64 = 250;
pub const RANK_TEST_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, Serialize)]
pub struct GridResult {
    pub label: String,
    pub finals: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegretComparison {
    pub tn: Vec<GridResult>,
    pub fr: Vec<GridResult>,
    pub best_tn: usize,
    pub best_fr: usize,
    pub p_value: f64,
}

impl RegretComparison {
    pub fn passed(&self) -> bool {
        self.fr[self.best_fr].mean < self.tn[self.best_tn].mean && self.p_value < RANK_TEST_LEVEL
    }
}

fn final_regrets(rows: &[ResultRow], cfgs: &[ExperimentConfig]) -> Vec<f64> {
    cfgs.iter()
        .map(|c| {
            rows.iter()
                .filter(|r| r.seed == c.train.seed && r.eval_step == c.train.total_steps)
                .map(|r| r.avg_regret)
                .next()
                .unwrap_or(f64::NAN)
        })
        .collect()
}

fn best_by_mean(grid: &[GridResult]) -> usize {
    (0..grid.len()).min_by(|&a, &b| grid[a].mean.total_cmp(&grid[b].mean)).expect("nonempty grid")
}

/// Final average regret of every grid point at `ε = 0.95` over `seeds`;
/// the best mean of each agent is compared with a one-sided exact rank test.
/// `configure` may adjust the shared baseline (e.g. fewer steps in tests).
pub fn offpolicy_regret_comparison(
    seeds: &[u64],
    configure: impl Fn(&mut ExperimentConfig),
) -> Result<RegretComparison> {
    let env = FourRoomsEnv::canonical();
    let grid = |loss: LossKind, kappa: f64, period: u64| -> Result<Vec<f64>> {
        let cfgs: Vec<ExperimentConfig> = seeds
            .iter()
            .map(|&seed| {
                let mut c = ExperimentConfig::baseline(loss, kappa, period, OFFPOLICY_EPSILON, seed);
                configure(&mut c);
                // Only the final evaluation is compared.
                c.eval_every = c.train.total_steps;
                c
            })
            .collect();
        Ok(final_regrets(&run_sweep(&env, &cfgs)?, &cfgs))
    };
    let summarize = |label: String, finals: Vec<f64>| GridResult {
        label,
        mean: finals.iter().sum::<f64>() / finals.len() as f64,
        finals,
    };
    let mut tn = Vec::new();
    for period in TN_PERIODS {
        tn.push(summarize(format!("tn T={period}"), grid(LossKind::Tn, 0.0, period)?));
    }
    let mut fr = Vec::new();
    for kappa in FR_KAPPAS {
        fr.push(summarize(format!("fr kappa={kappa} T={FR_PERIOD}"), grid(LossKind::Fr, kappa, FR_PERIOD)?));
    }
    let (best_tn, best_fr) = (best_by_mean(&tn), best_by_mean(&fr));
    let p_value = mann_whitney_less(&fr[best_fr].finals, &tn[best_tn].finals)?;
    Ok(RegretComparison { tn, fr, best_tn, best_fr, p_value })
}

/// Soft-divergence comparison at `ε = 0.5`: TN with a short period against
/// FR with `κ = 0.5` and `T = 250`.
pub const SOFT_EPSILON: f64 = 0.5;
pub const SOFT_TN_PERIOD: u64 = 10;
pub const SOFT_FR: (f64, u64) = (0.5, 250);

#[derive(Clone, Debug, Serialize)]
pub struct SoftDivergenceComparison {
    pub tn_flagged: usize,
    pub fr_flagged: usize,
    pub cells: usize,
}

impl SoftDivergenceComparison {
    pub fn passed(&self) -> bool {
        self.tn_flagged > self.fr_flagged
    }
}

pub fn soft_divergence_comparison(
    seeds: &[u64],
    configure: impl Fn(&mut ExperimentConfig),
) -> Result<SoftDivergenceComparison> {
    let env = FourRoomsEnv::canonical();
    let flagged = |loss: LossKind, kappa: f64, period: u64| -> Result<(usize, usize)> {
        let cfgs: Vec<ExperimentConfig> = seeds
            .iter()
            .map(|&seed| {
                let mut c = ExperimentConfig::baseline(loss, kappa, period, SOFT_EPSILON, seed);
                configure(&mut c);
                c
            })
            .collect();
        let rows = run_sweep(&env, &cfgs)?;
        Ok((rows.iter().filter(|r| r.soft_divergent).count(), rows.len()))
    };
    let (tn_flagged, cells) = flagged(LossKind::Tn, 0.0, SOFT_TN_PERIOD)?;
    let (fr_flagged, fr_cells) = flagged(LossKind::Fr, SOFT_FR.0, SOFT_FR.1)?;
    debug_assert_eq!(cells, fr_cells);
    Ok(SoftDivergenceComparison { tn_flagged, fr_flagged, cells })
}
