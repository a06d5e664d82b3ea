use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linear_fa::{fr_semigradient, tn_semigradient, WeightVector};
use crate::verify::empirical_linear_problem;

fn cfg(loss: LossKind, kappa: f64, period: u64) -> TrainConfig {
    TrainConfig {
        loss,
        kappa,
        target_period: Some(period),
        polyak_tau: None,
        lr: 0.1,
        batch_size: 8,
        total_steps: 100,
        gamma: 0.9,
        seed: 0,
        optimizer: OptimizerKind::Sgd,
    }
}

fn one_hot_transition(d: usize, s: usize, a: usize, r: f64, s2: usize, terminal: bool) -> Transition {
    Transition { s: StateEncoding::one_hot(d, s), a, r, s_next: StateEncoding::one_hot(d, s2), terminal }
}

/// Random transitions over `d` states covering every (state, action) pair.
fn covering_batch(rng: &mut ChaCha8Rng, d: usize, na: usize, extra: usize) -> Vec<Transition> {
    let mut batch = Vec::new();
    for s in 0..d {
        for a in 0..na {
            batch.push(one_hot_transition(d, s, a, rng.random_range(-1.0..1.0), rng.random_range(0..d), rng.random_bool(0.15)));
        }
    }
    for _ in 0..extra {
        batch.push(one_hot_transition(
            d,
            rng.random_range(0..d),
            rng.random_range(0..na),
            rng.random_range(-1.0..1.0),
            rng.random_range(0..d),
            rng.random_bool(0.15),
        ));
    }
    batch
}

fn random_params(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn td_target_examples() {
    let q = QApproximator::zeros(ApproxKind::Tabular, 3, 2);
    assert_eq!(td_target(&q, &one_hot_transition(3, 0, 0, 1.0, 1, true), 0.9, true).unwrap(), 1.0);
    assert_eq!(td_target(&q, &one_hot_transition(3, 0, 0, 0.5, 1, false), 0.9, false).unwrap(), 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut q = QApproximator::zeros(ApproxKind::Tabular, 3, 2);
    q.theta = random_params(&mut rng, 6);
    q.theta_bar = random_params(&mut rng, 6);
    let t = one_hot_transition(3, 0, 1, 0.25, 2, false);
    assert_eq!(td_target(&q, &t, 0.9, false).unwrap(), 0.25 + 0.9 * q.theta[4].max(q.theta[5]));
    assert_eq!(td_target(&q, &t, 0.9, true).unwrap(), 0.25 + 0.9 * q.theta_bar[4].max(q.theta_bar[5]));
}

#[test]
fn fr_with_zero_kappa_matches_tn_at_equal_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut q = QApproximator::init(ApproxKind::Mlp1 { hidden: 8 }, 3, 2, &mut rng);
    q.sync();
    let batch: Vec<Transition> = (0..6)
        .map(|_| Transition {
            s: StateEncoding::dense(&random_params(&mut rng, 3)),
            a: rng.random_range(0..2),
            r: rng.random_range(0.0..1.0),
            s_next: StateEncoding::dense(&random_params(&mut rng, 3)),
            terminal: false,
        })
        .collect();
    let (l_tn, g_tn) = loss_and_grad(&q, &batch, &cfg(LossKind::Tn, 0.0, 1)).unwrap();
    let (l_fr, g_fr) = loss_and_grad(&q, &batch, &cfg(LossKind::Fr, 0.0, 1)).unwrap();
    assert_eq!(l_tn, l_fr);
    assert_eq!(g_tn, g_fr);
}

#[test]
fn zero_loss_at_target() {
    let mut q = QApproximator::zeros(ApproxKind::Tabular, 2, 2);
    q.theta = vec![1.0, 0.0, 0.0, 0.0];
    q.sync();
    let batch = vec![one_hot_transition(2, 0, 0, 1.0, 1, false)];
    for loss in [LossKind::Tn, LossKind::Fr] {
        let (l, g) = loss_and_grad(&q, &batch, &cfg(loss, 0.7, 1)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }
    assert!(loss_and_grad(&q, &[], &cfg(LossKind::Tn, 0.0, 1)).is_err());
}

#[test]
fn period_one_tracks_theta() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = covering_batch(&mut rng, 3, 2, 4);
    let mut learner = Learner::new(QApproximator::zeros(ApproxKind::Tabular, 3, 2), cfg(LossKind::Tn, 0.0, 1)).unwrap();
    for step in 0..10 {
        let before = learner.q.theta.clone();
        learner.step_on_batch(&batch, step).unwrap();
        assert_eq!(learner.q.theta_bar, before);
    }
    assert_eq!(learner.sync_count(), 10);
}

#[test]
fn periodic_sync_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = covering_batch(&mut rng, 3, 2, 0);
    let mut learner = Learner::new(QApproximator::zeros(ApproxKind::Tabular, 3, 2), cfg(LossKind::Tn, 0.0, 4)).unwrap();
    let mut last = None;
    for step in 0..10 {
        last = Some(learner.step_on_batch(&batch, step).unwrap());
    }
    assert_eq!(last.unwrap().target_sync_count, 3);
}

#[test]
fn linear_step_equals_linear_fa_semigradient_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let (d, na) = (rng.random_range(2..5), rng.random_range(2..4));
        let batch = covering_batch(&mut rng, d, na, 10);
        let mut q = QApproximator::zeros(ApproxKind::Linear, d, na);
        q.theta = random_params(&mut rng, d * na);
        q.theta_bar = random_params(&mut rng, d * na);
        for (loss, kappa) in [(LossKind::Tn, 0.0), (LossKind::Fr, 0.3)] {
            let c = TrainConfig { target_period: Some(1000), ..cfg(loss, kappa, 1) };
            let p = empirical_linear_problem(&q, &batch, loss, c.gamma).unwrap();
            let wv = WeightVector::new(q.theta.clone(), q.theta_bar.clone());
            let g = match loss {
                LossKind::Tn => tn_semigradient(&p, &wv).unwrap(),
                LossKind::Fr => fr_semigradient(&p, kappa, &wv).unwrap(),
            };
            let mut learner = Learner::new(q.clone(), c.clone()).unwrap();
            learner.step_on_batch(&batch, 1).unwrap();
            for k in 0..g.len() {
                let expected = q.theta[k] - c.lr * g[k];
                assert!((learner.q.theta[k] - expected).abs() < 1e-10, "trial {trial} {loss:?} param {k}");
            }
        }
    }
}

#[test]
fn tabular_and_linear_one_hot_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (d, na) = (5, 3);
    let data = covering_batch(&mut rng, d, na, 30);
    for c in [cfg(LossKind::Tn, 0.0, 7), cfg(LossKind::Fr, 0.5, 7)] {
        let mut tab = Learner::new(QApproximator::zeros(ApproxKind::Tabular, d, na), c.clone()).unwrap();
        let mut lin = Learner::new(QApproximator::zeros(ApproxKind::Linear, d, na), c.clone()).unwrap();
        let (mut b1, mut b2) = (ReplayBuffer::new(100, 11), ReplayBuffer::new(100, 11));
        for t in &data {
            b1.push(t.clone());
            b2.push(t.clone());
        }
        for step in 0..200 {
            tab.train_step(&mut b1, step).unwrap();
            lin.train_step(&mut b2, step).unwrap();
        }
        for s in 0..d {
            let e = StateEncoding::one_hot(d, s);
            let (a, b) = (tab.q.q_values(&e).unwrap(), lin.q.q_values(&e).unwrap());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn identical_seeds_give_identical_trajectories() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = QApproximator::init(ApproxKind::Mlp1 { hidden: 8 }, 4, 2, &mut rng);
        let mut buf = ReplayBuffer::new(50, 1);
        for t in covering_batch(&mut rng, 4, 2, 20) {
            buf.push(t);
        }
        let c = TrainConfig { optimizer: OptimizerKind::ADAM_DEFAULT, lr: 1e-3, ..cfg(LossKind::Fr, 0.2, 5) };
        let mut learner = Learner::new(q, c).unwrap();
        (0..50).map(|k| learner.train_step(&mut buf, k).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

/// Converged FR solution on a fixed batch, with the step scaled by `1/(1+κ)`.
fn fr_limit_distance(kappa: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (d, na) = (4, 2);
    let batch = covering_batch(&mut rng, d, na, 0);
    let mut q = QApproximator::zeros(ApproxKind::Tabular, d, na);
    q.theta_bar = random_params(&mut rng, d * na);
    q.theta = q.theta_bar.clone();
    let c = TrainConfig { lr: 1.0 / (1.0 + kappa), target_period: Some(u64::MAX), ..cfg(LossKind::Fr, kappa, 1) };
    let mut learner = Learner::new(q, c).unwrap();
    for step in 1..5000 {
        learner.step_on_batch(&batch, step).unwrap();
    }
    let q = &learner.q;
    q.theta.iter().zip(&q.theta_bar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[test]
fn large_kappa_pins_q_to_lagging_values() {
    let kappas = [0.1, 1.0, 10.0, 1e3, 1e6];
    let dist: Vec<f64> = kappas.iter().map(|&k| fr_limit_distance(k)).collect();
    for w in dist.windows(2) {
        assert!(w[1] < w[0], "{dist:?}");
    }
    assert!(dist[4] < 1e-5 * dist[0], "{dist:?}");
}

#[test]
fn polyak_mode_averages_after_each_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch = covering_batch(&mut rng, 3, 2, 0);
    let mut q = QApproximator::zeros(ApproxKind::Tabular, 3, 2);
    q.theta = random_params(&mut rng, 6);
    let c = TrainConfig { target_period: None, polyak_tau: Some(0.05), ..cfg(LossKind::Tn, 0.0, 1) };
    let mut learner = Learner::new(q, c).unwrap();
    let bar = learner.q.theta_bar.clone();
    let m = learner.step_on_batch(&batch, 0).unwrap();
    for k in 0..6 {
        let want = 0.05 * learner.q.theta[k] + 0.95 * bar[k];
        assert!((learner.q.theta_bar[k] - want).abs() < 1e-15);
    }
    assert_eq!(m.target_sync_count, 0);
}

#[test]
fn adam_reduces_loss_on_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let q = QApproximator::init(ApproxKind::Mlp1 { hidden: 16 }, 4, 2, &mut rng);
    let batch = covering_batch(&mut rng, 4, 2, 0);
    let c = TrainConfig { optimizer: OptimizerKind::ADAM_DEFAULT, lr: 1e-2, gamma: 0.0, ..cfg(LossKind::Tn, 0.0, 1) };
    let mut learner = Learner::new(q, c).unwrap();
    let first = learner.step_on_batch(&batch, 0).unwrap().loss;
    let mut last = first;
    for step in 1..300 {
        last = learner.step_on_batch(&batch, step).unwrap().loss;
    }
    assert!(last < 0.01 * first, "{first} -> {last}");
}

#[test]
fn config_validation() {
    assert!(cfg(LossKind::Tn, 0.0, 1).validate().is_ok());
    assert!(TrainConfig { polyak_tau: Some(0.1), ..cfg(LossKind::Tn, 0.0, 1) }.validate().is_err());
    assert!(TrainConfig { target_period: None, ..cfg(LossKind::Tn, 0.0, 1) }.validate().is_err());
    assert!(cfg(LossKind::Tn, 0.0, 0).validate().is_err());
    assert!(cfg(LossKind::Fr, -1.0, 1).validate().is_err());
    let mut buf = ReplayBuffer::new(10, 0);
    buf.push(one_hot_transition(2, 0, 0, 0.0, 1, false));
    let mut learner = Learner::new(QApproximator::zeros(ApproxKind::Tabular, 2, 2), cfg(LossKind::Tn, 0.0, 1)).unwrap();
    assert!(learner.train_step(&mut buf, 0).is_err());
}

#[test]
fn metrics_csv_layout() {
    let rows = [StepMetrics { step: 3, loss: 0.5, max_abs_q: 2.0, target_sync_count: 1 }];
    let mut out = Vec::new();
    write_metrics_csv(&rows, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "step,loss,max_abs_q,target_sync_count\n3,0.5,2.0,1\n");
}
