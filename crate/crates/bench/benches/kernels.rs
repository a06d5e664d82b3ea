use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qreg_core::disk::{sweep, DiskParams};
use qreg_core::fourrooms::{FourRoomsEnv, N_ACTIONS};
use qreg_core::qlearn::{ApproxKind, Learner, LossKind, OptimizerKind, QApproximator, TrainConfig, Transition};
use qreg_core::smallmat::spectrum;
use qreg_core::Matrix;

fn bench_spectrum(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 8, 16] {
        let m = Matrix::new(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        c.bench_function(&format!("spectrum {n}x{n}"), |b| b.iter(|| spectrum(black_box(&m)).unwrap()));
    }
}

fn bench_sweep(c: &mut Criterion) {
    let params = DiskParams::new(0.99, 0.1, 10_000, (32, 64));
    let mut g = c.benchmark_group("disk");
    g.sample_size(10);
    g.bench_function("sweep 32x64", |b| b.iter(|| sweep(black_box(&params)).unwrap()));
    g.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let env = FourRoomsEnv::canonical();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = env.n_states();
    let batch: Vec<Transition> = (0..32)
        .map(|_| {
            let s = rng.random_range(0..n);
            let a = rng.random_range(0..N_ACTIONS);
            let (s_next, r, terminal) = env.step(s, a).unwrap();
            Transition { s: env.encode(s), a, r, s_next: env.encode(s_next), terminal }
        })
        .collect();
    for (label, loss) in [("tn", LossKind::Tn), ("fr", LossKind::Fr)] {
        let cfg = TrainConfig {
            loss,
            kappa: 1.0,
            target_period: Some(250),
            polyak_tau: None,
            lr: 1e-3,
            batch_size: 32,
            total_steps: u64::MAX,
            gamma: 0.99,
            seed: 0,
            optimizer: OptimizerKind::ADAM_DEFAULT,
        };
        let q = QApproximator::init(ApproxKind::Mlp1 { hidden: 64 }, n, N_ACTIONS, &mut rng);
        let mut learner = Learner::new(q, cfg).unwrap();
        let mut step = 0;
        c.bench_function(&format!("train_step mlp1 {label}"), |b| {
            b.iter(|| {
                step += 1;
                learner.step_on_batch(black_box(&batch), step).unwrap()
            })
        });
    }
}

criterion_group!(benches, bench_spectrum, bench_sweep, bench_train_step);
criterion_main!(benches);
