//! Data collection, training and evaluation on Four Rooms.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FourRoomsEnv, N_ACTIONS};
use crate::error::{Error, Result};
use crate::mdp::{argmax, evaluate_policy_exact, value_iteration_exact, Mdp, Policy, QTable};
use crate::qlearn::{
    ApproxKind, Learner, LossKind, OptimizerKind, QApproximator, ReplayBuffer, StateEncoding, TrainConfig, Transition,
    DEFAULT_HIDDEN,
};

/// Random action with probability `epsilon`, else the lowest-index argmax.
pub fn behavior_action(q: &QApproximator, s: &StateEncoding, epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    Ok(epsilon_greedy(&q.q_values(s)?, epsilon, rng))
}

fn epsilon_greedy(values: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..values.len())
    } else {
        argmax(values)
    }
}

/// `Q_θ` on every state.
pub fn q_table_of(env: &FourRoomsEnv, q: &QApproximator) -> Result<QTable> {
    let mut values = Vec::with_capacity(env.n_states() * N_ACTIONS);
    for s in 0..env.n_states() {
        values.extend(q.q_values(&env.encode(s))?);
    }
    QTable::new(env.n_states(), N_ACTIONS, values)
}

/// The environment's MDP with its optimal return from the start state.
#[derive(Clone, Debug)]
pub struct ExactOracle {
    pub mdp: Mdp,
    pub optimal_return: f64,
    pub optimal_q: QTable,
}

impl ExactOracle {
    pub fn new(env: &FourRoomsEnv) -> Result<ExactOracle> {
        let mdp = env.to_mdp()?;
        let (optimal_q, _) = value_iteration_exact(&mdp, 1e-12)?;
        let optimal_return = optimal_q.row(env.start()).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(ExactOracle { mdp, optimal_return, optimal_q })
    }
}

/// Exact `Q^π` of the greedy policy of `q` (lowest-index ties).
pub fn true_q_of_greedy(oracle: &ExactOracle, q_theta: &QTable) -> Result<QTable> {
    let pi = Policy::deterministic(N_ACTIONS, &q_theta.greedy_actions())?;
    evaluate_policy_exact(&oracle.mdp, &pi)
}

/// `max (Q_θ − Q^π)²` over all pairs except those of `skip_state`.
pub fn max_q_error(q_theta: &QTable, q_pi: &QTable, skip_state: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for s in (0..q_theta.n_states()).filter(|&s| s != skip_state) {
        for (a, b) in q_theta.row(s).iter().zip(q_pi.row(s)) {
            let e = (a - b).powi(2);
            // NaN counts as unbounded error.
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub ret: f64,
    pub length: usize,
    pub reached_goal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub eval_step: u64,
    pub avg_regret: f64,
    pub max_q_error: f64,
    pub soft_divergent: bool,
    pub episodes: Vec<EpisodeResult>,
}

/// Rolls out `n_episodes` ε-greedy episodes from the start state and scores
/// them against the optimal return. The goal state's own values are not
/// part of the Q error: no transition leaves the goal, so they are never
/// trained.
pub fn evaluate(
    env: &FourRoomsEnv,
    oracle: &ExactOracle,
    q: &QApproximator,
    n_episodes: usize,
    epsilon_eval: f64,
    rng: &mut impl Rng,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let table = q_table_of(env, q)?;
    let q_pi = true_q_of_greedy(oracle, &table)?;
    let max_err = max_q_error(&table, &q_pi, env.goal());
    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let (mut s, mut ret, mut discount) = (env.start(), 0.0, 1.0);
        let mut result = EpisodeResult { ret: 0.0, length: env.episode_cap(), reached_goal: false };
        for t in 0..env.episode_cap() {
            let a = epsilon_greedy(table.row(s), epsilon_eval, rng);
            let (next, r, done) = env.step(s, a)?;
            ret += discount * r;
            discount *= env.gamma();
            s = next;
            if done {
                result = EpisodeResult { ret, length: t + 1, reached_goal: true };
                break;
            }
        }
        result.ret = ret;
        episodes.push(result);
    }
    let avg_regret = episodes.iter().map(|e| oracle.optimal_return - e.ret).sum::<f64>() / n_episodes as f64;
    Ok(EvalReport { eval_step: 0, avg_regret, max_q_error: max_err, soft_divergent: max_err > 1.0, episodes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub approx: ApproxKind,
    pub epsilon: f64,
    pub episode_cap: usize,
    /// Evaluate after every `eval_every` training steps and after the last.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub eval_epsilon: f64,
    pub replay_capacity: usize,
    /// Environment steps collected before training starts.
    pub learning_starts: usize,
}

impl ExperimentConfig {
    /// One-hidden-layer network (width 64) trained with Adam at its usual
    /// step size 10⁻³, batches of 32, 2·10⁴ steps, evaluated every 10³ steps
    /// on 100 episodes at `ε_eval = 0.1`.
    pub fn baseline(loss: LossKind, kappa: f64, period: u64, epsilon: f64, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig {
                loss,
                kappa,
                target_period: Some(period),
                polyak_tau: None,
                lr: 1e-3,
                batch_size: 32,
                total_steps: 20_000,
                gamma: super::DEFAULT_GAMMA,
                seed,
                optimizer: OptimizerKind::ADAM_DEFAULT,
            },
            approx: ApproxKind::Mlp1 { hidden: DEFAULT_HIDDEN },
            epsilon,
            episode_cap: super::DEFAULT_EPISODE_CAP,
            eval_every: 1_000,
            eval_episodes: 100,
            eval_epsilon: 0.1,
            replay_capacity: 10_000,
            learning_starts: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.eval_epsilon) {
            return Err(Error::invalid("epsilon values must lie in [0, 1]"));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 || self.episode_cap == 0 {
            return Err(Error::invalid("eval_every, eval_episodes and episode_cap must be positive"));
        }
        if self.replay_capacity < self.train.batch_size {
            return Err(Error::invalid("replay capacity is smaller than the batch"));
        }
        Ok(())
    }
}

/// Independent generator for one purpose of one seeded run.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_INIT: u64 = 0;
const STREAM_EXPLORE: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Collects one transition per environment step with the ε-greedy behavior
/// policy and, once `learning_starts` transitions are stored, takes one
/// training step per environment step.
pub fn run_experiment(env: &FourRoomsEnv, cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    let env = env.clone().with_gamma(cfg.train.gamma)?.with_episode_cap(cfg.episode_cap)?;
    let oracle = ExactOracle::new(&env)?;
    let seed = cfg.train.seed;
    let q = QApproximator::init(cfg.approx, env.n_states(), N_ACTIONS, &mut stream(seed, STREAM_INIT));
    let mut learner = Learner::new(q, cfg.train.clone())?;
    let mut explore = stream(seed, STREAM_EXPLORE);
    let mut eval_rng = stream(seed, STREAM_EVAL);
    let mut buf = ReplayBuffer::with_rng(cfg.replay_capacity, stream(seed, STREAM_REPLAY));
    let warmup = cfg.learning_starts.max(cfg.train.batch_size);

    let mut reports = Vec::new();
    let (mut s, mut ep_len, mut step) = (env.start(), 0, 0u64);
    while step < cfg.train.total_steps {
        let enc = env.encode(s);
        let a = behavior_action(&learner.q, &enc, cfg.epsilon, &mut explore)?;
        let (next, r, done) = env.step(s, a)?;
        ep_len += 1;
        buf.push(Transition { s: enc, a, r, s_next: env.encode(next), terminal: done });
        if done || ep_len >= cfg.episode_cap {
            s = env.start();
            ep_len = 0;
        } else {
            s = next;
        }
        if buf.len() < warmup {
            continue;
        }
        learner.train_step(&mut buf, step)?;
        step += 1;
        if step % cfg.eval_every == 0 || step == cfg.train.total_steps {
            let mut report = evaluate(&env, &oracle, &learner.q, cfg.eval_episodes, cfg.eval_epsilon, &mut eval_rng)?;
            report.eval_step = step;
            reports.push(report);
        }
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub agent: String,
    pub epsilon: f64,
    pub kappa: f64,
    pub period: Option<u64>,
    pub seed: u64,
    pub eval_step: u64,
    pub avg_regret: f64,
    pub max_q_error: f64,
    pub soft_divergent: bool,
}

impl ResultRow {
    fn new(cfg: &ExperimentConfig, r: &EvalReport) -> ResultRow {
        ResultRow {
            agent: cfg.train.loss.label().to_string(),
            epsilon: cfg.epsilon,
            kappa: if cfg.train.loss == LossKind::Fr { cfg.train.kappa } else { 0.0 },
            period: cfg.train.target_period,
            seed: cfg.train.seed,
            eval_step: r.eval_step,
            avg_regret: r.avg_regret,
            max_q_error: r.max_q_error,
            soft_divergent: r.soft_divergent,
        }
    }
}

/// Runs every configuration (in parallel on the current rayon pool) and
/// returns their rows in input order.
pub fn run_sweep(env: &FourRoomsEnv, cfgs: &[ExperimentConfig]) -> Result<Vec<ResultRow>> {
    let per_run: Vec<Result<Vec<ResultRow>>> = cfgs
        .par_iter()
        .map(|c| Ok(run_experiment(env, c)?.iter().map(|r| ResultRow::new(c, r)).collect()))
        .collect();
    let mut rows = Vec::new();
    for r in per_run {
        rows.extend(r?);
    }
    Ok(rows)
}

pub fn results_csv_header() -> &'static str {
    "agent,epsilon,kappa,period,seed,eval_step,avg_regret,max_q_error,soft_divergent"
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(results_csv_header().split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
