use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use qreg_core::fourrooms::{run_sweep, write_results_csv, ExperimentConfig, FourRoomsEnv, ResultRow};
use qreg_core::qlearn::{ApproxKind, LossKind, OptimizerKind};

use crate::config::{self, Failure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Tn,
    Fr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approx {
    Mlp1,
    Linear,
    Tabular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
pub struct FourRoomsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    agent: Option<Agent>,
    /// Behavior-policy epsilons, comma separated. Default 0.5.
    #[arg(long)]
    epsilon: Option<String>,
    /// FR weights, comma separated. Required with `--agent fr`.
    #[arg(long)]
    kappa: Option<String>,
    /// Target update periods, comma separated. Default 250.
    #[arg(long)]
    period: Option<String>,
    /// Number of seeds per cell. Default 10.
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed. Default 0.
    #[arg(long)]
    seed_offset: Option<u64>,
    /// Training steps per run. Default 20000.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, value_enum)]
    approx: Option<Approx>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    episode_cap: Option<usize>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_epsilon: Option<f64>,
    #[arg(long)]
    replay: Option<usize>,
    #[arg(long)]
    learning_starts: Option<usize>,
    /// Layout JSON `{"grid": [...]}`; default is the built-in four rooms.
    #[arg(long)]
    layout: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FourRoomsFile {
    agent: Option<Agent>,
    epsilon: Option<Vec<f64>>,
    kappa: Option<Vec<f64>>,
    period: Option<Vec<u64>>,
    seeds: Option<u64>,
    seed_offset: Option<u64>,
    steps: Option<u64>,
    lr: Option<f64>,
    batch: Option<usize>,
    approx: Option<Approx>,
    hidden: Option<usize>,
    optimizer: Option<Optimizer>,
    gamma: Option<f64>,
    episode_cap: Option<usize>,
    eval_every: Option<u64>,
    eval_episodes: Option<usize>,
    eval_epsilon: Option<f64>,
    replay: Option<usize>,
    learning_starts: Option<usize>,
    layout: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
struct FourRoomsConfig {
    agent: Agent,
    epsilon: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<Vec<f64>>,
    period: Vec<u64>,
    seeds: u64,
    seed_offset: u64,
    steps: u64,
    lr: f64,
    batch: usize,
    approx: Approx,
    hidden: usize,
    optimizer: Optimizer,
    gamma: f64,
    episode_cap: usize,
    eval_every: u64,
    eval_episodes: usize,
    eval_epsilon: f64,
    replay: usize,
    learning_starts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<PathBuf>,
}

#[derive(Serialize)]
struct MetaExtra {
    layout_rows: Vec<String>,
    runs: usize,
}

fn list<T: std::str::FromStr>(flag: &str, arg: Option<String>, file: Option<Vec<T>>) -> Result<Option<Vec<T>>, Failure> {
    match arg {
        Some(text) => config::parse_list(flag, &text).map(Some),
        None => Ok(file),
    }
}

fn resolve(args: FourRoomsArgs, file: FourRoomsFile) -> Result<(FourRoomsConfig, Option<PathBuf>), Failure> {
    let base = ExperimentConfig::baseline(LossKind::Tn, 0.0, 1, 0.5, 0);
    let hidden = match base.approx {
        ApproxKind::Mlp1 { hidden } => hidden,
        _ => unreachable!("baseline uses a network"),
    };
    let agent = args.agent.or(file.agent).ok_or_else(|| Failure::usage("--agent is required (tn or fr)"))?;
    let cfg = FourRoomsConfig {
        agent,
        epsilon: list("epsilon", args.epsilon, file.epsilon)?.unwrap_or_else(|| vec![0.5]),
        kappa: list("kappa", args.kappa, file.kappa)?,
        period: list("period", args.period, file.period)?.unwrap_or_else(|| vec![250]),
        seeds: args.seeds.or(file.seeds).unwrap_or(10),
        seed_offset: args.seed_offset.or(file.seed_offset).unwrap_or(0),
        steps: args.steps.or(file.steps).unwrap_or(base.train.total_steps),
        lr: args.lr.or(file.lr).unwrap_or(base.train.lr),
        batch: args.batch.or(file.batch).unwrap_or(base.train.batch_size),
        approx: args.approx.or(file.approx).unwrap_or(Approx::Mlp1),
        hidden: args.hidden.or(file.hidden).unwrap_or(hidden),
        optimizer: args.optimizer.or(file.optimizer).unwrap_or(Optimizer::Adam),
        gamma: args.gamma.or(file.gamma).unwrap_or(base.train.gamma),
        episode_cap: args.episode_cap.or(file.episode_cap).unwrap_or(base.episode_cap),
        eval_every: args.eval_every.or(file.eval_every).unwrap_or(base.eval_every),
        eval_episodes: args.eval_episodes.or(file.eval_episodes).unwrap_or(base.eval_episodes),
        eval_epsilon: args.eval_epsilon.or(file.eval_epsilon).unwrap_or(base.eval_epsilon),
        replay: args.replay.or(file.replay).unwrap_or(base.replay_capacity),
        learning_starts: args.learning_starts.or(file.learning_starts).unwrap_or(base.learning_starts),
        layout: args.layout.or(file.layout),
    };
    match (cfg.agent, &cfg.kappa) {
        (Agent::Fr, None) => return Err(Failure::usage("--kappa is required with --agent fr")),
        (Agent::Tn, Some(_)) => return Err(Failure::usage("--kappa only applies to --agent fr")),
        _ => {}
    }
    config::check_gamma(cfg.gamma)?;
    cfg.kappa.iter().flatten().try_for_each(|&k| config::check_kappa(k))?;
    cfg.period.iter().try_for_each(|&t| config::check_period(t))?;
    if let Some(e) = cfg.epsilon.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Failure::usage(format!("--epsilon values must lie in [0,1], got {e}")));
    }
    if cfg.seeds == 0 {
        return Err(Failure::usage("--seeds must be at least 1"));
    }
    Ok((cfg, args.out.or(file.out)))
}

fn grid(cfg: &FourRoomsConfig) -> Result<Vec<ExperimentConfig>, Failure> {
    let (loss, kappas) = match cfg.agent {
        Agent::Tn => (LossKind::Tn, vec![0.0]),
        Agent::Fr => (LossKind::Fr, cfg.kappa.clone().unwrap_or_default()),
    };
    let mut runs = Vec::new();
    for &eps in &cfg.epsilon {
        for &kappa in &kappas {
            for &period in &cfg.period {
                for seed in cfg.seed_offset..cfg.seed_offset + cfg.seeds {
                    let mut c = ExperimentConfig::baseline(loss, kappa, period, eps, seed);
                    c.train.total_steps = cfg.steps;
                    c.train.lr = cfg.lr;
                    c.train.batch_size = cfg.batch;
                    c.train.gamma = cfg.gamma;
                    c.train.optimizer = match cfg.optimizer {
                        Optimizer::Adam => OptimizerKind::ADAM_DEFAULT,
                        Optimizer::Sgd => OptimizerKind::Sgd,
                    };
                    c.approx = match cfg.approx {
                        Approx::Mlp1 => ApproxKind::Mlp1 { hidden: cfg.hidden },
                        Approx::Linear => ApproxKind::Linear,
                        Approx::Tabular => ApproxKind::Tabular,
                    };
                    c.episode_cap = cfg.episode_cap;
                    c.eval_every = cfg.eval_every;
                    c.eval_episodes = cfg.eval_episodes;
                    c.eval_epsilon = cfg.eval_epsilon;
                    c.replay_capacity = cfg.replay;
                    c.learning_starts = cfg.learning_starts;
                    c.validate()?;
                    runs.push(c);
                }
            }
        }
    }
    Ok(runs)
}

fn print_summary(rows: &[ResultRow], cfg: &FourRoomsConfig) {
    let last = rows.iter().map(|r| r.eval_step).max().unwrap_or(0);
    println!("{:<5} {:>8} {:>7} {:>7} {:>12} {:>10}", "agent", "epsilon", "kappa", "period", "final_regret", "soft_frac");
    let key = |r: &ResultRow| (r.epsilon, r.kappa, r.period);
    let mut start = 0;
    while start < rows.len() {
        let len = rows[start..].iter().take_while(|r| key(r) == key(&rows[start])).count();
        let chunk = &rows[start..start + len];
        start += len;
        let finals: Vec<f64> = chunk.iter().filter(|r| r.eval_step == last).map(|r| r.avg_regret).collect();
        let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
        let soft = chunk.iter().filter(|r| r.soft_divergent).count() as f64 / chunk.len() as f64;
        let r = &chunk[0];
        let period = r.period.map_or("-".to_string(), |p| p.to_string());
        println!("{:<5} {:>8} {:>7} {:>7} {:>12.4} {:>10.3}", r.agent, r.epsilon, r.kappa, period, mean, soft);
    }
    println!("runs: {}", cfg.epsilon.len() * cfg.kappa.as_ref().map_or(1, Vec::len) * cfg.period.len() * cfg.seeds as usize);
}

pub fn run(args: FourRoomsArgs) -> Result<(), Failure> {
    let file: FourRoomsFile = config::load_section(args.config.as_deref(), "fourrooms")?;
    let (cfg, out_flag) = resolve(args, file)?;
    let env = match &cfg.layout {
        Some(path) => FourRoomsEnv::load(path)?,
        None => FourRoomsEnv::canonical(),
    }
    .with_gamma(cfg.gamma)?
    .with_episode_cap(cfg.episode_cap)?;
    let runs = grid(&cfg)?;
    let out = config::out_dir(out_flag, None, "fourrooms");

    let rows = run_sweep(&env, &runs)?;
    config::create_dir(&out)?;
    let mut csv = Vec::new();
    write_results_csv(&rows, &mut csv)?;
    config::write_file(&out.join("results.csv"), csv)?;
    let extra = MetaExtra { layout_rows: env.layout_rows(), runs: runs.len() };
    config::write_meta(&out, "fourrooms", &cfg, Some(extra))?;
    print_summary(&rows, &cfg);
    println!("wrote {}", out.display());
    Ok(())
}
