use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use qreg_core::disk::build_two_state_mdp;
use qreg_core::linear_fa::{
    adaptive_eta, classify, classify_matrix, fr_inner_fixed_point, fr_limit_matrix, k_lower_bound, td_fixed_point,
    tn_inner_fixed_point, tn_limit_matrix, Algorithm, IterationSpec, LinearFaProblem, MatrixKind, SpectralReport,
};
use qreg_core::smallmat::solve;
use qreg_core::{Error, Matrix, Mdp, Policy};

use crate::config::{self, Failure};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write report.json and meta.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Built-in instance: `two-state`.
    #[arg(long, conflicts_with = "fixture")]
    instance: Option<String>,
    /// JSON file `{mdp, policy?, phi, dist}`; policy defaults to uniform.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Sampling weight of the first state (two-state instance).
    #[arg(long)]
    d0: Option<f64>,
    /// The single feature column, e.g. `1,-2` (two-state instance).
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    /// Discount of the two-state instance. Default 0.99.
    #[arg(long)]
    gamma: Option<f64>,
    /// `adaptive` or a fixed step size.
    #[arg(long)]
    eta: Option<String>,
    /// Default 10000.
    #[arg(long)]
    period: Option<u64>,
    /// Default 0.1.
    #[arg(long)]
    kappa: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AnalyzeFile {
    instance: Option<String>,
    fixture: Option<PathBuf>,
    d0: Option<f64>,
    phi: Option<String>,
    gamma: Option<f64>,
    eta: Option<String>,
    period: Option<u64>,
    kappa: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct AnalyzeConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    instance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fixture: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    eta: String,
    period: u64,
    kappa: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fixture {
    mdp: Mdp,
    policy: Option<Policy>,
    phi: Matrix,
    dist: Vec<f64>,
}

#[derive(Serialize)]
pub struct AlgorithmReport {
    pub algorithm: &'static str,
    pub eta: f64,
    /// Inner steps per outer step: 1 for TD, the period otherwise.
    pub inner_steps: u64,
    pub kappa: f64,
    pub report: SpectralReport,
    /// `ρ^(1/inner_steps)`: contraction per inner step.
    pub per_step_radius: f64,
}

#[derive(Serialize)]
pub struct BiasResiduals {
    pub tn: f64,
    pub fr: f64,
}

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub n_features: usize,
    pub n_pairs: usize,
    pub gamma: f64,
    pub algorithms: Vec<AlgorithmReport>,
    pub tn_limit: SpectralReport,
    pub fr_limit: Option<SpectralReport>,
    pub td_fixed_point: Option<Vec<f64>>,
    /// Residuals of the inner fixed-point identities at `w̄ = w* + 1`.
    pub bias_identity_residuals: Option<BiasResiduals>,
    pub k_lower_bound: Option<u64>,
    pub notes: Vec<String>,
}

fn fixture_error(path: &Path, text: &str, e: &serde_json::Error) -> Failure {
    let line = text.lines().nth(e.line().saturating_sub(1)).unwrap_or("");
    let caret = " ".repeat(e.column().saturating_sub(1));
    Failure::usage(format!("--fixture {}:{}:{}: {e}\n    {line}\n    {caret}^", path.display(), e.line(), e.column()))
}

fn load_fixture(path: &Path) -> Result<LinearFaProblem, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    let f: Fixture = serde_json::from_str(&text).map_err(|e| fixture_error(path, &text, &e))?;
    let policy = f.policy.unwrap_or_else(|| Policy::uniform(f.mdp.n_states(), f.mdp.n_actions()));
    Ok(LinearFaProblem::from_mdp(&f.mdp, &policy, f.phi, f.dist)?)
}

fn two_state(cfg: &AnalyzeConfig) -> Result<LinearFaProblem, Failure> {
    let gamma = cfg.gamma.unwrap_or(0.99);
    config::check_gamma(gamma)?;
    let d0 = cfg.d0.ok_or_else(|| Failure::usage("--d0 is required with --instance two-state"))?;
    if !(d0 > 0.0 && d0 < 1.0) {
        return Err(Failure::usage(format!("--d0 must be in (0,1), got {d0}")));
    }
    let phi_text = cfg.phi.as_deref().ok_or_else(|| Failure::usage("--phi is required with --instance two-state"))?;
    let phi: Vec<f64> = config::parse_list("phi", phi_text)?;
    if phi.len() != 2 {
        return Err(Failure::usage(format!("--phi needs one value per state (2), got {}", phi.len())));
    }
    let mdp = build_two_state_mdp(gamma)?;
    Ok(LinearFaProblem::from_mdp(&mdp, &Policy::uniform(2, 1), Matrix::column(&phi)?, vec![d0, 1.0 - d0])?)
}

/// All reports for one problem. Matrices that turn out singular are
/// reported as missing with a note instead of failing the run.
pub fn analyze(p: &LinearFaProblem, eta: Option<f64>, period: u64, kappa: f64) -> Result<AnalyzeReport, Error> {
    let mut notes = Vec::new();
    let mut algorithms = Vec::new();
    let mut tn_eta = None;
    for algorithm in [Algorithm::Td0, Algorithm::Tn, Algorithm::Fr] {
        let k = if algorithm == Algorithm::Fr { kappa } else { 0.0 };
        let eta = match eta {
            Some(e) => e,
            None => adaptive_eta(p, algorithm, k)?,
        };
        let inner = if algorithm == Algorithm::Td0 { 1 } else { period };
        let report = classify(p, &IterationSpec::new(algorithm, eta, inner, k)?)?;
        let per_step_radius = report.radius().powf(1.0 / inner as f64);
        if algorithm == Algorithm::Tn {
            tn_eta = Some(eta);
        }
        algorithms.push(AlgorithmReport { algorithm: algorithm.label(), eta, inner_steps: inner, kappa: k, report, per_step_radius });
    }
    let tn_limit = classify_matrix(MatrixKind::TnLimit, &tn_limit_matrix(p))?;
    let fr_limit = match fr_limit_matrix(p, kappa) {
        Ok(m) => Some(classify_matrix(MatrixKind::FrLimit, &m)?),
        Err(e) => {
            notes.push(format!("fr limit: {e}"));
            None
        }
    };
    let (fixed, bias) = match td_fixed_point(p) {
        Ok(w_star) => {
            let wbar: Vec<f64> = w_star.iter().map(|x| x + 1.0).collect();
            let dev = vec![1.0; w_star.len()];
            let bias = (|| -> Result<BiasResiduals, Error> {
                let tn = tn_inner_fixed_point(p, &wbar)?;
                let ups = p.upsilon().mul_vec(&dev)?;
                let fr = fr_inner_fixed_point(p, kappa, &wbar)?;
                let rhs = solve(&p.a_kappa(kappa), &p.gram().mul_vec(&dev)?)?;
                let res = |got: &[f64], scale: f64, v: &[f64]| {
                    (0..v.len()).map(|i| (got[i] - w_star[i] - scale * v[i]).abs()).fold(0.0, f64::max)
                };
                Ok(BiasResiduals { tn: res(&tn, p.gamma(), &ups), fr: res(&fr, kappa, &rhs) })
            })();
            let bias = bias.map_err(|e| notes.push(format!("bias identities: {e}"))).ok();
            (Some(w_star), bias)
        }
        Err(e) => {
            notes.push(format!("td fixed point: {e}"));
            (None, None)
        }
    };
    let k_bound = match k_lower_bound(p, tn_eta.expect("tn is always analyzed")) {
        Ok(k) => Some(k),
        Err(e) => {
            notes.push(format!("k lower bound: {e}"));
            None
        }
    };
    Ok(AnalyzeReport {
        n_features: p.n_features(),
        n_pairs: p.n_pairs(),
        gamma: p.gamma(),
        algorithms,
        tn_limit,
        fr_limit,
        td_fixed_point: fixed,
        bias_identity_residuals: bias,
        k_lower_bound: k_bound,
        notes,
    })
}

fn print_text(r: &AnalyzeReport, kappa: f64) {
    println!("features: {}  state-action pairs: {}  gamma: {}", r.n_features, r.n_pairs, r.gamma);
    println!("{:<4} {:>12} {:>7} {:>6} {:>14} {:>14}  class", "alg", "eta", "inner", "kappa", "radius", "per-step");
    for a in &r.algorithms {
        println!(
            "{:<4} {:>12.6e} {:>7} {:>6} {:>14.6e} {:>14.10}  {}",
            a.algorithm,
            a.eta,
            a.inner_steps,
            a.kappa,
            a.report.radius(),
            a.per_step_radius,
            a.report.classification.label()
        );
    }
    println!("tn limit (gamma*Upsilon): radius {:.6} {}", r.tn_limit.radius(), r.tn_limit.classification.label());
    match &r.fr_limit {
        Some(f) => println!("fr limit (kappa={kappa}): radius {:.6} {}", f.radius(), f.classification.label()),
        None => println!("fr limit (kappa={kappa}): unavailable"),
    }
    if let Some(w) = &r.td_fixed_point {
        println!("td fixed point: {w:?}");
    }
    if let Some(b) = &r.bias_identity_residuals {
        println!("bias identity residuals: tn {:.3e} fr {:.3e}", b.tn, b.fr);
    }
    match r.k_lower_bound {
        Some(k) => println!("k lower bound: {k}"),
        None => println!("k lower bound: inapplicable"),
    }
    for n in &r.notes {
        println!("note: {n}");
    }
}

pub fn run(args: AnalyzeArgs) -> Result<(), Failure> {
    let file: AnalyzeFile = config::load_section(args.config.as_deref(), "analyze")?;
    let fixture = args.fixture.or(file.fixture);
    let instance = args.instance.or(file.instance);
    let cfg = AnalyzeConfig {
        instance: instance.clone(),
        fixture: fixture.clone(),
        d0: args.d0.or(file.d0),
        phi: args.phi.or(file.phi),
        gamma: args.gamma.or(file.gamma),
        eta: args.eta.or(file.eta).unwrap_or_else(|| "adaptive".into()),
        period: args.period.or(file.period).unwrap_or(10_000),
        kappa: args.kappa.or(file.kappa).unwrap_or(0.1),
    };
    config::check_kappa(cfg.kappa)?;
    config::check_period(cfg.period)?;
    let eta = config::parse_eta(&cfg.eta)?;
    let problem = match (&instance, &fixture) {
        (Some(_), Some(_)) => return Err(Failure::usage("--instance and --fixture are exclusive")),
        (Some(name), None) if name == "two-state" => two_state(&cfg)?,
        (Some(name), None) => return Err(Failure::usage(format!("--instance: unknown instance `{name}` (known: two-state)"))),
        (None, Some(path)) => load_fixture(path)?,
        (None, None) => return Err(Failure::usage("one of --instance or --fixture is required")),
    };
    let report = analyze(&problem, eta, cfg.period, cfg.kappa)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))? + "\n";
    if args.json {
        print!("{json}");
    } else {
        print_text(&report, cfg.kappa);
    }
    if let Some(out) = args.out.or(file.out) {
        config::create_dir(&out)?;
        config::write_file(&out.join("report.json"), &json)?;
        config::write_meta(&out, "analyze", &cfg, None::<()>)?;
    }
    Ok(())
}
