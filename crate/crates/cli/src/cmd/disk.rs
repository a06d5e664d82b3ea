use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use qreg_core::disk::{compare_domains, render, sweep, DiskParams, EtaRule};

use crate::config::{self, Failure};

#[derive(Args, Debug)]
pub struct DiskArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Discount in (0, 1). Default 0.99.
    #[arg(long)]
    gamma: Option<f64>,
    /// FR regularization weight. Default 0.1.
    #[arg(long)]
    kappa: Option<f64>,
    /// Inner steps per target update. Default 10000.
    #[arg(long)]
    period: Option<u64>,
    /// Radius x angle samples, e.g. 128x256.
    #[arg(long)]
    res: Option<String>,
    /// `adaptive` (per cell and algorithm) or a fixed step size.
    #[arg(long)]
    eta: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DiskFile {
    gamma: Option<f64>,
    kappa: Option<f64>,
    period: Option<u64>,
    res: Option<String>,
    eta: Option<String>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct DiskConfig {
    gamma: f64,
    kappa: f64,
    period: u64,
    res: String,
    eta: String,
}

fn parse_res(text: &str) -> Result<(usize, usize), Failure> {
    let bad = || Failure::usage(format!("--res must look like 128x256, got `{text}`"));
    let (r, a) = text.split_once('x').ok_or_else(bad)?;
    Ok((r.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?))
}

pub fn run(args: DiskArgs) -> Result<(), Failure> {
    let file: DiskFile = config::load_section(args.config.as_deref(), "disk")?;
    let cfg = DiskConfig {
        gamma: args.gamma.or(file.gamma).unwrap_or(0.99),
        kappa: args.kappa.or(file.kappa).unwrap_or(0.1),
        period: args.period.or(file.period).unwrap_or(10_000),
        res: args.res.or(file.res).unwrap_or_else(|| "128x256".into()),
        eta: args.eta.or(file.eta).unwrap_or_else(|| "adaptive".into()),
    };
    config::check_gamma(cfg.gamma)?;
    config::check_kappa(cfg.kappa)?;
    config::check_period(cfg.period)?;
    let mut params = DiskParams::new(cfg.gamma, cfg.kappa, cfg.period, parse_res(&cfg.res)?);
    params.eta = match config::parse_eta(&cfg.eta)? {
        None => EtaRule::Adaptive,
        Some(eta) => EtaRule::Fixed(eta),
    };
    let out = config::out_dir(args.out, file.out, "disk");

    let grid = sweep(&params)?;
    config::create_dir(&out)?;
    render(&grid, &out.join("disk.csv"), Some(&out))?;
    config::write_meta(&out, "disk", &cfg, None::<()>)?;

    let c = compare_domains(&grid);
    println!("cells: {}", grid.cells.len());
    println!("tn_only_diverge: {}", c.tn_only_diverge);
    println!("fr_only_diverge: {}", c.fr_only_diverge);
    println!("both_diverge: {}", c.both);
    println!("neither_diverge: {}", c.neither);
    println!("marginal_excluded: {}", c.excluded);
    println!("wrote {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolution_format() {
        assert_eq!(parse_res("128x256").unwrap(), (128, 256));
        assert!(parse_res("128").is_err());
        assert!(parse_res("ax2").is_err());
    }
}
