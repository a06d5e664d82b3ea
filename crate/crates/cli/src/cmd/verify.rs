use std::path::PathBuf;

use clap::Args;
use serde::Deserialize;

use qreg_core::verify::SUITES;

use crate::config::{self, Failure};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only suites whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
    /// Instances per suite (default: each suite's own count).
    #[arg(long)]
    n: Option<usize>,
    /// Base seed (default: each suite's own seed).
    #[arg(long)]
    seed: Option<u64>,
    /// List the suites and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct VerifyFile {
    filter: Option<String>,
    n: Option<usize>,
    seed: Option<u64>,
}

/// Failure messages printed per failing suite.
const SHOW_FAILURES: usize = 5;

pub fn run(args: VerifyArgs) -> Result<(), Failure> {
    let file: VerifyFile = config::load_section(args.config.as_deref(), "verify")?;
    if args.list {
        for s in SUITES {
            println!("{:<20} n={:<5} {}", s.name, s.default_n, s.description);
        }
        return Ok(());
    }
    let filter = args.filter.or(file.filter);
    let n = args.n.or(file.n);
    let seed = args.seed.or(file.seed);
    if n == Some(0) {
        return Err(Failure::usage("--n must be at least 1"));
    }
    let selected: Vec<_> = SUITES.iter().filter(|s| filter.as_deref().map_or(true, |f| s.name.contains(f))).collect();
    if selected.is_empty() {
        let names: Vec<_> = SUITES.iter().map(|s| s.name).collect();
        return Err(Failure::usage(format!("--filter matches no suite (known: {})", names.join(", "))));
    }
    println!("{:<20} {:>8} {:>9} {:>9}  status", "suite", "checked", "excluded", "failures");
    let mut failed = Vec::new();
    for s in selected {
        let outcome = (s.run)(n.unwrap_or(s.default_n), seed.unwrap_or(s.seed))?;
        let status = if outcome.passed() { "PASS" } else { "FAIL" };
        println!("{:<20} {:>8} {:>9} {:>9}  {status}", s.name, outcome.checked, outcome.excluded, outcome.failures.len());
        if !outcome.passed() {
            for f in outcome.failures.iter().take(SHOW_FAILURES) {
                println!("    {f}");
            }
            failed.push(s.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("failing invariants: {}", failed.join(", "))))
    }
}
