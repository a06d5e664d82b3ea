//! Config files, output directories and run metadata.
//!
//! A config file is TOML with one table per command (`[disk]`, `[analyze]`,
//! ...) whose keys mirror the long flags. A `meta.json` written by an
//! earlier run is accepted too, so a run can be replayed from its record.
//! Flags override the file, the file overrides built-in defaults.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "QREG_OUT";
pub const DEFAULT_OUT_ROOT: &str = "qreg-out";

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or config values: exit code 2.
    Usage(String),
    /// I/O or numerical failure: exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Failure {
        Failure::Usage(msg.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        Failure::Runtime(e)
    }
}

impl From<qreg_core::Error> for Failure {
    fn from(e: qreg_core::Error) -> Failure {
        match e {
            qreg_core::Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other.into()),
        }
    }
}

/// Reads the `command` section of a TOML config or of a `meta.json` record.
/// A missing section yields the type's default.
pub fn load_section<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", path.display())))?;
    let bad = |msg: String| Failure::usage(format!("--config {}: {msg}", path.display()));
    if path.extension().is_some_and(|x| x == "json") {
        let meta: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if meta.get("command").and_then(|c| c.as_str()) != Some(command) {
            return Err(bad(format!("not a record of a `{command}` run")));
        }
        let section = meta.get("config").cloned().unwrap_or_default();
        return serde_json::from_value(section).map_err(|e| bad(e.to_string()));
    }
    let mut table: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    match table.remove(command) {
        None => Ok(T::default()),
        Some(section) => section.try_into().map_err(|e: toml::de::Error| bad(e.to_string())),
    }
}

/// `--out`, else the config's `out`, else `$QREG_OUT/<command>`, else
/// `qreg-out/<command>`.
pub fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>, command: &str) -> PathBuf {
    flag.or(file).unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
        root.join(command)
    })
}

pub fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", dir.display())))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Meta<'a, C: Serialize, X: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<X>,
}

/// Writes `meta.json`: the command, the crate version and the fully
/// resolved config (no timestamps, so reruns are byte-identical).
pub fn write_meta<C: Serialize, X: Serialize>(dir: &Path, command: &str, config: &C, extra: Option<X>) -> Result<(), Failure> {
    let meta = Meta { command, version: env!("CARGO_PKG_VERSION"), config, extra };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Failure::Runtime(e.into()))?;
    write_file(&dir.join("meta.json"), text + "\n")
}

/// Parses `"0.5,1,2.5"`.
pub fn parse_list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    let items: Result<Vec<T>, _> = text.split(',').map(|s| s.trim().parse::<T>()).collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(Failure::usage(format!("--{flag}: expected a comma-separated list, got `{text}`"))),
    }
}

/// `"adaptive"` or a positive step size.
pub fn parse_eta(text: &str) -> Result<Option<f64>, Failure> {
    if text == "adaptive" {
        return Ok(None);
    }
    match text.parse::<f64>() {
        Ok(eta) if eta > 0.0 && eta.is_finite() => Ok(Some(eta)),
        _ => Err(Failure::usage(format!("--eta must be `adaptive` or a positive number, got `{text}`"))),
    }
}

pub fn check_gamma(gamma: f64) -> Result<(), Failure> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Failure::usage(format!("--gamma: gamma must be in (0,1), got {gamma}")))
    }
}

pub fn check_kappa(kappa: f64) -> Result<(), Failure> {
    if kappa >= 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Failure::usage(format!("--kappa: kappa must be finite and >= 0, got {kappa}")))
    }
}

pub fn check_period(period: u64) -> Result<(), Failure> {
    if period >= 1 {
        Ok(())
    } else {
        Err(Failure::usage("--period: period must be at least 1"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Deserialize, Default, Debug, PartialEq)]
    #[serde(deny_unknown_fields)]
    struct Section {
        gamma: Option<f64>,
    }

    #[test]
    fn toml_sections_and_meta_records() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "[disk]\ngamma = 0.5\n[other]\nx = 1\n").unwrap();
        let s: Section = load_section(Some(&toml_path), "disk").unwrap();
        assert_eq!(s.gamma, Some(0.5));
        let s: Section = load_section(Some(&toml_path), "analyze").unwrap();
        assert_eq!(s, Section::default());

        write_meta(dir.path(), "disk", &serde_json::json!({"gamma": 0.25}), None::<()>).unwrap();
        let s: Section = load_section(Some(&dir.path().join("meta.json")), "disk").unwrap();
        assert_eq!(s.gamma, Some(0.25));
        assert!(matches!(load_section::<Section>(Some(&dir.path().join("meta.json")), "verify"), Err(Failure::Usage(_))));

        std::fs::write(&toml_path, "[disk]\ngama = 0.5\n").unwrap();
        assert!(matches!(load_section::<Section>(Some(&toml_path), "disk"), Err(Failure::Usage(_))));
    }

    #[test]
    fn lists_and_eta() {
        assert_eq!(parse_list::<f64>("kappa", "0.5, 1,2.5").unwrap(), vec![0.5, 1.0, 2.5]);
        assert!(parse_list::<u64>("period", "10,x").is_err());
        assert_eq!(parse_eta("adaptive").unwrap(), None);
        assert_eq!(parse_eta("0.3").unwrap(), Some(0.3));
        assert!(parse_eta("-1").is_err());
    }
}
