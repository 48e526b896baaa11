//! Flat `key = value` configuration with precedence CLI > file > defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// Environment variable naming the default kernel cache directory.
pub const CACHE_DIR_ENV: &str = "POLYMER_CACHE_DIR";

/// Every key a config file or `--set` may name.
pub const KEYS: &[(&str, &str)] = &[
    ("d", "lattice dimension"),
    ("beta", "inverse temperature; comma list where a scan is run"),
    ("nu", "window exponent in (1/2, 1)"),
    ("nu1", "exponent in (1/nu - 1, 1)"),
    ("sigma", "sub-ballistic exponent in (0, 1)"),
    ("xi", "ratio window exponent"),
    ("t", "time or comma list of times"),
    ("seed", "run seed"),
    ("n_env", "number of environments"),
    ("n_paths", "paths per environment"),
    ("n_pairs", "walk pairs for pair Monte Carlo"),
    ("n_samples", "Monte Carlo samples"),
    ("n_max", "kernel step cutoff"),
    ("radius", "kernel or box radius"),
    ("tolerance", "numerical tolerance"),
    ("workers", "worker threads (0 = all cores)"),
    ("out", "output directory"),
    ("kernel_cache", "kernel cache file"),
    ("plot_data", "also write long-format plot CSVs"),
    ("laplacian", "walk or graph"),
    ("timing", "record wall times (false gives byte-identical reports)"),
    ("dt", "time step"),
    ("box", "periodic box radius"),
    ("y", "endpoint, comma separated coordinates"),
    ("l", "gap count grid"),
    ("r", "factor count grid"),
    ("r_max", "largest factor count"),
    ("u", "tail grid"),
    ("lazy_n", "laziness parameter N or list"),
    ("quad_points", "Gauss-Legendre nodes per axis"),
    ("horizon_mult", "horizon multiplier of the L2 rate probe"),
    ("eps", "thresholds of the positivity probe"),
    ("method", "lattice or mc"),
    ("checkpoint", "SHE checkpoint path"),
    ("checkpoints", "SHE ratio checkpoint times"),
    ("y_radius", "1-norm radius of the endpoint set"),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}:{line}: {msg}")]
    File { path: String, line: usize, msg: String },
    #[error("{origin}: key `{key}`: {msg}")]
    Value { origin: String, key: String, msg: String },
    #[error("cannot read config {path}: {err}")]
    Io { path: String, err: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    Env(&'static str),
    File { path: String, line: usize },
    Cli,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::Env(v) => write!(f, "${v}"),
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Cli => write!(f, "command line"),
        }
    }
}

#[derive(Debug, Clone)]
struct Setting {
    value: String,
    origin: Origin,
}

/// Resolved settings. Lookups record the value they used, so the echo in
/// the report lists exactly the configuration a run depended on.
#[derive(Debug)]
pub struct RunConfig {
    pub command: String,
    pub action: String,
    given: BTreeMap<String, Setting>,
    used: std::sync::Mutex<BTreeMap<String, String>>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

pub fn parse_file(path: &Path) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|err| ConfigError::Io { path: path.display().to_string(), err })?;
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ConfigError::File { path: path.display().to_string(), line: i + 1, msg };
        let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if !known(&k) {
            return Err(err(format!("unknown key `{k}`")));
        }
        if let Some((_, _, first)) = out.iter().find(|(key, _, _)| *key == k) {
            return Err(err(format!("duplicate key `{k}` (first set on line {first})")));
        }
        out.push((k, v, i + 1));
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        action: &str,
        file: Option<&Path>,
        cli: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut given = BTreeMap::new();
        if let Ok(dir) = std::env::var(CACHE_DIR_ENV) {
            if !dir.is_empty() {
                given.insert(
                    "kernel_cache".to_string(),
                    Setting { value: format!("{dir}/"), origin: Origin::Env(CACHE_DIR_ENV) },
                );
            }
        }
        if let Some(path) = file {
            for (k, v, line) in parse_file(path)? {
                given.insert(k, Setting { value: v, origin: Origin::File { path: path.display().to_string(), line } });
            }
        }
        for (k, v) in cli {
            if !known(k) {
                return Err(ConfigError::Usage(format!("unknown key `{k}` (see `polymer schema` for the key list)")));
            }
            given.insert(k.clone(), Setting { value: v.clone(), origin: Origin::Cli });
        }
        Ok(RunConfig { command: command.to_string(), action: action.to_string(), given, used: Default::default() })
    }

    /// Origin of a key (default when unset).
    pub fn origin(&self, key: &str) -> Origin {
        self.given.get(key).map(|s| s.origin.clone()).unwrap_or(Origin::Default)
    }

    pub fn raw(&self, key: &str, default: &str) -> String {
        debug_assert!(known(key), "unregistered key {key}");
        let v = self.given.get(key).map(|s| s.value.clone()).unwrap_or_else(|| default.to_string());
        self.used.lock().unwrap().insert(key.to_string(), v.clone());
        v
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.given.contains_key(key)
    }

    fn err(&self, key: &str, msg: String) -> ConfigError {
        ConfigError::Value { origin: self.origin(key).to_string(), key: key.to_string(), msg }
    }

    pub fn get<T: FromStr>(&self, key: &str, default: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(key, default);
        v.parse::<T>().map_err(|e| self.err(key, format!("cannot parse `{v}`: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self.raw(key, default);
        v.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| self.err(key, format!("cannot parse `{s}` in `{v}`: {e}"))))
            .collect()
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        let v = self.raw(key, if default { "true" } else { "false" });
        match v.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(self.err(key, format!("expected a boolean, found `{v}`"))),
        }
    }

    /// Checks a derived condition and reports it against `key`.
    pub fn require(&self, key: &str, ok: bool, msg: &str) -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(self.err(key, msg.to_string()))
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out", "polymer-out"))
    }

    /// Keys consulted so far with the values used.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.used.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_cli_over_file_over_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nbeta = 0.3\nseed = 9 # trailing\n").unwrap();
        let cli = vec![("seed".to_string(), "4".to_string())];
        let cfg = RunConfig::resolve("partition", "mean-one", Some(&path), &cli).unwrap();
        assert_eq!(cfg.get::<f64>("beta", "0.2").unwrap(), 0.3);
        assert_eq!(cfg.get::<u64>("seed", "1").unwrap(), 4);
        assert_eq!(cfg.get::<usize>("d", "3").unwrap(), 3);
        assert_eq!(cfg.echo().len(), 3);
    }

    #[test]
    fn errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "beta = 0.2\nbogus = 1\n").unwrap();
        let e = RunConfig::resolve("x", "", Some(&path), &[]).unwrap_err().to_string();
        assert!(e.contains(":2:") && e.contains("bogus"), "{e}");
        std::fs::write(&path, "beta = abc\n").unwrap();
        let cfg = RunConfig::resolve("x", "", Some(&path), &[]).unwrap();
        let e = cfg.get::<f64>("beta", "0.2").unwrap_err().to_string();
        assert!(e.contains("bad.cfg:1") && e.contains("beta"), "{e}");
    }
}
