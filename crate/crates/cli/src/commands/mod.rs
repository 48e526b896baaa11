mod constants;
mod factorization;
mod moments;
mod partition;
mod selftest;
mod she;
mod tail;
mod transition;

use std::path::{Path, PathBuf};

use polymer_core::params::ModelParams;
use polymer_core::TransitionKernel;

use crate::config::{ConfigError, RunConfig};
use crate::report::Report;
use crate::RunError;

/// Actions per command; the first is the default.
pub const ACTIONS: &[(&str, &[&str])] = &[
    ("constants", &[""]),
    ("transition", &["mass", "lclt"]),
    ("partition", &["mean-one", "second-moment", "profile", "martingale", "l2-rate", "positivity"]),
    ("moments", &["lambda", "a-cells", "a-bound", "p-ratio", "q-iota", "convolution", "psi"]),
    ("factorization", &[""]),
    ("she", &["fk", "ratio", "integrate"]),
    ("tail", &["empirical", "discrete"]),
    ("selftest", &[""]),
];

pub fn resolve_action(command: &str, action: Option<&str>) -> Result<String, ConfigError> {
    let actions = ACTIONS
        .iter()
        .find(|(c, _)| *c == command)
        .map(|(_, a)| *a)
        .ok_or_else(|| ConfigError::Usage(format!("unknown command `{command}`")))?;
    match action {
        None => Ok(actions[0].to_string()),
        Some(a) if actions.contains(&a) && !a.is_empty() => Ok(a.to_string()),
        Some(a) => Err(ConfigError::Usage(format!(
            "unknown action `{a}` for `{command}`; expected one of: {}",
            actions.join(", ")
        ))),
    }
}

pub fn dispatch(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.command.as_str() {
        "constants" => constants::run(cfg),
        "transition" => transition::run(cfg),
        "partition" => partition::run(cfg),
        "moments" => moments::run(cfg),
        "factorization" => factorization::run(cfg),
        "she" => she::run(cfg),
        "tail" => tail::run(cfg),
        "selftest" => selftest::run(cfg),
        other => Err(ConfigError::Usage(format!("unknown command `{other}`")).into()),
    }
}

/// Model parameters from the config, validated.
pub(crate) fn model_params(cfg: &RunConfig, beta: f64) -> Result<ModelParams, RunError> {
    let p = ModelParams {
        d: cfg.get("d", "3")?,
        beta,
        nu: cfg.get("nu", "0.6")?,
        nu1: cfg.get("nu1", "0.8")?,
        sigma: cfg.get("sigma", "0.6")?,
        xi: cfg.get("xi", "0.2")?,
    };
    p.validate()?;
    Ok(p)
}

pub(crate) fn params_json(p: &ModelParams) -> serde_json::Value {
    serde_json::to_value(p).unwrap_or_default()
}

fn cache_path(spec: &str, d: usize, n_max: usize, radius: usize) -> PathBuf {
    let p = Path::new(spec);
    if spec.ends_with('/') || p.is_dir() {
        p.join(format!("kernel-d{d}-n{n_max}-r{radius}.bin"))
    } else {
        p.to_path_buf()
    }
}

/// The walk kernel, through the cache when one is configured.
pub(crate) fn kernel(cfg: &RunConfig, d: usize, n_max: usize, radius: usize) -> Result<TransitionKernel, RunError> {
    let spec = cfg.raw("kernel_cache", "");
    if spec.is_empty() {
        return Ok(TransitionKernel::build(d, n_max, radius)?);
    }
    let path = cache_path(&spec, d, n_max, radius.min(n_max));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(TransitionKernel::load_or_build(&path, d, n_max, radius)?)
}

pub(crate) fn fmt_site(y: &[i32]) -> String {
    y.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}
