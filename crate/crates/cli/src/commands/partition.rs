use polymer_core::params::weak_disorder_threshold;
use polymer_core::partition::{
    collision_mc, l2_rate_probe, martingale_check, mean_forward, positivity_probe, second_moment_limit,
    second_moment_mc, second_moment_oracle, second_moment_profile,
};
use polymer_core::walk::alpha_d_streaming;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, PlotData, Report, Table};
use crate::RunError;

/// Relative slack of the second-moment triangle, on top of 3σ.
pub const TRIANGLE_SLACK: f64 = 1e-2;
/// Growth per doubling of t at the end of the profile that counts as
/// visible divergence.
pub const DIVERGENCE_GROWTH: f64 = 0.1;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.action.as_str() {
        "mean-one" => mean_one(cfg),
        "second-moment" => second_moment(cfg),
        "profile" => profile(cfg),
        "martingale" => martingale(cfg),
        "l2-rate" => l2_rate(cfg),
        _ => positivity(cfg),
    }
}

fn mean_one(cfg: &RunConfig) -> Result<Report, RunError> {
    let betas: Vec<f64> = cfg.list("beta", "0.1,0.3")?;
    let ts: Vec<f64> = cfg.list("t", "1,5,10")?;
    let n_env: usize = cfg.get("n_env", "10000")?;
    let n_paths: usize = cfg.get("n_paths", "100")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let mut rep = Report::new(cfg, seed)?;
    let mut table = Table::new(&["beta", "t", "mean", "stderr", "n_env", "n_paths", "z_score"]);
    for &beta in &betas {
        let p = super::model_params(cfg, beta)?;
        for &t in &ts {
            rep.lap();
            let est = mean_forward(&p, t, n_env, n_paths, seed);
            let lap = rep.lap();
            let z = (est.mean - 1.0) / est.stderr;
            rep.record("mean_Z", json!({"beta": beta, "t": t, "d": p.d}), est.mean, est.stderr, est.n_samples, lap);
            rep.check(Check::new(
                format!("mean_one beta={beta} t={t}"),
                est.within(1.0, 3.0, 0.0),
                (est.mean - 1.0).abs(),
                3.0 * est.stderr,
                "|<Z> - 1| <= 3 stderr",
            ));
            table.push(vec![
                num(beta),
                num(t),
                num(est.mean),
                num(est.stderr),
                n_env.to_string(),
                n_paths.to_string(),
                num(z),
            ]);
        }
    }
    rep.write_csv("", &table)?;
    Ok(rep)
}

fn second_moment(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let ts: Vec<f64> = cfg.list("t", "1,2,5")?;
    let box_radius: usize = cfg.get("box", "12")?;
    let n_env: usize = cfg.get("n_env", "20000")?;
    let n_paths: usize = cfg.get("n_paths", "50")?;
    let n_pairs: usize = cfg.get("n_pairs", "200000")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let mut rep = Report::new(cfg, seed)?;
    let mut table = Table::new(&["t", "oracle", "oracle_err", "mc", "mc_stderr", "pair", "pair_stderr"]);
    let mut plot = PlotData::default();
    for &t in &ts {
        rep.lap();
        let oracle = second_moment_oracle(&p, t, box_radius)?;
        let lap = rep.lap();
        rep.record(
            "second_moment_oracle",
            json!({"beta": beta, "t": t, "box": box_radius}),
            oracle.value,
            oracle.truncation_error,
            0,
            lap,
        );
        let mc = second_moment_mc(&p, t, n_env, n_paths, seed);
        let lap = rep.lap();
        rep.record("second_moment_mc", json!({"beta": beta, "t": t}), mc.mean, mc.stderr, mc.n_samples, lap);
        let pair = collision_mc(&p, t, n_pairs, seed);
        let lap = rep.lap();
        rep.record("second_moment_pair", json!({"beta": beta, "t": t}), pair.mean, pair.stderr, pair.n_samples, lap);
        let slack = TRIANGLE_SLACK * oracle.value;
        rep.check(Check::new(
            format!("mc_vs_oracle t={t}"),
            mc.within(oracle.value, 3.0, slack),
            (mc.mean - oracle.value).abs(),
            3.0 * mc.stderr + slack,
            "|MC - oracle| <= 3 sigma + 1e-2 oracle",
        ));
        rep.check(Check::new(
            format!("pair_vs_oracle t={t}"),
            pair.within(oracle.value, 3.0, slack),
            (pair.mean - oracle.value).abs(),
            3.0 * pair.stderr + slack,
            "|pair MC - oracle| <= 3 sigma + 1e-2 oracle",
        ));
        plot.push("oracle", t, oracle.value, oracle.truncation_error);
        plot.push("mc", t, mc.mean, mc.stderr);
        plot.push("pair", t, pair.mean, pair.stderr);
        table.push(vec![
            num(t),
            num(oracle.value),
            num(oracle.truncation_error),
            num(mc.mean),
            num(mc.stderr),
            num(pair.mean),
            num(pair.stderr),
        ]);
    }
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

/// Entries of the form `1.2*` are multiples of β*.
fn betas_with_star(cfg: &RunConfig, beta_star: f64) -> Result<Vec<(String, f64)>, RunError> {
    let raw: Vec<String> = cfg.list("beta", "0.5*,1.2*")?;
    raw.into_iter()
        .map(|s| {
            let v = match s.strip_suffix('*') {
                Some(m) => m.parse::<f64>().map(|m| m * beta_star),
                None => s.parse::<f64>(),
            };
            v.map(|v| (s.clone(), v)).map_err(|e| {
                crate::config::ConfigError::Value {
                    origin: cfg.origin("beta").to_string(),
                    key: "beta".into(),
                    msg: format!("cannot parse `{s}`: {e}"),
                }
                .into()
            })
        })
        .collect()
}

fn profile(cfg: &RunConfig) -> Result<Report, RunError> {
    let d: usize = cfg.get("d", "3")?;
    let ts: Vec<f64> = cfg.list("t", "1,2,5,10,20,40,80")?;
    let box_radius: usize = cfg.get("box", "40")?;
    let mut rep = Report::new(cfg, 0)?;
    let alpha = alpha_d_streaming(d, 300, 0.05)?;
    let (lo, hi) = alpha.interval();
    let th = weak_disorder_threshold(alpha.value, lo, hi);
    let betas = betas_with_star(cfg, th.value)?;
    let mut table = Table::new(&["beta", "t", "second_moment"]);
    let mut plot = PlotData::default();
    let mut detail = Vec::new();
    for (label, beta) in betas {
        let p = super::model_params(cfg, beta)?;
        rep.lap();
        let v = second_moment_profile(&p, &ts, box_radius)?;
        let lap = rep.lap();
        for (t, x) in ts.iter().zip(&v) {
            table.push(vec![num(beta), num(*t), num(*x)]);
            plot.push(format!("beta={beta}"), *t, *x, 0.0);
        }
        let limit = second_moment_limit(beta, alpha.value);
        let last = *v.last().unwrap_or(&f64::NAN);
        rep.record(
            "second_moment_profile_end",
            json!({"beta": beta, "t": ts.last(), "box": box_radius}),
            last,
            0.0,
            0,
            lap,
        );
        let n = ts.len();
        // Growth per doubling over the last stretch of the profile.
        let growth = if n >= 2 {
            let (t0, t1) = (ts[n - 2], ts[n - 1]);
            (v[n - 1] / v[n - 2]).powf(std::f64::consts::LN_2 / (t1 / t0).ln()) - 1.0
        } else {
            f64::NAN
        };
        if beta < th.value {
            rep.check(Check::new(
                format!("plateau beta={label}"),
                limit.is_finite() && last <= limit * (1.0 + 1e-9) && growth < DIVERGENCE_GROWTH,
                last,
                limit,
                "below beta*: the profile stays under its finite t -> infinity limit",
            ));
        } else {
            rep.check(Check::new(
                format!("divergence beta={label}"),
                growth >= DIVERGENCE_GROWTH,
                growth,
                DIVERGENCE_GROWTH,
                format!(
                    "above beta*: growth per doubling of t at the end of the profile (t -> infinity limit {limit})"
                ),
            ));
        }
        detail.push(json!({"label": label, "beta": beta, "profile": v, "limit": limit, "growth_per_doubling": growth}));
    }
    rep.detail = json!({"beta_star": th, "alpha": alpha.value, "betas": detail});
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

fn martingale(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let t: f64 = cfg.get("t", "2")?;
    let delta: f64 = cfg.get("dt", "1")?;
    let n_env: usize = cfg.get("n_env", "4000")?;
    let n_paths: usize = cfg.get("n_paths", "50")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let mut rep = Report::new(cfg, seed)?;
    let m = martingale_check(&p, t, delta, n_env, n_paths, seed);
    let lap = rep.lap();
    rep.record(
        "cov_Z_increment",
        json!({"beta": beta, "t": t, "delta": delta}),
        m.covariance,
        m.stderr,
        n_env as u64,
        lap,
    );
    rep.check(Check::new(
        "martingale_increment_uncorrelated",
        m.covariance.abs() <= 3.0 * m.stderr,
        m.covariance.abs(),
        3.0 * m.stderr,
        "Cov(Z^t, Z^{t+delta} - Z^t) within 3 stderr of 0",
    ));
    rep.detail = json!(m);
    Ok(rep)
}

fn l2_rate(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let ts: Vec<f64> = cfg.list("t", "2,4,8,16")?;
    let mult: f64 = cfg.get("horizon_mult", "2")?;
    let n_env: usize = cfg.get("n_env", "2000")?;
    let n_paths: usize = cfg.get("n_paths", "50")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let mut rep = Report::new(cfg, seed)?;
    let table_out = l2_rate_probe(&p, &ts, mult, n_env, n_paths, seed)?;
    let lap = rep.lap();
    let mut table = Table::new(&["t", "mean", "stderr"]);
    let mut plot = PlotData::default();
    for r in &table_out.rows {
        table.push(vec![num(r.t), num(r.mean), num(r.stderr)]);
        plot.push("l2_increment", r.t, r.mean, r.stderr);
    }
    rep.record(
        "l2_theta",
        json!({"beta": beta, "horizon_mult": mult}),
        table_out.theta,
        table_out.theta_stderr,
        n_env as u64,
        lap,
    );
    rep.check(Check::new(
        "l2_rate_positive",
        table_out.theta_positive_95,
        table_out.theta,
        1.645 * table_out.theta_stderr,
        "fitted decay exponent positive at 95%",
    ));
    rep.detail = json!(table_out);
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

fn positivity(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let ts: Vec<f64> = cfg.list("t", "1,2,4,8")?;
    let eps: Vec<f64> = cfg.list("eps", "0.5,0.25,0.1")?;
    let n_env: usize = cfg.get("n_env", "2000")?;
    let n_paths: usize = cfg.get("n_paths", "50")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let mut rep = Report::new(cfg, seed)?;
    let out = positivity_probe(&p, &ts, &eps, n_env, n_paths, seed)?;
    let lap = rep.lap();
    let mut table = Table::new(&["eps", "prob_below"]);
    for (e, pb) in out.eps_grid.iter().zip(&out.prob_below) {
        let se = (pb * (1.0 - pb) / n_env as f64).sqrt();
        rep.record("prob_min_Z_below", json!({"beta": beta, "eps": e}), *pb, se, n_env as u64, lap);
        table.push(vec![num(*e), num(*pb)]);
    }
    rep.check(Check::new("all_positive", out.all_positive, 0.0, 0.0, "every estimate of Z^t is strictly positive"));
    rep.detail = json!({"t_grid": out.t_grid, "eps_grid": out.eps_grid, "prob_below": out.prob_below});
    rep.write_csv("", &table)?;
    Ok(rep)
}
