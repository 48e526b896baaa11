use polymer_core::tail::{
    green_cross_check, pair_moment_mc, return_scan, tail_empirical, waiting_time_ks, z_discrete_mean, LazyModel,
    DEFAULT_QUAD_POINTS,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, PlotData, Report, Table};
use crate::RunError;

/// Steps summed exactly in the series side of the return-probability cross-check.
pub const SERIES_STEPS: usize = 400;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.action.as_str() {
        "empirical" => empirical(cfg),
        _ => discrete(cfg),
    }
}

fn empirical(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let t: f64 = cfg.get("t", "5")?;
    let n_env: usize = cfg.get("n_env", "100000")?;
    let n_paths: usize = cfg.get("n_paths", "100")?;
    let u: Vec<f64> = cfg.list("u", "0.05,0.1,0.15,0.2,0.25,0.3,0.35,0.4,0.45,0.5,0.55,0.6,0.65,0.7,0.75,0.8")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let mut rep = Report::new(cfg, seed)?;
    let out = tail_empirical(&p, t, n_env, n_paths, &u, seed)?;
    let lap = rep.lap();
    let mut table = Table::new(&["u", "count", "n_env", "log_p", "ci_lo", "ci_hi"]);
    let mut plot = PlotData::default();
    for r in &out.rows {
        table.push(vec![num(r.u), r.count.to_string(), r.n_env.to_string(), num(r.log_p), num(r.ci_lo), num(r.ci_hi)]);
        if r.usable {
            plot.push("log_p", r.u, r.log_p, (r.ci_hi - r.ci_lo) / 2.0);
        }
    }
    let params = json!({"beta": beta, "t": t, "n_paths": n_paths, "d": p.d});
    rep.record("z_mean", params.clone(), out.z_mean, out.z_stderr, n_env as u64, lap);
    rep.record("tail_b_quadratic", params.clone(), out.quadratic.b, out.quadratic.b_stderr, n_env as u64, None);
    rep.record("tail_b_exponential", params, out.exponential.b, out.exponential.b_stderr, n_env as u64, None);
    rep.check(Check::new(
        "b_positive_95",
        out.b_positive_95,
        out.quadratic.b_ci.0,
        0.0,
        format!("bootstrap 95% interval of b = ({}, {}) excludes 0", out.quadratic.b_ci.0, out.quadratic.b_ci.1),
    ));
    rep.check(Check::new(
        "quadratic_preferred",
        out.quadratic_preferred,
        out.score,
        0.0,
        format!(
            "chi2(exponential) - chi2(quadratic); quadratic better in {} of bootstrap replicates",
            out.quadratic_preferred_fraction
        ),
    ));
    rep.check(Check::new("tail_monotone", out.monotone, 0.0, 0.0, "empirical tail nonincreasing in u"));
    rep.detail = json!(out);
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

fn discrete(cfg: &RunConfig) -> Result<Report, RunError> {
    let d: usize = cfg.get("d", "3")?;
    let beta: f64 = cfg.get("beta", "0.2")?;
    let lazy_n: Vec<u32> = cfg.list("lazy_n", "1,2,4,8,16,32")?;
    let ts: Vec<f64> = cfg.list("t", "1,4,16,64")?;
    let n_env: usize = cfg.get("n_env", "2000")?;
    let n_paths: usize = cfg.get("n_paths", "100")?;
    let n_pairs: usize = cfg.get("n_pairs", "200000")?;
    let n_samples: usize = cfg.get("n_samples", "100000")?;
    let qp: usize = cfg.get("quad_points", &DEFAULT_QUAD_POINTS.to_string())?;
    let seed: u64 = cfg.get("seed", "1")?;
    cfg.require("lazy_n", !lazy_n.is_empty(), "needs at least one N")?;
    let mut rep = Report::new(cfg, seed)?;
    let mut plot = PlotData::default();

    // Return probability scan.
    let scan = return_scan(d, &lazy_n, qp)?;
    let lap = rep.lap();
    let mut q_table = Table::new(&["n", "q", "n_one_minus_q", "n_log_inv_q"]);
    for r in &scan.rows {
        rep.record("return_probability", json!({"d": d, "N": r.n, "quad_points": qp}), r.q, 0.0, 0, lap);
        q_table.push(vec![r.n.to_string(), num(r.q), num(r.n_one_minus_q), num(r.n_log_inv_q)]);
        plot.push("n_one_minus_q", r.n as f64, r.n_one_minus_q, 0.0);
    }
    rep.check(Check::new(
        "n_one_minus_q_bounded",
        scan.c1 > 0.0 && scan.c2.is_finite(),
        scan.c2,
        scan.c1,
        format!("N(1-q) in [{}, {}] over the scan", scan.c1, scan.c2),
    ));
    rep.check(Check::new(
        "n_one_minus_q_settles",
        scan.increments_shrink,
        0.0,
        0.0,
        "increments of N(1-q) shrink along the scan",
    ));
    for &n in lazy_n.iter().filter(|&&n| n <= 4) {
        let g = green_cross_check(d, n, qp, SERIES_STEPS)?;
        rep.check(Check::new(
            format!("green_fourier_vs_series N={n}"),
            g.agree,
            g.diff,
            g.tolerance,
            "Fourier integral against the exact step series for 1/(1-q)",
        ));
    }
    rep.write_csv("-q", &q_table)?;

    // Mean one and pair moments at the N whose q keeps the closed form finite.
    let n_pair: u32 = lazy_n.iter().copied().find(|&n| n >= 4).unwrap_or(lazy_n[lazy_n.len() - 1]);
    let model = LazyModel::new(d, n_pair, beta)?;
    let q = scan.rows.iter().find(|r| r.n == n_pair).map(|r| r.q).unwrap_or(f64::NAN);
    let mut m_table = Table::new(&["t", "steps", "mean_z", "mean_z_stderr", "pair", "pair_stderr", "closed"]);
    let mut gaps = Vec::new();
    for &t in &ts {
        rep.lap();
        let z = z_discrete_mean(&model, t, n_env, n_paths, seed)?;
        let lap = rep.lap();
        let pj = json!({"d": d, "N": n_pair, "beta": beta, "t": t});
        rep.record("mean_z_discrete", pj.clone(), z.mean, z.stderr, z.n_samples, lap);
        rep.check(Check::new(
            format!("discrete_mean_one t={t}"),
            z.within(1.0, 3.0, 0.0),
            (z.mean - 1.0).abs(),
            3.0 * z.stderr,
            "|<Z_t^N> - 1| <= 3 stderr",
        ));
        let pm = pair_moment_mc(&model, t, n_pairs, q, seed)?;
        let lap = rep.lap();
        rep.record("pair_moment", pj, pm.estimate.mean, pm.estimate.stderr, pm.estimate.n_samples, lap);
        rep.check(Check::new(
            format!("pair_below_closed t={t}"),
            pm.below_envelope,
            pm.estimate.mean,
            pm.closed + 3.0 * pm.estimate.stderr,
            "pair Monte Carlo <= closed form + 3 stderr",
        ));
        gaps.push(pm.closed - pm.estimate.mean);
        m_table.push(vec![
            num(t),
            pm.steps.to_string(),
            num(z.mean),
            num(z.stderr),
            num(pm.estimate.mean),
            num(pm.estimate.stderr),
            num(pm.closed),
        ]);
        plot.push("pair_moment", t, pm.estimate.mean, pm.estimate.stderr);
        plot.push("closed_form", t, pm.closed, 0.0);
    }
    if gaps.len() >= 2 {
        let (first, last) = (gaps[0], gaps[gaps.len() - 1]);
        rep.check(Check::new(
            "pair_approaches_closed",
            last.abs() < first.abs(),
            last,
            first,
            "gap to the closed form at the last t below the first",
        ));
    }
    rep.write_csv("-moments", &m_table)?;

    // Waiting time law.
    let rows = waiting_time_ks(&lazy_n, n_samples, seed)?;
    let mut w_table = Table::new(&["n", "n_samples", "ks", "p_value", "exact_distance"]);
    for r in &rows {
        rep.record("waiting_time_ks", json!({"N": r.n}), r.ks, 0.0, r.n_samples as u64, None);
        w_table.push(vec![r.n.to_string(), r.n_samples.to_string(), num(r.ks), num(r.p_value), num(r.exact_distance)]);
    }
    let shrink = rows.windows(2).all(|w| w[1].exact_distance < w[0].exact_distance);
    rep.check(Check::new(
        "waiting_time_converges",
        shrink,
        rows.last().map_or(0.0, |r| r.exact_distance),
        0.0,
        "distance of tau/N to Exp(1) shrinks with N",
    ));
    let crit = 1.36 / (n_samples as f64).sqrt();
    let ks_ok = rows.iter().all(|r| (r.ks - r.exact_distance).abs() <= crit);
    rep.check(Check::new(
        "waiting_time_ks_consistent",
        ks_ok,
        rows.iter().map(|r| (r.ks - r.exact_distance).abs()).fold(0.0, f64::max),
        crit,
        "sampled KS statistic within 1.36/sqrt(n) of the exact distance",
    ));
    rep.write_csv("-waiting", &w_table)?;
    rep.write_plot(&plot)?;
    rep.detail = json!({"scan": scan, "pair_n": n_pair, "q": q, "waiting": rows});
    Ok(rep)
}
