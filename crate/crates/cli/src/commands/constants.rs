use polymer_core::params::{lambda, weak_disorder_threshold};
use polymer_core::partition::second_moment_limit;
use polymer_core::walk::{alpha_d_streaming, alpha_pair_mc};
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, Report, Table};
use crate::RunError;

/// Relative agreement required between the DP and pair Monte Carlo α_d.
pub const ALPHA_AGREEMENT: f64 = 0.01;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    let d: usize = cfg.get("d", "3")?;
    let n_max: usize = cfg.get("n_max", "300")?;
    let tolerance: f64 = cfg.get("tolerance", "0.05")?;
    let beta: f64 = cfg.get("beta", "0.2")?;
    let n_pairs: usize = cfg.get("n_pairs", "0")?;
    let seed: u64 = cfg.get("seed", "1")?;
    cfg.require("d", d >= 3, "alpha_d is finite only for d >= 3")?;
    let mut rep = Report::new(cfg, seed)?;
    let mut table = Table::new(&["quantity", "value", "lo", "hi"]);

    let alpha = alpha_d_streaming(d, n_max, tolerance)?;
    let (lo, hi) = alpha.interval();
    let err = (alpha.value - lo).max(hi - alpha.value);
    let lap = rep.lap();
    rep.record("alpha_d", json!({"d": d, "n_max": n_max}), alpha.value, err, 0, lap);
    table.push(vec!["alpha_d".into(), num(alpha.value), num(lo), num(hi)]);

    let th = weak_disorder_threshold(alpha.value, lo, hi);
    rep.record("beta_star", json!({"d": d}), th.value, (th.hi - th.lo) / 2.0, 0, None);
    table.push(vec!["beta_star".into(), num(th.value), num(th.lo), num(th.hi)]);

    let lam = lambda(beta);
    rep.record("lambda", json!({"beta": beta}), lam, 0.0, 0, None);
    table.push(vec!["lambda".into(), num(lam), num(lam), num(lam)]);

    let lim = second_moment_limit(beta, alpha.value);
    let (lim_a, lim_b) = (second_moment_limit(beta, lo), second_moment_limit(beta, hi));
    rep.record("second_moment_limit", json!({"beta": beta, "d": d}), lim, (lim_b - lim_a).abs() / 2.0, 0, None);
    table.push(vec!["second_moment_limit".into(), num(lim), num(lim_a.min(lim_b)), num(lim_a.max(lim_b))]);

    rep.check(Check::new(
        "alpha_tail_bound",
        alpha.tail_bound <= tolerance,
        alpha.tail_bound,
        tolerance,
        format!("tail bound at n_max = {n_max}"),
    ));
    let mut detail = json!({"alpha": alpha, "beta_star": th});
    if n_pairs > 0 {
        rep.lap();
        let mc = alpha_pair_mc(d, n_max, n_pairs, seed)?;
        let lap = rep.lap();
        rep.record(
            "alpha_d_pair_mc",
            json!({"d": d, "n_max": n_max}),
            mc.value,
            mc.partial_stderr,
            n_pairs as u64,
            lap,
        );
        table.push(vec![
            "alpha_d_pair_mc".into(),
            num(mc.value),
            num(mc.value - 1.96 * mc.partial_stderr),
            num(mc.value + 1.96 * mc.partial_stderr),
        ]);
        let rel = (mc.value - alpha.value).abs() / alpha.value;
        rep.check(Check::new(
            "alpha_dp_vs_pair_mc",
            rel <= ALPHA_AGREEMENT,
            rel,
            ALPHA_AGREEMENT,
            format!("DP {} vs pair MC {} ± {}", alpha.value, mc.value, mc.partial_stderr),
        ));
        detail["pair_mc"] = json!(mc);
    }
    rep.detail = detail;
    rep.write_csv("", &table)?;
    Ok(rep)
}
