use polymer_core::keyed::Key;
use polymer_core::moments::{
    a_bound_check, a_mc, a_quadrature, convolution_bound_check, golden_i_cases, lambda_product_check, p_ratio_check,
    psi, q_iota_check, RatioReport,
};
use polymer_core::params::lambda;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, PlotData, Report, Table};
use crate::RunError;

pub const GOLDEN_TOL: f64 = 1e-9;
pub const QUADRATURE_SLACK: f64 = 1e-9;
/// Largest relative amount by which a later sup may exceed the constant
/// fitted at the first t of the grid.
pub const RATIO_STABILITY: f64 = 0.1;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.action.as_str() {
        "lambda" => lambda_cmd(cfg),
        "a-cells" => a_cells(cfg),
        "a-bound" => a_bound(cfg),
        "p-ratio" => ratio(cfg, true),
        "q-iota" => ratio(cfg, false),
        "convolution" => convolution(cfg),
        _ => psi_cmd(cfg),
    }
}

fn lambda_cmd(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let r_max: usize = cfg.get("r_max", "5")?;
    let n_samples: usize = cfg.get("n_samples", "1000000")?;
    let seed: u64 = cfg.get("seed", "1")?;
    cfg.require("r_max", r_max >= 1, "must be at least 1")?;
    let mut rep = Report::new(cfg, seed)?;
    let mut table = Table::new(&["r", "estimate", "stderr", "target"]);
    rep.record("lambda", json!({"beta": beta}), lambda(beta), 0.0, 0, None);
    for r in 1..=r_max {
        rep.lap();
        let out = lambda_product_check(beta, r, n_samples, seed)?;
        let lap = rep.lap();
        rep.record("lambda_product", json!({"beta": beta, "r": r}), out.estimate, out.stderr, n_samples as u64, lap);
        rep.check(Check::new(
            format!("lambda_product r={r}"),
            out.passed,
            (out.estimate - out.target).abs(),
            3.0 * out.stderr,
            "|E prod (e^{beta^2 tau} - 1) - lambda^r| <= 3 stderr",
        ));
        table.push(vec![r.to_string(), num(out.estimate), num(out.stderr), num(out.target)]);
    }
    rep.write_csv("", &table)?;
    Ok(rep)
}

fn a_cells(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let ts: Vec<f64> = cfg.list("t", "2,8")?;
    let ls: Vec<usize> = cfg.list("l", "2,4,6,8,10")?;
    let rs: Vec<usize> = cfg.list("r", "1,3")?;
    let n_samples: usize = cfg.get("n_samples", "200000")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let mut rep = Report::new(cfg, seed)?;
    let mut table = Table::new(&["t", "l", "r", "mc", "mc_stderr", "quadrature", "abs_diff"]);
    let (mut cells, mut bad) = (0usize, Vec::new());
    for (ti, &t) in ts.iter().enumerate() {
        for &l in &ls {
            for &r in &rs {
                if r > l + 1 {
                    continue;
                }
                let mut rng = Key::new(seed).with(ti as u64).with(l as u64).with(r as u64).stream();
                let mc = a_mc(t, l, r, beta, n_samples, &mut rng)?;
                let q = a_quadrature(t, l, r, beta)?;
                let diff = (mc.value - q.value).abs();
                if diff > 3.0 * mc.stderr + QUADRATURE_SLACK {
                    bad.push(json!({"t": t, "l": l, "r": r, "diff": diff, "stderr": mc.stderr}));
                }
                cells += 1;
                table.push(vec![
                    num(t),
                    l.to_string(),
                    r.to_string(),
                    num(mc.value),
                    num(mc.stderr),
                    num(q.value),
                    num(diff),
                ]);
                rep.record("A_quadrature", json!({"t": t, "l": l, "r": r, "beta": beta}), q.value, q.stderr, 0, None);
            }
        }
    }
    rep.check(Check::new(
        format!("a_mc_vs_quadrature ({cells} cells)"),
        bad.is_empty(),
        bad.len() as f64,
        0.0,
        "cells with |MC - quadrature| > 3 stderr + 1e-9",
    ));
    let mut golden = Vec::new();
    for &t in &ts {
        for g in golden_i_cases(t, beta)? {
            rep.check(Check::new(
                format!("golden I(t={t},{},{})", g.l, g.r),
                g.abs_err <= GOLDEN_TOL,
                g.abs_err,
                GOLDEN_TOL,
                format!("quadrature {} vs closed form {}", g.quadrature, g.closed),
            ));
            golden.push(g);
        }
    }
    rep.detail = json!({"cells": cells, "violations": bad, "golden": golden});
    rep.write_csv("", &table)?;
    Ok(rep)
}

fn a_bound(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let ts: Vec<f64> = cfg.list("t", "5,10,20,40")?;
    let ls: Vec<usize> = cfg.list("l", "1,2,4,8,12,16,24,32,48")?;
    let rs: Vec<usize> = cfg.list("r", "1,2,3,5,8")?;
    let p = super::model_params(cfg, beta)?;
    let mut rep = Report::new(cfg, 0)?;
    let out = a_bound_check(&ts, &ls, &rs, &p)?;
    let lap = rep.lap();
    rep.record("a_bound_fitted_c", super::params_json(&p), out.fitted_c, 0.0, out.cells.len() as u64, lap);
    if let Some(c) = out.fitted_c_psi {
        rep.record("a_bound_fitted_c_psi", super::params_json(&p), c, 0.0, out.psi_cells.len() as u64, None);
    }
    rep.check(Check::new(
        "a_bound_finite",
        out.fitted_c.is_finite() && out.violations.is_empty(),
        out.fitted_c,
        f64::INFINITY,
        "finite constant, no cell with a vanishing bound and A > 0",
    ));
    if let Some(c) = out.fitted_c_psi {
        rep.check(Check::new(
            "a_bound_psi_finite",
            c.is_finite() && out.psi_violations.is_empty(),
            c,
            f64::INFINITY,
            "finite constant for the psi^r bound on the window cells",
        ));
    }
    let mut table = Table::new(&["t", "l", "r", "a", "bound"]);
    for c in &out.cells {
        table.push(vec![num(c.t), c.l.to_string(), c.r.to_string(), num(c.a), num(c.bound)]);
    }
    rep.detail = json!(out);
    rep.write_csv("", &table)?;
    Ok(rep)
}

fn ratio(cfg: &RunConfig, p_ratio: bool) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.05")?;
    let ts: Vec<f64> = cfg.list("t", "200,400")?;
    let mut p = super::model_params(cfg, beta)?;
    // The ratio checks need sigma in (3/4, 1); 0.76 keeps |y|_1 below the l
    // window of the q check at t = 200.
    p.sigma = cfg.get("sigma", "0.76")?;
    let (name, out): (&str, RatioReport) = if p_ratio {
        let xi: f64 = cfg.get("xi", "0.5")?;
        ("p_ratio", p_ratio_check(&p, &ts, xi)?)
    } else {
        let xi: f64 = cfg.get("xi", "0.2")?;
        ("q_iota", q_iota_check(&p, &ts, xi)?)
    };
    let mut rep = Report::new(cfg, 0)?;
    let lap = rep.lap();
    let mut table = Table::new(&["t", "sup", "argmax", "n_sites"]);
    let mut plot = PlotData::default();
    for r in &out.rows {
        rep.record(&format!("{name}_sup"), json!({"t": r.t, "sigma": p.sigma}), r.sup, 0.0, r.n_sites as u64, lap);
        table.push(vec![num(r.t), num(r.sup), super::fmt_site(&r.argmax), r.n_sites.to_string()]);
        plot.push(name, r.t, r.sup, 0.0);
    }
    rep.record(&format!("{name}_fitted_c"), json!({"sigma": p.sigma}), out.fitted_c, 0.0, 0, None);
    // The constant fitted at the first t must cover the later ones.
    let first = out.rows.first().map_or(f64::NAN, |r| r.sup);
    let later = out.rows.iter().skip(1).map(|r| r.sup).fold(0.0, f64::max);
    let excess = (later / first - 1.0).max(0.0);
    rep.record(
        &format!("{name}_sup_change"),
        json!({"sigma": p.sigma}),
        out.rows.last().map_or(f64::NAN, |r| r.sup) / first - 1.0,
        0.0,
        0,
        None,
    );
    rep.check(Check::new(
        format!("{name}_finite"),
        out.fitted_c.is_finite() && out.fitted_c > 0.0,
        out.fitted_c,
        f64::INFINITY,
        "finite fitted constant",
    ));
    rep.check(Check::new(
        format!("{name}_stable"),
        excess <= RATIO_STABILITY,
        excess,
        RATIO_STABILITY,
        "relative excess of later sups over the constant fitted at the first t",
    ));
    rep.detail = json!(out);
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

fn convolution(cfg: &RunConfig) -> Result<Report, RunError> {
    let d: usize = cfg.get("d", "3")?;
    let r_max: usize = cfg.get("r_max", "5")?;
    let n_max: usize = cfg.get("n_max", "100")?;
    let mut rep = Report::new(cfg, 0)?;
    let a = convolution_bound_check(d, r_max, n_max)?;
    let b = convolution_bound_check(d, r_max, 2 * n_max)?;
    let lap = rep.lap();
    rep.record("convolution_c", json!({"d": d, "r_max": r_max, "n_max": n_max}), a.c, 0.0, 0, lap);
    rep.record("convolution_c", json!({"d": d, "r_max": r_max, "n_max": 2 * n_max}), b.c, 0.0, 0, None);
    let mut table = Table::new(&["n_max", "r", "c_r"]);
    for out in [&a, &b] {
        for (i, c) in out.per_r.iter().enumerate() {
            table.push(vec![out.n_max.to_string(), (i + 1).to_string(), num(*c)]);
        }
    }
    rep.check(Check::new(
        "convolution_finite",
        a.c.is_finite(),
        a.c,
        f64::INFINITY,
        "finite c for all r <= r_max, n <= n_max",
    ));
    rep.check(Check::new(
        "convolution_nonincreasing",
        b.c <= a.c,
        b.c,
        a.c,
        format!("c at n_max = {} against c at n_max = {n_max}", 2 * n_max),
    ));
    rep.detail = json!({"base": a, "doubled": b});
    rep.write_csv("", &table)?;
    Ok(rep)
}

fn psi_cmd(cfg: &RunConfig) -> Result<Report, RunError> {
    let betas: Vec<f64> = cfg.list("beta", "0.1,0.2,0.3")?;
    let mut rep = Report::new(cfg, 0)?;
    let mut table = Table::new(&["beta", "nu", "nu1", "psi"]);
    for &beta in &betas {
        let p = super::model_params(cfg, beta)?;
        let v = psi(beta, p.nu, p.nu1)?;
        rep.record("psi", json!({"beta": beta, "nu": p.nu, "nu1": p.nu1}), v, 0.0, 0, None);
        table.push(vec![num(beta), num(p.nu), num(p.nu1), num(v)]);
    }
    rep.write_csv("", &table)?;
    Ok(rep)
}
