use std::path::PathBuf;

use polymer_core::environment::BrownianField;
use polymer_core::keyed::Key;
use polymer_core::partition::{field_seed, TAIL_EPS};
use polymer_core::she::{
    feynman_kac_dt_sweep, integrate, ratio_compare, BoxSpec, CheckpointMeta, Laplacian, LatticeFunction,
};
use polymer_core::walk::{ball_sites, poisson_tail_steps};
use polymer_core::LatticeSite;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, PlotData, Report, Table};
use crate::RunError;

/// Largest pathwise relative difference between the bridge estimate and
/// the lattice solution.
pub const FK_TOL: f64 = 0.05;
/// Required shrink factor of that difference when dt halves.
pub const FK_SHRINK: f64 = 1.5;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.action.as_str() {
        "fk" => fk(cfg),
        "ratio" => ratio(cfg),
        _ => integrate_cmd(cfg),
    }
}

fn site(cfg: &RunConfig, d: usize) -> Result<LatticeSite, RunError> {
    let y: Vec<i32> = cfg.list("y", &vec!["0"; d].join(","))?;
    cfg.require("y", y.len() == d, "needs one coordinate per dimension")?;
    Ok(LatticeSite::new(&y))
}

fn fk(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let t: f64 = cfg.get("t", "2")?;
    let dts: Vec<f64> = cfg.list("dt", "0.0009765625,0.00048828125")?;
    let box_radius: usize = cfg.get("box", "8")?;
    let n_paths: usize = cfg.get("n_paths", "4000000")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let y = site(cfg, p.d)?;
    let n_max = poisson_tail_steps(t, TAIL_EPS);
    let kernel = super::kernel(cfg, p.d, n_max, n_max)?;
    let mut rep = Report::new(cfg, seed)?;
    let field = BrownianField::new(field_seed(seed, 0), p.d);
    let mut rng = Key::new(seed).with(0xf0c).stream();
    let sweep = feynman_kac_dt_sweep(&field, &p, &kernel, &y, t, &dts, box_radius, n_paths, &mut rng)?;
    let lap = rep.lap();
    rep.record(
        "z_bridge",
        json!({"beta": beta, "t": t, "y": y.coords()}),
        sweep.bridge.mean,
        sweep.bridge.stderr,
        sweep.bridge.n_samples,
        lap,
    );
    let mut table = Table::new(&["dt", "lattice", "bridge", "bridge_stderr", "rel_diff", "mc_budget"]);
    let mut plot = PlotData::default();
    for r in &sweep.rows {
        rep.record("z_lattice", json!({"beta": beta, "t": t, "dt": r.dt, "box": box_radius}), r.lattice, 0.0, 0, None);
        rep.check(Check::new(
            format!("fk_rel_diff dt={}", r.dt),
            r.rel_diff <= FK_TOL,
            r.rel_diff,
            FK_TOL,
            "|bridge - lattice| / lattice",
        ));
        table.push(vec![
            num(r.dt),
            num(r.lattice),
            num(sweep.bridge.mean),
            num(sweep.bridge.stderr),
            num(r.rel_diff),
            num(r.mc_budget),
        ]);
        plot.push("rel_diff", r.dt, r.rel_diff, r.mc_budget);
    }
    for (k, s) in sweep.shrink.iter().enumerate() {
        rep.check(Check::new(
            format!("fk_shrink dt={}", sweep.rows[k + 1].dt),
            *s >= FK_SHRINK,
            *s,
            FK_SHRINK,
            "ratio of relative differences when dt halves",
        ));
    }
    rep.detail = json!(sweep);
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

fn ratio(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let checkpoints: Vec<f64> = cfg.list("checkpoints", "2,8")?;
    let dt: f64 = cfg.get("dt", "0.015625")?;
    let box_radius: usize = cfg.get("box", "12")?;
    let y_radius: usize = cfg.get("y_radius", "2")?;
    let n_env: usize = cfg.get("n_env", "1000")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let spec = BoxSpec::new(p.d, box_radius)?;
    let f1 = LatticeFunction::constant(spec, 1.0);
    let f2 = LatticeFunction::from_fn(spec, |z| (-(z.norm1() as f64) / 2.0).exp());
    let y_set = ball_sites(&LatticeSite::origin(p.d), y_radius);
    let mut rep = Report::new(cfg, seed)?;
    let out = ratio_compare(&p, &f1, &f2, &y_set, &checkpoints, dt, n_env, seed)?;
    let lap = rep.lap();
    let mut table = Table::new(&["t", "median_gap"]);
    let mut plot = PlotData::default();
    for (t, g) in out.checkpoints.iter().zip(&out.median_gap) {
        rep.record(
            "median_ratio_gap",
            json!({"beta": beta, "t": t, "box": box_radius, "y_radius": y_radius}),
            *g,
            0.0,
            n_env as u64,
            lap,
        );
        table.push(vec![num(*t), num(*g)]);
        plot.push("median_gap", *t, *g, 0.0);
    }
    let (first, last) = (out.median_gap[0], out.median_gap[out.median_gap.len() - 1]);
    rep.check(Check::new(
        "ratio_gap_decreases",
        out.median_gap.len() >= 2 && last < first,
        last,
        first,
        format!("median gap at t = {} below t = {}", checkpoints[checkpoints.len() - 1], checkpoints[0]),
    ));
    rep.detail = json!(out);
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}

fn integrate_cmd(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let t: f64 = cfg.get("t", "1")?;
    let dt: f64 = cfg.get("dt", "0.0078125")?;
    let box_radius: usize = cfg.get("box", "8")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let laplacian = match cfg.raw("laplacian", "walk").as_str() {
        "walk" => Laplacian::Walk,
        "graph" => Laplacian::Graph,
        other => {
            cfg.require("laplacian", false, &format!("expected walk or graph, found `{other}`"))?;
            unreachable!()
        }
    };
    let checkpoint = cfg.raw("checkpoint", "");
    let p = super::model_params(cfg, beta)?;
    let spec = BoxSpec::new(p.d, box_radius)?;
    let meta = CheckpointMeta { field_seed: field_seed(seed, 0), beta, dt, laplacian };
    let mut rep = Report::new(cfg, seed)?;
    let o = LatticeSite::origin(p.d);
    let mut start = LatticeFunction::delta(spec, &o);
    let mut resumed = None;
    if !checkpoint.is_empty() && PathBuf::from(&checkpoint).exists() {
        let (f, m) = LatticeFunction::load(checkpoint.as_ref())?;
        cfg.require("checkpoint", m.meta == meta && f.spec == spec, "checkpoint was written with different settings")?;
        cfg.require("checkpoint", f.time <= t, "checkpoint lies beyond t")?;
        resumed = Some(f.time);
        start = f;
    }
    let field = BrownianField::new(meta.field_seed, p.d);
    let u = integrate(&field, &p, &start, t, dt, laplacian)?;
    let lap = rep.lap();
    if !checkpoint.is_empty() {
        u.save(checkpoint.as_ref(), meta.clone())?;
        rep.artifacts.push(checkpoint.clone());
    }
    let mass = u.sum();
    rep.record("u_origin", json!({"beta": beta, "t": t, "dt": dt, "box": box_radius}), u.get(&o), 0.0, 0, lap);
    rep.record("u_mass", json!({"beta": beta, "t": t, "dt": dt, "box": box_radius}), mass, 0.0, 0, None);
    // Sites beyond the reach of the explicit stencil stay exactly 0.
    let min = u.values.iter().cloned().fold(f64::INFINITY, f64::min);
    rep.check(Check::new(
        "she_nonnegative",
        u.values.iter().all(|v| v.is_finite() && *v >= 0.0) && u.get(&o) > 0.0,
        min,
        0.0,
        "solution finite and nonnegative, positive at the origin",
    ));
    if beta == 0.0 {
        rep.check(Check::new(
            "she_mass",
            (mass - 1.0).abs() <= 1e-12,
            (mass - 1.0).abs(),
            1e-12,
            "mass conserved at beta = 0",
        ));
    }
    let mut table = Table::new(&["k", "u_axis"]);
    for k in 0..=box_radius as i32 {
        table.push(vec![k.to_string(), num(u.get(&LatticeSite::along_axis(p.d, 0, k)))]);
    }
    rep.detail = json!({"laplacian": laplacian, "resumed_from": resumed, "time": u.time});
    rep.write_csv("", &table)?;
    Ok(rep)
}
