use polymer_core::moments::truncation_margin;
use polymer_core::partition::TAIL_EPS;
use polymer_core::walk::{lclt_approx, poisson_tail_steps, KernelStream};
use polymer_core::LatticeSite;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, PlotData, Report, Table};
use crate::RunError;

pub const MASS_TOL: f64 = 1e-12;
/// Largest relative LCLT error allowed at t = 100 over |y| <= 10.
pub const LCLT_TOL: f64 = 0.15;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    match cfg.action.as_str() {
        "mass" => mass(cfg),
        _ => lclt(cfg),
    }
}

fn mass(cfg: &RunConfig) -> Result<Report, RunError> {
    let d: usize = cfg.get("d", "3")?;
    let n_max: usize = cfg.get("n_max", "300")?;
    let mut rep = Report::new(cfg, 0)?;
    let mut stream = KernelStream::new(d, n_max)?;
    let mut table = Table::new(&["n", "mass", "abs_dev", "parity_zero"]);
    let (mut worst, mut parity_ok) = (0.0f64, true);
    let off_even = LatticeSite::along_axis(d, 0, 1);
    let origin = LatticeSite::origin(d);
    for n in 0..=n_max {
        if n > 0 {
            stream.advance();
        }
        let m = stream.total_mass();
        let dev = (m - 1.0).abs();
        worst = worst.max(dev);
        // Sites of the wrong parity carry exactly zero mass.
        let probe = if n % 2 == 0 { &off_even } else { &origin };
        let zero = stream.value(probe.coords()) == Some(0.0);
        parity_ok &= zero;
        table.push(vec![n.to_string(), num(m), num(dev), zero.to_string()]);
    }
    let lap = rep.lap();
    rep.record("kernel_mass_max_dev", json!({"d": d, "n_max": n_max}), worst, 0.0, 0, lap);
    rep.check(Check::new(
        "kernel_mass",
        worst <= MASS_TOL,
        worst,
        MASS_TOL,
        format!("max |sum_z q_n - 1| over n <= {n_max}"),
    ));
    rep.check(Check::new(
        "parity_zeros",
        parity_ok,
        if parity_ok { 0.0 } else { 1.0 },
        0.0,
        "off-parity values are exactly 0",
    ));
    rep.write_csv("", &table)?;
    Ok(rep)
}

fn lclt(cfg: &RunConfig) -> Result<Report, RunError> {
    let d: usize = cfg.get("d", "3")?;
    let t_list: Vec<f64> = cfg.list("t", "50,100,200")?;
    let y_radius: f64 = cfg.get("y_radius", "10")?;
    cfg.require("t", !t_list.is_empty() && t_list.iter().all(|&t| t > 0.0), "need positive times")?;
    let mut rep = Report::new(cfg, 0)?;
    let t_max = t_list.iter().cloned().fold(0.0, f64::max);
    let n_max: usize = match cfg.is_set("n_max") {
        true => cfg.get("n_max", "0")?,
        false => poisson_tail_steps(t_max, TAIL_EPS),
    };
    let reach = (y_radius * (d as f64).sqrt()).ceil() as usize;
    let radius: usize = cfg.get("radius", &(reach + truncation_margin(d, n_max, TAIL_EPS)).to_string())?;
    let kernel = super::kernel(cfg, d, n_max, radius)?;
    let r = y_radius.floor() as i32;
    // Canonical representatives y1 >= y2 >= ... >= 0 inside the ball.
    let mut sites = Vec::new();
    let mut stack = vec![Vec::<i32>::new()];
    while let Some(p) = stack.pop() {
        if p.len() == d {
            sites.push(p);
            continue;
        }
        let top = p.last().copied().unwrap_or(r);
        for c in 0..=top {
            let mut q = p.clone();
            q.push(c);
            if q.iter().map(|v| (v * v) as f64).sum::<f64>() <= y_radius * y_radius {
                stack.push(q);
            }
        }
    }
    sites.sort();
    let mut table = Table::new(&["t", "y", "norm", "p", "gaussian", "rel_err"]);
    let mut plot = PlotData::default();
    let mut errs = Vec::new();
    for &t in &t_list {
        let tab = kernel.p_continuous_table(t, TAIL_EPS)?;
        let mut worst = 0.0f64;
        for y in &sites {
            let site = LatticeSite::new(y);
            let p = tab.get(y).unwrap_or(f64::NAN);
            let g = lclt_approx(d, t, &site);
            let e = (p / g - 1.0).abs();
            worst = worst.max(e);
            table.push(vec![num(t), super::fmt_site(y), num(site.norm2()), num(p), num(g), num(e)]);
        }
        plot.push("lclt_max_rel_err", t, worst, 0.0);
        let lap = rep.lap();
        rep.record("lclt_max_rel_err", json!({"d": d, "t": t, "y_radius": y_radius}), worst, 0.0, 0, lap);
        errs.push((t, worst));
    }
    if let Some(&(_, e)) = errs.iter().find(|(t, _)| *t == 100.0) {
        rep.check(Check::new("lclt_t100", e <= LCLT_TOL, e, LCLT_TOL, "max |p/gaussian - 1| over |y| <= radius"));
    }
    if errs.len() >= 2 {
        let (first, last) = (errs[0], errs[errs.len() - 1]);
        rep.check(Check::new(
            "lclt_error_decreases",
            last.1 < first.1,
            last.1,
            first.1,
            format!("error at t = {} below error at t = {}", last.0, first.0),
        ));
    }
    rep.detail = json!({"n_max": n_max, "radius": radius, "errors": errs});
    rep.write_csv("", &table)?;
    rep.write_plot(&plot)?;
    Ok(rep)
}
