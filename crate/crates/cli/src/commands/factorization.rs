use polymer_core::environment::BrownianField;
use polymer_core::factorization::{
    default_horizon, delta_estimate, delta_lattice, delta_sweep, lattice_kernel, lattice_radius, DeltaMethod,
    FactorizationCell, LATTICE_DT,
};
use polymer_core::partition::{field_seed, path_stream, run_field, TAIL_EPS};
use polymer_core::she::BoxSpec;
use polymer_core::walk::{ball_sites, poisson_tail_steps};
use polymer_core::{LatticeSite, TransitionKernel};
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{num, Check, PlotData, Report, Table};
use crate::RunError;

pub fn run(cfg: &RunConfig) -> Result<Report, RunError> {
    let beta: f64 = cfg.get("beta", "0.2")?;
    let ts: Vec<f64> = cfg.list("t", "20,40,80")?;
    let n_env: usize = cfg.get("n_env", "2000")?;
    let seed: u64 = cfg.get("seed", "1")?;
    let p = super::model_params(cfg, beta)?;
    let method = match cfg.raw("method", "lattice").as_str() {
        "lattice" => DeltaMethod::Lattice { dt: cfg.get("dt", &LATTICE_DT.to_string())? },
        "mc" => DeltaMethod::MonteCarlo { n_paths: cfg.get("n_paths", "200")? },
        other => {
            cfg.require("method", false, &format!("expected lattice or mc, found `{other}`"))?;
            unreachable!()
        }
    };
    let mut rep = Report::new(cfg, seed)?;
    let sweep = delta_sweep(&p, p.sigma, &ts, n_env, method, seed)?;
    let lap = rep.lap();
    let mut table = Table::new(&[
        "t",
        "horizon",
        "sup_mean_abs",
        "sup_ci_lo",
        "sup_ci_hi",
        "argmax",
        "origin_mean_abs",
        "n_classes",
    ]);
    let mut plot = PlotData::default();
    for r in &sweep.rows {
        let se = (r.sup_ci.1 - r.sup_ci.0) / (2.0 * 1.96);
        rep.record(
            "sup_mean_abs_delta",
            json!({"t": r.t, "horizon": r.horizon, "beta": beta, "sigma": p.sigma}),
            r.sup_mean_abs,
            se,
            n_env as u64,
            lap,
        );
        table.push(vec![
            num(r.t),
            num(r.horizon),
            num(r.sup_mean_abs),
            num(r.sup_ci.0),
            num(r.sup_ci.1),
            super::fmt_site(&r.argmax),
            num(r.origin_mean_abs),
            r.n_classes.to_string(),
        ]);
        plot.push("sup_mean_abs_delta", r.t, r.sup_mean_abs, se);
    }
    rep.record(
        "delta_theta",
        json!({"beta": beta, "sigma": p.sigma}),
        sweep.theta,
        sweep.theta_stderr,
        n_env as u64,
        None,
    );
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    rep.check(Check::new(
        "decay_95",
        sweep.decay_95,
        sweep.first_minus_last_ci.0,
        0.0,
        format!("bootstrap 95% interval of sup<|delta|>(t={first}) - sup<|delta|>(t={last}) above 0"),
    ));
    rep.check(Check::new(
        "theta_positive_95",
        sweep.theta_positive_95,
        sweep.theta,
        1.645 * sweep.theta_stderr,
        "fitted decay exponent positive at 95%",
    ));
    rep.write_csv("", &table)?;

    // Per-site factors in the first environment.
    let mut cells = Table::new(&["t", "y", "delta", "stderr", "z_bridge", "z_fwd", "z_bwd", "seed"]);
    for &t in &ts {
        for c in sample_cells(&p, t, method, seed)? {
            cells.push(vec![
                num(c.t),
                super::fmt_site(&c.y),
                num(c.delta),
                num(c.delta_stderr),
                num(c.z_bridge.mean),
                num(c.z_fwd.mean),
                num(c.z_bwd.mean),
                seed.to_string(),
            ]);
        }
    }
    rep.write_csv("-cells", &cells)?;
    rep.write_plot(&plot)?;
    rep.detail = json!(sweep);
    Ok(rep)
}

/// Factors at every displacement of the window in environment 0.
fn sample_cells(
    p: &polymer_core::params::ModelParams,
    t: f64,
    method: DeltaMethod,
    seed: u64,
) -> Result<Vec<FactorizationCell>, RunError> {
    let d = p.d;
    let rho = t.powf(p.sigma);
    let ys: Vec<LatticeSite> = ball_sites(&LatticeSite::origin(d), rho.ceil() as usize * d)
        .into_iter()
        .filter(|z| {
            z.norm2() < rho && z.coords().windows(2).all(|w| w[0] >= w[1]) && z.coords().iter().all(|&c| c >= 0)
        })
        .collect();
    let horizon = default_horizon(t, method);
    match method {
        DeltaMethod::Lattice { dt } => {
            let y_max = ys.iter().map(|y| y.norm2()).fold(0.0, f64::max);
            let spec = BoxSpec::new(d, lattice_radius(d, t, y_max))?;
            let kern = lattice_kernel(spec, t, dt)?;
            let field = BrownianField::new(field_seed(seed, 0), d);
            let f = delta_lattice(&field, p, spec, t, horizon, dt, &kern)?;
            Ok(ys.iter().map(|y| f.cell(y)).collect())
        }
        DeltaMethod::MonteCarlo { n_paths } => {
            let n_max = poisson_tail_steps(t, TAIL_EPS);
            let kernel = TransitionKernel::build(d, n_max, n_max)?;
            let field = run_field(seed, 0, d);
            let mut rng = path_stream(seed, 0, 0);
            ys.iter()
                .map(|y| delta_estimate(&field, p, &kernel, t, y, horizon, n_paths, &mut rng).map_err(RunError::from))
                .collect()
        }
    }
}
