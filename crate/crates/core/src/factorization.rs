//! Factorization error δ = Z_{0,0}^{y,t}/p_t^y - Z_{0,0}^H · Z_{t-H}^{y,t}
//! over sub-ballistic displacements.
//!
//! Two estimators share the definitions. The Monte Carlo one samples each of
//! the three partition functions with walks in the continuous field. The
//! lattice one solves the heat equation on a periodic box against the same
//! field: u from δ_0 gives Z^{y,t} for every y and Z^H as its total mass at
//! time H, v ≡ 1 started at t - H gives Z_{t-H}^{y,t}, and the β = 0 run
//! gives p. All three then carry the same time-step discretization, and δ
//! is exactly zero at β = 0.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::BrownianField;
use crate::error::{invalid, Result};
use crate::keyed::{label, Key};
use crate::params::ModelParams;
use crate::partition::{
    estimate_z_backward, estimate_z_bridge, estimate_z_forward, field_seed, path_stream, run_field, PartitionEstimate,
    TAIL_EPS,
};
use crate::she::{BoxSpec, Evolution, Laplacian, LatticeFunction};
use crate::stats::{linear_fit, par_map, quantile_sorted};
use crate::walk::{LatticeSite, TransitionKernel};

/// Default time step of the lattice estimator.
pub const LATTICE_DT: f64 = 0.125;
/// Relative weight of periodic images tolerated at the farthest y.
const IMAGE_TOL: f64 = 1e-4;
const N_BOOT: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorizationCell {
    pub t: f64,
    pub y: Vec<i32>,
    pub horizon: f64,
    pub z_bridge: PartitionEstimate,
    pub z_fwd: PartitionEstimate,
    pub z_bwd: PartitionEstimate,
    pub p: f64,
    pub delta: f64,
    pub delta_stderr: f64,
}

fn check_window(params: &ModelParams, t: f64, horizon: f64, y: &LatticeSite) -> Result<()> {
    if !(horizon > 0.0 && horizon <= t / 2.0) {
        return Err(invalid("horizon", "need 0 < H <= t/2"));
    }
    if !(y.norm2() < t.powf(params.sigma)) {
        return Err(invalid("y", "need |y| < t^sigma"));
    }
    Ok(())
}

fn exact(v: f64) -> PartitionEstimate {
    PartitionEstimate { mean: v, stderr: 0.0, n_samples: 0, nested: None }
}

/// Monte Carlo δ at one (t, y): bridge for Z^{y,t}, forward walks on [0, H]
/// for Z^H, reversed walks on [t - H, t] for Z_{t-H}^{y,t}, all in `field`.
#[allow(clippy::too_many_arguments)]
pub fn delta_estimate<R: Rng + ?Sized>(
    field: &BrownianField,
    params: &ModelParams,
    kernel: &TransitionKernel,
    t: f64,
    y: &LatticeSite,
    horizon: f64,
    n_paths: usize,
    rng: &mut R,
) -> Result<FactorizationCell> {
    check_window(params, t, horizon, y)?;
    let o = LatticeSite::origin(params.d);
    let p = kernel.p_continuous(t, y, TAIL_EPS)?;
    let z_bridge = estimate_z_bridge(field, params, kernel, &o, 0.0, y, t, n_paths, rng)?;
    let z_fwd = estimate_z_forward(field, params, &o, 0.0, horizon, n_paths, rng);
    let z_bwd = estimate_z_backward(field, params, y, t, t - horizon, n_paths, rng);
    let delta = z_bridge.mean / p - z_fwd.mean * z_bwd.mean;
    let delta_stderr =
        ((z_bridge.stderr / p).powi(2) + (z_bwd.mean * z_fwd.stderr).powi(2) + (z_fwd.mean * z_bwd.stderr).powi(2))
            .sqrt();
    Ok(FactorizationCell { t, y: y.coords().to_vec(), horizon, z_bridge, z_fwd, z_bwd, p, delta, delta_stderr })
}

/// Smallest box radius keeping periodic images of the source below
/// `IMAGE_TOL` relative weight at every |y| <= y_max, with at least one site
/// of margin.
pub fn lattice_radius(d: usize, t: f64, y_max: f64) -> usize {
    let v = t / d as f64;
    let r = 0.5 * (y_max + (y_max * y_max + 2.0 * v * (1.0 / IMAGE_TOL).ln()).sqrt());
    (r.ceil() as usize).max(y_max.floor() as usize + 1)
}

/// All three factors on one periodic box.
#[derive(Debug, Clone)]
pub struct LatticeFactors {
    pub spec: BoxSpec,
    pub t: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Z^{y,t}_{0,0} per site.
    pub z_bridge: Vec<f64>,
    /// Z^H_{0,0}.
    pub z_fwd: f64,
    /// Z^{y,t}_{t-H} per site.
    pub z_bwd: Vec<f64>,
    /// Discrete heat kernel per site.
    pub p: Vec<f64>,
}

impl LatticeFactors {
    pub fn delta(&self, i: usize) -> f64 {
        self.z_bridge[i] / self.p[i] - self.z_fwd * self.z_bwd[i]
    }

    pub fn cell(&self, y: &LatticeSite) -> FactorizationCell {
        let i = self.spec.index(y.coords());
        FactorizationCell {
            t: self.t,
            y: y.coords().to_vec(),
            horizon: self.horizon,
            z_bridge: exact(self.z_bridge[i]),
            z_fwd: exact(self.z_fwd),
            z_bwd: exact(self.z_bwd[i]),
            p: self.p[i],
            delta: self.delta(i),
            delta_stderr: 0.0,
        }
    }
}

fn steps(t: f64, dt: f64, name: &'static str) -> Result<usize> {
    let n = (t / dt).round();
    if (n * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(invalid(name, "must be a multiple of dt"));
    }
    Ok(n as usize)
}

/// Deterministic heat kernel of the scheme on `spec`.
pub fn lattice_kernel(spec: BoxSpec, t: f64, dt: f64) -> Result<Vec<f64>> {
    let field = BrownianField::new(0, spec.d);
    let mut ev = Evolution::new(&field, 0.0, spec, 0.0, dt, Laplacian::Walk)?;
    let mut u = LatticeFunction::delta(spec, &LatticeSite::origin(spec.d)).values;
    for _ in 0..steps(t, dt, "t")? {
        ev.step(&mut [&mut u])?;
    }
    Ok(u)
}

/// Lattice estimator of the three factors in one field; `p` from
/// [`lattice_kernel`] with the same box, t and dt.
pub fn delta_lattice(
    field: &BrownianField,
    params: &ModelParams,
    spec: BoxSpec,
    t: f64,
    horizon: f64,
    dt: f64,
    p: &[f64],
) -> Result<LatticeFactors> {
    if !(horizon > 0.0 && horizon <= t / 2.0) {
        return Err(invalid("horizon", "need 0 < H <= t/2"));
    }
    let n = steps(t, dt, "t")?;
    let nh = steps(horizon, dt, "horizon")?;
    let mut u = LatticeFunction::delta(spec, &LatticeSite::origin(spec.d)).values;
    if params.beta == 0.0 {
        return Ok(LatticeFactors {
            spec,
            t,
            horizon,
            dt,
            z_bridge: p.to_vec(),
            z_fwd: 1.0,
            z_bwd: vec![1.0; spec.len()],
            p: p.to_vec(),
        });
    }
    let mut v = vec![1.0; spec.len()];
    let mut ev = Evolution::new(field, params.beta, spec, 0.0, dt, Laplacian::Walk)?;
    let mut z_fwd = f64::NAN;
    for k in 0..n {
        if k == nh {
            z_fwd = u.iter().sum();
        }
        if k >= n - nh {
            ev.step(&mut [&mut u, &mut v])?;
        } else {
            ev.step(&mut [&mut u])?;
        }
    }
    if nh == n {
        z_fwd = u.iter().sum();
    }
    Ok(LatticeFactors { spec, t, horizon, dt, z_bridge: u, z_fwd, z_bwd: v, p: p.to_vec() })
}

/// Estimator used by [`delta_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeltaMethod {
    Lattice { dt: f64 },
    MonteCarlo { n_paths: usize },
}

impl Default for DeltaMethod {
    fn default() -> Self {
        DeltaMethod::Lattice { dt: LATTICE_DT }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRow {
    pub t: f64,
    pub horizon: f64,
    /// sup over displacement classes of the environment mean of |δ|.
    pub sup_mean_abs: f64,
    pub sup_ci: (f64, f64),
    /// Representative of the class attaining the sup.
    pub argmax: Vec<i32>,
    pub origin_mean_abs: f64,
    pub origin_ci: (f64, f64),
    /// Mean Monte Carlo stderr of δ̂ (zero for the lattice estimator).
    pub bias_proxy: f64,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaSweep {
    pub sigma: f64,
    pub method: DeltaMethod,
    pub n_env: usize,
    pub rows: Vec<DeltaRow>,
    /// Fitted exponent of sup ⟨|δ|⟩ ~ t^{-θ}.
    pub theta: f64,
    pub theta_stderr: f64,
    pub theta_positive_95: bool,
    /// Bootstrap 95% interval of sup⟨|δ|⟩(first t) - sup⟨|δ|⟩(last t).
    pub first_minus_last_ci: (f64, f64),
    pub decay_95: bool,
}

/// Displacements {|y| < t^σ} grouped into lattice-symmetry classes; δ(y) has
/// the same law across a class.
fn displacement_classes(d: usize, t: f64, sigma: f64) -> Vec<Vec<LatticeSite>> {
    let rho = t.powf(sigma);
    let r = rho.ceil() as usize;
    let mut map: HashMap<Vec<u32>, usize> = HashMap::new();
    let mut classes: Vec<Vec<LatticeSite>> = Vec::new();
    for z in crate::walk::ball_sites(&LatticeSite::origin(d), r * d) {
        if !(z.norm2() < rho) {
            continue;
        }
        let mut key: Vec<u32> = z.coords().iter().map(|c| c.unsigned_abs()).collect();
        key.sort_unstable_by(|a, b| b.cmp(a));
        let id = *map.entry(key).or_insert_with(|| {
            classes.push(Vec::new());
            classes.len() - 1
        });
        classes[id].push(z);
    }
    // origin first, then by distance
    classes.sort_by(|a, b| a[0].norm2().total_cmp(&b[0].norm2()));
    classes
}

/// Per-environment class means of |δ| (and of the δ stderr) at one t.
fn env_values(
    params: &ModelParams,
    classes: &[Vec<LatticeSite>],
    t: f64,
    horizon: f64,
    method: DeltaMethod,
    setup: &MethodSetup,
    seed: u64,
    e: usize,
) -> Result<(Vec<f64>, f64)> {
    match method {
        DeltaMethod::Lattice { dt } => {
            let field = BrownianField::new(field_seed(seed, e), params.d);
            let (spec, p) = setup.lattice.as_ref().expect("lattice setup");
            let f = delta_lattice(&field, params, *spec, t, horizon, dt, p)?;
            let vals = classes
                .iter()
                .map(|c| c.iter().map(|y| f.delta(spec.index(y.coords())).abs()).sum::<f64>() / c.len() as f64)
                .collect();
            Ok((vals, 0.0))
        }
        DeltaMethod::MonteCarlo { n_paths } => {
            let field = run_field(seed, e, params.d);
            let kernel = setup.kernel.as_ref().expect("kernel setup");
            let mut rng = path_stream(seed, e, 0);
            let mut se = 0.0;
            let mut vals = Vec::with_capacity(classes.len());
            for c in classes {
                let cell = delta_estimate(&field, params, kernel, t, &c[0], horizon, n_paths, &mut rng)?;
                se += cell.delta_stderr;
                vals.push(cell.delta.abs());
            }
            Ok((vals, se / classes.len() as f64))
        }
    }
}

struct MethodSetup {
    lattice: Option<(BoxSpec, Vec<f64>)>,
    kernel: Option<TransitionKernel>,
}

/// Horizon t/3 on the step grid of the method.
pub fn default_horizon(t: f64, method: DeltaMethod) -> f64 {
    match method {
        DeltaMethod::Lattice { dt } => (t / 3.0 / dt).round() * dt,
        DeltaMethod::MonteCarlo { .. } => t / 3.0,
    }
}

/// ⟨|δ|⟩ over `n_env` environments per t (the same environments for every
/// t), its sup over displacement classes, bootstrap intervals and a fitted
/// decay exponent. The Monte Carlo method evaluates one representative per
/// class.
pub fn delta_sweep(
    params: &ModelParams,
    sigma: f64,
    t_list: &[f64],
    n_env: usize,
    method: DeltaMethod,
    seed: u64,
) -> Result<DeltaSweep> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid("sigma", "must lie in (0, 1)"));
    }
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) || n_env < 2 {
        return Err(invalid("t_list", "need increasing times and n_env >= 2"));
    }
    let params = ModelParams { sigma, ..*params };
    let mut per_t: Vec<(DeltaRow, Vec<Vec<f64>>)> = Vec::new();
    for &t in t_list {
        let horizon = default_horizon(t, method);
        let classes = displacement_classes(params.d, t, sigma);
        let y_max = classes.last().map_or(0.0, |c| c[0].norm2());
        let setup = match method {
            DeltaMethod::Lattice { dt } => {
                let spec = BoxSpec::new(params.d, lattice_radius(params.d, t, y_max))?;
                MethodSetup { lattice: Some((spec, lattice_kernel(spec, t, dt)?)), kernel: None }
            }
            DeltaMethod::MonteCarlo { .. } => {
                let n_max = crate::walk::poisson_tail_steps(t, TAIL_EPS);
                MethodSetup { lattice: None, kernel: Some(TransitionKernel::build(params.d, n_max, n_max)?) }
            }
        };
        let out: Vec<Result<(Vec<f64>, f64)>> =
            par_map(n_env, |e| env_values(&params, &classes, t, horizon, method, &setup, seed, e));
        let out: Vec<(Vec<f64>, f64)> = out.into_iter().collect::<Result<_>>()?;
        let values: Vec<Vec<f64>> = out.iter().map(|o| o.0.clone()).collect();
        let bias_proxy = out.iter().map(|o| o.1).sum::<f64>() / n_env as f64;
        let means = class_means(&values, None);
        let (k_max, sup) = argmax(&means);
        per_t.push((
            DeltaRow {
                t,
                horizon,
                sup_mean_abs: sup,
                sup_ci: (f64::NAN, f64::NAN),
                argmax: classes[k_max][0].coords().to_vec(),
                origin_mean_abs: means[0],
                origin_ci: (f64::NAN, f64::NAN),
                bias_proxy,
                n_classes: classes.len(),
            },
            values,
        ));
    }
    // Joint bootstrap over environment indices.
    let mut rng = Key::new(seed).with(label::BOOTSTRAP).stream();
    let mut sups: Vec<Vec<f64>> = vec![Vec::with_capacity(N_BOOT); t_list.len()];
    let mut origins: Vec<Vec<f64>> = vec![Vec::with_capacity(N_BOOT); t_list.len()];
    let mut diffs = Vec::with_capacity(N_BOOT);
    let mut idx = vec![0usize; n_env];
    for _ in 0..N_BOOT {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n_env));
        for (g, (_, values)) in per_t.iter().enumerate() {
            let m = class_means(values, Some(&idx));
            sups[g].push(argmax(&m).1);
            origins[g].push(m[0]);
        }
        diffs.push(sups[0].last().unwrap() - sups[t_list.len() - 1].last().unwrap());
    }
    let ci = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        (quantile_sorted(v, 0.025), quantile_sorted(v, 0.975))
    };
    let mut rows = Vec::new();
    let mut log_se = Vec::new();
    for (g, (mut row, _)) in per_t.into_iter().enumerate() {
        let sd = std_dev(&sups[g]);
        log_se.push(sd / row.sup_mean_abs);
        row.sup_ci = ci(&mut sups[g]);
        row.origin_ci = ci(&mut origins[g]);
        rows.push(row);
    }
    let first_minus_last_ci = ci(&mut diffs);
    let (theta, theta_stderr) = if rows.len() >= 2 && rows.iter().all(|r| r.sup_mean_abs > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.sup_mean_abs.ln()).collect();
        let fit = linear_fit(&x, &y, Some(&log_se));
        (-fit.slope, fit.slope_stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(DeltaSweep {
        sigma,
        method,
        n_env,
        theta,
        theta_stderr,
        theta_positive_95: theta - 1.645 * theta_stderr > 0.0,
        decay_95: rows.len() >= 2 && first_minus_last_ci.0 > 0.0,
        first_minus_last_ci,
        rows,
    })
}

fn class_means(values: &[Vec<f64>], idx: Option<&[usize]>) -> Vec<f64> {
    let k = values[0].len();
    let mut m = vec![0.0; k];
    let n = match idx {
        Some(ix) => {
            for &i in ix {
                m.iter_mut().zip(values[i].iter()).for_each(|(a, b)| *a += b);
            }
            ix.len()
        }
        None => {
            for v in values {
                m.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
            }
            values.len()
        }
    };
    m.iter_mut().for_each(|a| *a /= n as f64);
    m
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_cover_the_ball() {
        let classes = displacement_classes(3, 20.0, 0.6);
        let rho = 20f64.powf(0.6);
        let n: usize = classes.iter().map(|c| c.len()).sum();
        let direct =
            crate::walk::ball_sites(&LatticeSite::origin(3), 18).into_iter().filter(|z| z.norm2() < rho).count();
        assert_eq!(n, direct);
        assert_eq!(classes[0][0], LatticeSite::origin(3));
    }

    #[test]
    fn zero_beta_lattice_delta_vanishes() {
        let p = ModelParams::new(3, 0.0);
        let spec = BoxSpec::new(3, 5).unwrap();
        let k = lattice_kernel(spec, 6.0, 0.125).unwrap();
        let f = delta_lattice(&BrownianField::new(1, 3), &p, spec, 6.0, 2.0, 0.125, &k).unwrap();
        assert!((0..spec.len()).all(|i| f.delta(i) == 0.0));
    }

    #[test]
    fn full_horizon_factors_are_consistent() {
        // With H = t/2 the slabs meet; Z^H is the mass of u at t/2.
        let p = ModelParams::new(3, 0.3);
        let spec = BoxSpec::new(3, 6).unwrap();
        let field = BrownianField::new(4, 3);
        let k = lattice_kernel(spec, 4.0, 0.125).unwrap();
        let f = delta_lattice(&field, &p, spec, 4.0, 2.0, 0.125, &k).unwrap();
        let mut ev = Evolution::new(&field, 0.3, spec, 0.0, 0.125, Laplacian::Walk).unwrap();
        let mut u = LatticeFunction::delta(spec, &LatticeSite::origin(3)).values;
        for _ in 0..16 {
            ev.step(&mut [&mut u]).unwrap();
        }
        assert_eq!(f.z_fwd, u.iter().sum::<f64>());
        assert!(f.z_bwd.iter().all(|v| v.is_finite() && *v > 0.0));
    }
}
