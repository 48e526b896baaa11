//! Monte Carlo estimators of the normalized partition functions and
//! deterministic oracles for their moments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{action_fixed, from_fixed, BrownianField, CacheMode, Environment};
use crate::error::{invalid, Error, Result};
use crate::keyed::{label, Key};
use crate::ode::dopri5;
use crate::params::ModelParams;
use crate::stats::{linear_fit, par_accumulate, par_map, Accumulator};
use crate::walk::{ball_sites, sample_walk, BridgeSampler, LatticeSite, Skeleton, TransitionKernel, TupleIndex};

/// Poisson tail tolerance used by every kernel evaluation in this module.
pub const TAIL_EPS: f64 = 1e-12;

/// Sites kept per environment by the Monte Carlo drivers.
const STREAMING_SITES: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
    /// (n_env, n_paths) when the estimate averages over environments.
    pub nested: Option<(usize, usize)>,
}

impl PartitionEstimate {
    fn from_acc(acc: &Accumulator, scale: f64) -> Self {
        PartitionEstimate { mean: scale * acc.mean(), stderr: scale * acc.stderr(), n_samples: acc.n, nested: None }
    }

    fn nested(mut self, n_env: usize, n_paths: usize) -> Self {
        self.nested = Some((n_env, n_paths));
        self
    }

    /// |mean - target| <= k stderr + slack.
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + slack
    }
}

/// Seed of environment `e` in a run.
pub fn field_seed(seed: u64, e: usize) -> u64 {
    Key::new(seed).with(label::ENV).with(e as u64).value()
}

/// Field of environment `e`, in streaming mode.
pub fn run_field(seed: u64, e: usize, d: usize) -> BrownianField {
    BrownianField::with_mode(field_seed(seed, e), d, CacheMode::Streaming { max_sites: STREAMING_SITES })
}

/// Path stream of environment `e`, replica `r`.
pub fn path_stream(seed: u64, e: usize, replica: u64) -> rand_chacha::ChaCha8Rng {
    Key::new(seed).with(label::PATHS).with(e as u64).with(replica).stream()
}

/// e^{βA - β²(t-s)/2}.
#[inline]
pub fn path_weight<E: Environment + ?Sized>(env: &E, beta: f64, sk: &Skeleton) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let a = from_fixed(action_fixed(env, sk));
    (beta * a - 0.5 * beta * beta * (sk.end_time - sk.start_time)).exp()
}

/// Cumulative action of `sk` at each of the increasing `times` (inside the
/// skeleton's time span), in fixed point.
pub fn action_prefixes<E: Environment + ?Sized>(env: &E, sk: &Skeleton, times: &[f64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(times.len());
    let mut total = 0i64;
    let mut next = 0usize;
    sk.for_each_segment(|site, a, b| {
        if next >= times.len() || a >= b {
            return;
        }
        let p = env.site_path(site.coords(), a, b);
        let wa = p.ticks_at(a);
        while next < times.len() && times[next] <= b {
            let tau = times[next].max(a);
            out.push(total + p.ticks_at(tau) - wa);
            next += 1;
        }
        total += p.ticks_at(b) - wa;
    });
    while out.len() < times.len() {
        out.push(total);
    }
    out
}

/// Z_{x,s}^{y,t}(ω) = p_{t-s}^{y-x} · E_bridge[e^{βA - β²(t-s)/2}].
#[allow(clippy::too_many_arguments)]
pub fn estimate_z_bridge<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    params: &ModelParams,
    kernel: &TransitionKernel,
    x: &LatticeSite,
    s: f64,
    y: &LatticeSite,
    t: f64,
    n_paths: usize,
    rng: &mut R,
) -> Result<PartitionEstimate> {
    let sampler = BridgeSampler::new(kernel, x, s, y, t, TAIL_EPS)?;
    let p = kernel.p_continuous(t - s, &y.sub(x), TAIL_EPS)?;
    Ok(bridge_with(env, params.beta, &sampler, p, n_paths, rng))
}

fn bridge_with<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    beta: f64,
    sampler: &BridgeSampler<'_>,
    p: f64,
    n_paths: usize,
    rng: &mut R,
) -> PartitionEstimate {
    let mut acc = Accumulator::new();
    for _ in 0..n_paths {
        let sk = sampler.sample(rng);
        acc.push(path_weight(env, beta, &sk));
    }
    PartitionEstimate::from_acc(&acc, p)
}

/// Z_{x,s}^t(ω): average of e^{βA - β²(t-s)/2} over free walks.
pub fn estimate_z_forward<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    params: &ModelParams,
    x: &LatticeSite,
    s: f64,
    t: f64,
    n_paths: usize,
    rng: &mut R,
) -> PartitionEstimate {
    let mut acc = Accumulator::new();
    for _ in 0..n_paths {
        let sk = sample_walk(x, s, t, rng);
        acc.push(path_weight(env, params.beta, &sk));
    }
    PartitionEstimate::from_acc(&acc, 1.0)
}

/// Z_{s}^{y,t}(ω) with s = s_cutoff: walks ending at (y, t), sampled as
/// reversed free walks.
pub fn estimate_z_backward<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    params: &ModelParams,
    y: &LatticeSite,
    t: f64,
    s_cutoff: f64,
    n_paths: usize,
    rng: &mut R,
) -> PartitionEstimate {
    let mut acc = Accumulator::new();
    for _ in 0..n_paths {
        let sk = sample_walk(y, -t, -s_cutoff, rng).time_reversed();
        acc.push(path_weight(env, params.beta, &sk));
    }
    PartitionEstimate::from_acc(&acc, 1.0)
}

/// Environment average of Z_{0,0}^t over `n_env` seeded fields.
pub fn mean_forward(params: &ModelParams, t: f64, n_env: usize, n_paths: usize, seed: u64) -> PartitionEstimate {
    let o = LatticeSite::origin(params.d);
    let acc = par_accumulate(n_env, |e| {
        let field = run_field(seed, e, params.d);
        estimate_z_forward(&field, params, &o, 0.0, t, n_paths, &mut path_stream(seed, e, 0)).mean
    });
    PartitionEstimate::from_acc(&acc, 1.0).nested(n_env, n_paths)
}

/// Sample covariance of Z^t and Z^{t+Δ} - Z^t across environments, with the
/// same walks used for both times.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub covariance: f64,
    pub stderr: f64,
    pub n_env: usize,
}

pub fn martingale_check(
    params: &ModelParams,
    t: f64,
    delta: f64,
    n_env: usize,
    n_paths: usize,
    seed: u64,
) -> MartingaleCheck {
    let o = LatticeSite::origin(params.d);
    let pairs: Vec<(f64, f64)> = par_map(n_env, |e| {
        let field = run_field(seed, e, params.d);
        let mut rng = path_stream(seed, e, 0);
        let mut z = [Accumulator::new(), Accumulator::new()];
        for _ in 0..n_paths {
            let sk = sample_walk(&o, 0.0, t + delta, &mut rng);
            let a = action_prefixes(&field, &sk, &[t, t + delta]);
            let b = params.beta;
            z[0].push((b * from_fixed(a[0]) - 0.5 * b * b * t).exp());
            z[1].push((b * from_fixed(a[1]) - 0.5 * b * b * (t + delta)).exp());
        }
        (z[0].mean(), z[1].mean() - z[0].mean())
    });
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(sa, sb), (a, b)| (sa + a / n, sb + b / n));
    let prods: Accumulator = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).collect();
    MartingaleCheck { covariance: prods.mean() * n / (n - 1.0).max(1.0), stderr: prods.stderr(), n_env }
}

/// Result of the Chapman–Kolmogorov check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkReport {
    pub lhs: PartitionEstimate,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub residual: f64,
    /// 1 - Σ_{box} p_{u-s}^{z-x}.
    pub truncation: f64,
    pub budget: f64,
    pub violated: bool,
}

/// Largest truncated p-mass accepted by [`chapman_kolmogorov_check`].
pub const CK_TRUNCATION_TOL: f64 = 1e-3;

/// Compares Z_{x,s}^t with Σ_{|z-x|_1 <= box} Z_{x,s}^{z,u} Z_{z,u}^t.
#[allow(clippy::too_many_arguments)]
pub fn chapman_kolmogorov_check<E: Environment + ?Sized, R: Rng + ?Sized>(
    env: &E,
    params: &ModelParams,
    kernel: &TransitionKernel,
    x: &LatticeSite,
    s: f64,
    u: f64,
    t: f64,
    box_radius: usize,
    n_paths: usize,
    rng: &mut R,
) -> Result<CkReport> {
    if !(s < u && u < t) {
        return Err(invalid("u", "need s < u < t"));
    }
    let sites = ball_sites(x, box_radius);
    let table = kernel.p_continuous_table(u - s, TAIL_EPS)?;
    let mass: f64 = sites.iter().map(|z| table.get(z.sub(x).coords()).unwrap_or(0.0)).sum();
    let truncation = (1.0 - mass).max(0.0);
    if truncation > CK_TRUNCATION_TOL {
        return Err(Error::BoxTooSmall { error: truncation, tolerance: CK_TRUNCATION_TOL });
    }
    let lhs = estimate_z_forward(env, params, x, s, t, n_paths, rng);
    let mut rhs = 0.0;
    let mut var = 0.0;
    for z in &sites {
        let p = table.get(z.sub(x).coords()).unwrap_or(0.0);
        if p == 0.0 {
            continue;
        }
        let sampler = BridgeSampler::new(kernel, x, s, z, u, TAIL_EPS)?;
        let a = bridge_with(env, params.beta, &sampler, p, n_paths, rng);
        let b = estimate_z_forward(env, params, z, u, t, n_paths, rng);
        rhs += a.mean * b.mean;
        var +=
            a.mean.powi(2) * b.stderr.powi(2) + b.mean.powi(2) * a.stderr.powi(2) + a.stderr.powi(2) * b.stderr.powi(2);
    }
    let rhs_stderr = var.sqrt();
    let residual = (lhs.mean - rhs).abs();
    let budget = 3.0 * (lhs.stderr.powi(2) + var).sqrt() + truncation * lhs.mean.max(1.0) + 1e-12;
    Ok(CkReport { lhs, rhs, rhs_stderr, residual, truncation, budget, violated: residual > budget })
}

/// Unbiased ⟨(Z_{0,0}^t)²⟩: per environment, the product of two independent
/// inner estimates.
pub fn second_moment_mc(params: &ModelParams, t: f64, n_env: usize, n_paths: usize, seed: u64) -> PartitionEstimate {
    let o = LatticeSite::origin(params.d);
    let acc = par_accumulate(n_env, |e| {
        let field = run_field(seed, e, params.d);
        let z1 = estimate_z_forward(&field, params, &o, 0.0, t, n_paths, &mut path_stream(seed, e, 1)).mean;
        let z2 = estimate_z_forward(&field, params, &o, 0.0, t, n_paths, &mut path_stream(seed, e, 2)).mean;
        z1 * z2
    });
    PartitionEstimate::from_acc(&acc, 1.0).nested(n_env, n_paths)
}

/// Time spent together on [start, end] by two walks with that common span.
pub fn collision_time(a: &Skeleton, b: &Skeleton) -> f64 {
    let mut pa = a.start_site.clone();
    let mut pb = b.start_site.clone();
    let (mut i, mut j) = (0usize, 0usize);
    let mut now = a.start_time;
    let mut total = 0.0;
    loop {
        let ta = a.jump_times.get(i).copied().unwrap_or(f64::INFINITY);
        let tb = b.jump_times.get(j).copied().unwrap_or(f64::INFINITY);
        let next = ta.min(tb).min(a.end_time);
        if pa == pb {
            total += next - now;
        }
        if next >= a.end_time {
            return total;
        }
        if ta <= tb {
            pa.apply(a.steps[i]);
            i += 1;
        } else {
            pb.apply(b.steps[j]);
            j += 1;
        }
        now = next;
    }
}

/// E[e^{β² L_t}] by independent walk pairs from the origin.
pub fn collision_mc(params: &ModelParams, t: f64, n_pairs: usize, seed: u64) -> PartitionEstimate {
    let o = LatticeSite::origin(params.d);
    let b2 = params.beta * params.beta;
    let acc = par_accumulate(n_pairs, |i| {
        if b2 == 0.0 {
            return 1.0;
        }
        let mut rng = Key::new(seed).with(label::PAIRS).with(i as u64).stream();
        let a = sample_walk(&o, 0.0, t, &mut rng);
        let b = sample_walk(&o, 0.0, t, &mut rng);
        (b2 * collision_time(&a, &b)).exp()
    });
    PartitionEstimate::from_acc(&acc, 1.0)
}

/// Deterministic ⟨(Z^t)²⟩ with an estimate of the box truncation error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleValue {
    pub value: f64,
    pub truncation_error: f64,
}

/// Relative truncation error tolerated by [`second_moment_oracle`].
pub const ORACLE_BOX_TOL: f64 = 1e-6;
const ORACLE_ODE_TOL: f64 = 1e-10;

/// v(τ, 0) for v' = Gv + β² 1_{0} v on the 1-norm ball of radius R (v = 1
/// outside), G the generator of the rate-2 simple walk. States are the
/// symmetry classes of the ball.
pub fn second_moment_profile(params: &ModelParams, times: &[f64], box_radius: usize) -> Result<Vec<f64>> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|&t| t < 0.0) {
        return Err(invalid("t", "times must be nonnegative and increasing"));
    }
    let b2 = params.beta * params.beta;
    if b2 == 0.0 {
        return Ok(vec![1.0; times.len()]);
    }
    let index = TupleIndex::new(params.d, box_radius.max(1))?;
    let n0 = index.class_len(0);
    let n1 = index.class_len(1);
    let two_d = 2 * params.d;
    let rate = 2.0 / two_d as f64;
    // u = v - 1 vanishes outside the ball.
    let rhs = |u: &[f64], du: &mut [f64]| {
        for (parity, base, other) in [(0usize, 0usize, n0), (1, n0, 0)] {
            let len = if parity == 0 { n0 } else { n1 };
            for i in 0..len {
                let mut s = 0.0;
                for &j in index.neighbours(parity, i) {
                    if j != crate::walk::OUTSIDE {
                        s += u[other + j as usize];
                    }
                }
                du[base + i] = rate * (s - two_d as f64 * u[base + i]);
            }
        }
        du[0] += b2 * (1.0 + u[0]);
    };
    let mut u = vec![0.0; n0 + n1];
    let mut out = vec![0.0; times.len()];
    dopri5(rhs, &mut u, 0.0, times, ORACLE_ODE_TOL, ORACLE_ODE_TOL, |i, u| out[i] = 1.0 + u[0])?;
    Ok(out)
}

/// ⟨(Z_{0,0}^t)²⟩ = E exp(β² L_t) from the truncated ODE; the truncation
/// error is estimated against a ball of radius 3R/4.
pub fn second_moment_oracle(params: &ModelParams, t: f64, box_radius: usize) -> Result<OracleValue> {
    second_moment_oracle_tol(params, t, box_radius, ORACLE_BOX_TOL)
}

pub fn second_moment_oracle_tol(params: &ModelParams, t: f64, box_radius: usize, rel_tol: f64) -> Result<OracleValue> {
    let v = second_moment_profile(params, &[t], box_radius)?[0];
    let small = second_moment_profile(params, &[t], (3 * box_radius / 4).max(1))?[0];
    let truncation_error = (v - small).abs();
    if truncation_error > rel_tol * v {
        return Err(Error::BoxTooSmall { error: truncation_error / v, tolerance: rel_tol });
    }
    Ok(OracleValue { value: v, truncation_error })
}

/// lim_{t→∞} E e^{β² L_t} for the rate-2 difference walk, whose discrete
/// skeleton returns to 0 with probability q = α_d/(1+α_d): each visit lasts
/// Exp(2), so the limit is (1-q)m/(1-qm) with m = 2/(2-β²), finite iff
/// β² < 2/(1+α_d).
pub fn second_moment_limit(beta: f64, alpha_d: f64) -> f64 {
    let b2 = beta * beta;
    let q = alpha_d / (1.0 + alpha_d);
    if b2 >= 2.0 {
        return f64::INFINITY;
    }
    let m = 2.0 / (2.0 - b2);
    if q * m >= 1.0 {
        f64::INFINITY
    } else {
        (1.0 - q) * m / (1.0 - q * m)
    }
}

/// One row of the L² rate probe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateRow {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct L2RateTable {
    pub horizon_mult: f64,
    pub rows: Vec<RateRow>,
    /// Fitted decay exponent of ⟨(Z^t - Z^{Mt})²⟩ ~ t^{-θ}.
    pub theta: f64,
    pub theta_stderr: f64,
    pub theta_positive_95: bool,
}

/// ⟨(Z^t - Z^{Mt})²⟩ over a t grid, from two independent replicas per
/// environment (each replica's walks serve every t).
pub fn l2_rate_probe(
    params: &ModelParams,
    t_grid: &[f64],
    horizon_mult: f64,
    n_env: usize,
    n_paths: usize,
    seed: u64,
) -> Result<L2RateTable> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || !(horizon_mult > 1.0) {
        return Err(invalid("t_grid", "need increasing times and horizon_mult > 1"));
    }
    let o = LatticeSite::origin(params.d);
    let mut times: Vec<f64> =
        t_grid.iter().chain(t_grid.iter().map(|t| t * horizon_mult).collect::<Vec<_>>().iter()).copied().collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let pos = |x: f64| times.iter().position(|&t| t == x).unwrap();
    let idx: Vec<(usize, usize)> = t_grid.iter().map(|&t| (pos(t), pos(t * horizon_mult))).collect();
    let t_end = *times.last().unwrap();
    let b = params.beta;
    let per_env: Vec<Vec<f64>> = par_map(n_env, |e| {
        let field = run_field(seed, e, params.d);
        let mut diffs = vec![[0.0f64; 2]; t_grid.len()];
        for r in 0..2 {
            let mut rng = path_stream(seed, e, 1 + r as u64);
            let mut z = vec![0.0; times.len()];
            for _ in 0..n_paths {
                let sk = sample_walk(&o, 0.0, t_end, &mut rng);
                let a = action_prefixes(&field, &sk, &times);
                for (k, &tk) in times.iter().enumerate() {
                    z[k] += (b * from_fixed(a[k]) - 0.5 * b * b * tk).exp();
                }
            }
            for (g, &(i, j)) in idx.iter().enumerate() {
                diffs[g][r] = (z[i] - z[j]) / n_paths as f64;
            }
        }
        diffs.iter().map(|d| d[0] * d[1]).collect()
    });
    let rows: Vec<RateRow> = t_grid
        .iter()
        .enumerate()
        .map(|(g, &t)| {
            let acc: Accumulator = per_env.iter().map(|v| v[g]).collect();
            RateRow { t, mean: acc.mean(), stderr: acc.stderr() }
        })
        .collect();
    let usable: Vec<&RateRow> = rows.iter().filter(|r| r.mean > 0.0 && r.stderr > 0.0).collect();
    let (theta, theta_stderr) = if usable.len() >= 2 {
        let x: Vec<f64> = usable.iter().map(|r| r.t.ln()).collect();
        let y: Vec<f64> = usable.iter().map(|r| r.mean.ln()).collect();
        let s: Vec<f64> = usable.iter().map(|r| r.stderr / r.mean).collect();
        let fit = linear_fit(&x, &y, Some(&s));
        (-fit.slope, fit.slope_stderr)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(L2RateTable { horizon_mult, rows, theta, theta_stderr, theta_positive_95: theta - 1.645 * theta_stderr > 0.0 })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositivityReport {
    pub t_grid: Vec<f64>,
    /// Per environment, min over the t grid of the Z^t estimate.
    pub minima: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub prob_below: Vec<f64>,
    pub all_positive: bool,
}

pub fn positivity_probe(
    params: &ModelParams,
    t_grid: &[f64],
    eps_grid: &[f64],
    n_env: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PositivityReport> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t_grid", "need increasing times"));
    }
    let o = LatticeSite::origin(params.d);
    let t_end = *t_grid.last().unwrap();
    let b = params.beta;
    let minima: Vec<f64> = par_map(n_env, |e| {
        let field = run_field(seed, e, params.d);
        let mut rng = path_stream(seed, e, 0);
        let mut z = vec![0.0; t_grid.len()];
        for _ in 0..n_paths {
            let sk = sample_walk(&o, 0.0, t_end, &mut rng);
            let a = action_prefixes(&field, &sk, t_grid);
            for (k, &tk) in t_grid.iter().enumerate() {
                z[k] += (b * from_fixed(a[k]) - 0.5 * b * b * tk).exp();
            }
        }
        z.iter().map(|v| v / n_paths as f64).fold(f64::INFINITY, f64::min)
    });
    let prob_below = eps_grid
        .iter()
        .map(|&eps| minima.iter().filter(|&&m| m < eps).count() as f64 / minima.len().max(1) as f64)
        .collect();
    Ok(PositivityReport {
        t_grid: t_grid.to_vec(),
        all_positive: minima.iter().all(|&m| m > 0.0),
        minima,
        eps_grid: eps_grid.to_vec(),
        prob_below,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn beta_zero_is_exact() {
        let p = ModelParams::new(3, 0.0);
        let f = BrownianField::new(1, 3);
        let k = TransitionKernel::build(3, 40, 40).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let o = LatticeSite::origin(3);
        let y = LatticeSite::new(&[1, 1, 0]);
        let z = estimate_z_forward(&f, &p, &o, 0.0, 3.0, 50, &mut rng);
        assert_eq!((z.mean, z.stderr), (1.0, 0.0));
        let zb = estimate_z_bridge(&f, &p, &k, &o, 0.0, &y, 2.0, 50, &mut rng).unwrap();
        assert_eq!(zb.mean, k.p_continuous(2.0, &y, TAIL_EPS).unwrap());
        assert_eq!(zb.stderr, 0.0);
        assert_eq!(estimate_z_backward(&f, &p, &o, 1.0, -2.0, 20, &mut rng).mean, 1.0);
        assert_eq!(second_moment_profile(&p, &[1.0, 5.0], 6).unwrap(), vec![1.0, 1.0]);
        assert_eq!(collision_mc(&p, 2.0, 100, 3).mean, 1.0);
    }

    #[test]
    fn prefixes_match_split_actions() {
        let f = BrownianField::new(8, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sk = sample_walk(&LatticeSite::origin(2), 0.0, 6.0, &mut rng);
        let times = [0.5, 2.0, 3.25, 6.0];
        let pre = action_prefixes(&f, &sk, &times);
        for (k, &t) in times.iter().enumerate() {
            let (l, _) = sk.split_at(t);
            assert_eq!(pre[k], action_fixed(&f, &l));
        }
    }

    #[test]
    fn collision_time_of_identical_paths_is_full() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let sk = sample_walk(&LatticeSite::origin(3), 0.0, 4.0, &mut rng);
        assert!((collision_time(&sk, &sk) - 4.0).abs() < 1e-12);
        let (l, r) = sk.split_at(1.5);
        let other = sample_walk(&LatticeSite::origin(3), 0.0, 4.0, &mut rng);
        let (ol, or) = other.split_at(1.5);
        let whole = collision_time(&sk, &other);
        assert!((whole - collision_time(&l, &ol) - collision_time(&r, &or)).abs() < 1e-12);
    }

    #[test]
    fn oracle_short_time_expansion() {
        // E e^{b L_t} = 1 + b t + b (b - 2) t²/2 + O(t³) for small t (first
        // jump of the difference walk at rate 2).
        let p = ModelParams::new(3, 0.5);
        let b = 0.25;
        let t = 1e-2;
        let v = second_moment_profile(&p, &[t], 8).unwrap()[0];
        let approx = 1.0 + b * t + b * (b - 2.0) * t * t / 2.0;
        assert!((v - approx).abs() < 1e-6, "{v} {approx}");
    }

    #[test]
    fn oracle_tends_to_renewal_limit() {
        let alpha = 0.516386;
        let p = ModelParams::new(3, 0.6);
        let v = second_moment_profile(&p, &[400.0], 120).unwrap()[0];
        let lim = second_moment_limit(0.6, alpha);
        assert!(v < lim && lim - v < 0.01 * lim, "{v} {lim}");
    }
}
