//! The discrete-time lazy-walk polymer and the empirical lower tail of the
//! continuous-time partition function.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::keyed::{label, Key};
use crate::params::ModelParams;
use crate::partition::{estimate_z_forward, field_seed, path_stream, run_field, PartitionEstimate};
use crate::stats::{ks_one_sample, linear_fit, par_accumulate, par_map, quantile_sorted, Accumulator, KahanSum};
use crate::walk::{alpha_d_streaming, AlphaEstimate, KernelStream, LatticeSite, MAX_DIM};

/// Default number of Gauss–Legendre nodes per axis for the Fourier integral.
pub const DEFAULT_QUAD_POINTS: usize = 64;

/// Minimum number of events for a u bin to enter the tail fit.
pub const MIN_TAIL_EVENTS: u64 = 20;

pub const TAIL_BOOTSTRAP: usize = 1000;

/// Walk with holding probability N/(N+1) and i.i.d. N(0, 1/N) disorder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LazyModel {
    pub d: usize,
    pub n: u32,
    pub beta: f64,
}

impl LazyModel {
    pub fn new(d: usize, n: u32, beta: f64) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(invalid("d", "dimension out of range"));
        }
        if n == 0 {
            return Err(invalid("N", "must be a positive integer"));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(invalid("beta", "must be finite and nonnegative"));
        }
        Ok(LazyModel { d, n, beta })
    }

    pub fn stay_probability(&self) -> f64 {
        self.n as f64 / (self.n as f64 + 1.0)
    }

    pub fn neighbour_probability(&self) -> f64 {
        1.0 / (2.0 * self.d as f64 * (self.n as f64 + 1.0))
    }

    /// tN, which must be a positive integer.
    pub fn steps(&self, t: f64) -> Result<usize> {
        let tn = t * self.n as f64;
        let k = tn.round();
        if !(t > 0.0) || (tn - k).abs() > 1e-9 * tn.max(1.0) || k < 1.0 {
            return Err(invalid("t", format!("tN = {tn} is not a positive integer")));
        }
        Ok(k as usize)
    }

    /// ω(z, k) ~ N(0, 1/N), a pure function of (env_seed, z, k).
    #[inline]
    pub fn disorder(&self, env_seed: u64, z: &[i32], k: usize) -> f64 {
        Key::new(env_seed).with(label::LAZY_DISORDER).with_site(z).with(k as u64).normal() / (self.n as f64).sqrt()
    }

    /// One lazy step of `x` in place.
    #[inline]
    fn step<R: Rng + ?Sized>(&self, x: &mut [i32], rng: &mut R) {
        let two_d = 2 * self.d as u64;
        let r = rng.random_range(0..two_d * (self.n as u64 + 1));
        let stay = two_d * self.n as u64;
        if r >= stay {
            let j = r - stay;
            x[(j / 2) as usize] += if j.is_multiple_of(2) { 1 } else { -1 };
        }
    }
}

/// Z_t^N(ω) for the environment `env_seed`, by Monte Carlo over lazy paths.
/// Paths are drawn from a stream keyed by the same seed.
pub fn z_discrete(model: &LazyModel, t: f64, env_seed: u64, n_paths: usize) -> Result<PartitionEstimate> {
    let steps = model.steps(t)?;
    let mut rng = Key::new(env_seed).with(label::PATHS).stream();
    let beta = model.beta;
    let shift = 0.5 * beta * beta * t;
    let mut acc = Accumulator::new();
    let mut x = [0i32; MAX_DIM];
    for _ in 0..n_paths {
        let x = &mut x[..model.d];
        x.fill(0);
        let mut a = 0.0;
        for k in 0..steps {
            if beta != 0.0 {
                a += model.disorder(env_seed, x, k);
            }
            model.step(x, &mut rng);
        }
        acc.push((beta * a - shift).exp());
    }
    Ok(PartitionEstimate { mean: acc.mean(), stderr: acc.stderr(), n_samples: acc.n, nested: None })
}

/// Environment average of Z_t^N over `n_env` seeded environments.
pub fn z_discrete_mean(
    model: &LazyModel,
    t: f64,
    n_env: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PartitionEstimate> {
    model.steps(t)?;
    let acc = par_accumulate(n_env, |e| {
        z_discrete(model, t, field_seed(seed, e), n_paths).map(|z| z.mean).unwrap_or(f64::NAN)
    });
    Ok(PartitionEstimate { mean: acc.mean(), stderr: acc.stderr(), n_samples: acc.n, nested: Some((n_env, n_paths)) })
}

/// Z_t^N(ω) by exact transfer over the reachable sites (small tN only).
pub fn z_discrete_exact(model: &LazyModel, t: f64, env_seed: u64) -> Result<f64> {
    let steps = model.steps(t)?;
    if steps > 64 {
        return Err(invalid("t", format!("exact transfer limited to tN <= 64, got {steps}")));
    }
    let beta = model.beta;
    if beta == 0.0 {
        return Ok(1.0);
    }
    let damp = (-0.5 * beta * beta / model.n as f64).exp();
    let (stay, hop) = (model.stay_probability(), model.neighbour_probability());
    let mut u: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
    u.insert(vec![0; model.d], 1.0);
    for k in 0..steps {
        for (x, v) in u.iter_mut() {
            *v *= (beta * model.disorder(env_seed, x, k)).exp() * damp;
        }
        if k + 1 == steps {
            break;
        }
        let mut next: BTreeMap<Vec<i32>, f64> = BTreeMap::new();
        for (x, &v) in &u {
            *next.entry(x.clone()).or_default() += stay * v;
            let mut y = x.clone();
            for i in 0..model.d {
                for s in [1, -1] {
                    y[i] += s;
                    *next.entry(y.clone()).or_default() += hop * v;
                    y[i] -= s;
                }
            }
        }
        u = next;
    }
    Ok(u.values().copied().collect::<KahanSum>().value())
}

/// Gauss–Legendre nodes and weights on (a, b).
fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((mid + half * x, half * w));
    }
    out
}

/// (2π)^{-d} ∫ dt / (1 - φ(t)) = 1/(1-q), with φ the characteristic function
/// of one step of the difference of two independent lazy walks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GreenFourier {
    pub d: usize,
    pub n: u32,
    pub quad_points: usize,
    /// Radius of the excluded ball around the origin.
    pub eps: f64,
    /// Analytic contribution of the ball (normalized).
    pub ball_term: f64,
    pub value: f64,
    pub q: f64,
}

/// The cube is split into 2d pyramids with apex at 0 and, in each, written
/// as t = u (1, v) with v in (-1, 1)^{d-1}; the region |t| > ε becomes
/// u > ε/|(1, v)|, on which u^{d-1}/(1 - φ) is smooth.
pub fn green_fourier(d: usize, n: u32, quad_points: usize) -> Result<GreenFourier> {
    if !(3..=MAX_DIM).contains(&d) {
        return Err(invalid("d", "the return probability needs a transient walk, d >= 3"));
    }
    if n == 0 {
        return Err(invalid("N", "must be a positive integer"));
    }
    if quad_points < 4 {
        return Err(invalid("quad_points", "need at least 4 nodes per axis"));
    }
    let eps = (quad_points as f64).powf(-0.5);
    let p = 1.0 / (n as f64 + 1.0);
    let df = d as f64;
    let integrand = |t: &[f64]| {
        let g = 2.0 / df * t.iter().map(|x| (0.5 * x).sin().powi(2)).sum::<f64>();
        let pg = p * g;
        1.0 / (pg * (2.0 - pg))
    };
    let v_nodes = gauss_legendre(quad_points, 0.0, 1.0);
    let m = d - 1;
    let combos = quad_points.pow(m as u32);
    // Parallel over the first v coordinate, summed in index order.
    let partial = par_map(quad_points, |i0| {
        let mut s = KahanSum::default();
        let mut t = vec![0.0; d];
        let per = combos / quad_points;
        for c in 0..per {
            let (mut rest, mut w_v, mut norm2) = (c, v_nodes[i0].1, 1.0 + v_nodes[i0].0.powi(2));
            let mut v = vec![v_nodes[i0].0; m];
            for vj in v.iter_mut().skip(1) {
                let (x, w) = v_nodes[rest % quad_points];
                rest /= quad_points;
                *vj = x;
                w_v *= w;
                norm2 += x * x;
            }
            let u_min = eps / norm2.sqrt();
            for (u, w_u) in gauss_legendre_cached(quad_points, u_min) {
                t[0] = u;
                for (tj, vj) in t[1..].iter_mut().zip(&v) {
                    *tj = u * vj;
                }
                s.add(w_v * w_u * integrand(&t) * u.powi(m as i32));
            }
        }
        s.value()
    });
    let outside = partial.into_iter().collect::<KahanSum>().value() * 2.0 * df * 2f64.powi(m as i32);
    let sphere = 2.0 * PI.powf(df / 2.0) / gamma(df / 2.0);
    let ball = (n as f64 + 1.0) * df * sphere * eps.powf(df - 2.0) / (df - 2.0);
    let norm = (2.0 * PI).powi(d as i32);
    let value = (outside + ball) / norm;
    if !value.is_finite() || value < 1.0 {
        return Err(Error::Quadrature { eps, reason: format!("integral evaluated to {value}") });
    }
    Ok(GreenFourier { d, n, quad_points, eps, ball_term: ball / norm, value, q: 1.0 - 1.0 / value })
}

fn gauss_legendre_cached(n: usize, a: f64) -> impl Iterator<Item = (f64, f64)> {
    // Nodes on (0, 1) mapped affinely onto (a, π).
    thread_local! {
        static NODES: std::cell::RefCell<(usize, Vec<(f64, f64)>)> = const { std::cell::RefCell::new((0, Vec::new())) };
    }
    let base = NODES.with(|c| {
        let mut c = c.borrow_mut();
        if c.0 != n {
            *c = (n, gauss_legendre(n, 0.0, 1.0));
        }
        c.1.clone()
    });
    let len = PI - a;
    base.into_iter().map(move |(x, w)| (a + len * x, len * w))
}

/// q = P(the difference walk returns to 0).
pub fn return_prob_q(d: usize, n: u32, quad_points: usize) -> Result<f64> {
    Ok(green_fourier(d, n, quad_points)?.q)
}

/// Σ_n P(D_n = 0) from exact walk probabilities. With K, K' the numbers of
/// moves of the two walks, P(D_n = 0) = E[q_{K+K'}(0)] for the simple
/// walk, and summing the binomial law of K+K' over n gives
/// 1/(1-q) = Σ_j q_{2j}(0) ((N+1) + r^{2j}/(2-p))/2, r = p/(2-p).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GreenSeries {
    pub d: usize,
    pub n: u32,
    pub n_max: usize,
    pub partial: f64,
    pub tail_estimate: f64,
    pub value: f64,
    /// Interval certainly containing 1/(1-q).
    pub lo: f64,
    pub hi: f64,
}

pub fn green_series(d: usize, n: u32, n_max: usize) -> Result<GreenSeries> {
    if !(3..=MAX_DIM).contains(&d) {
        return Err(invalid("d", "the return probability needs a transient walk, d >= 3"));
    }
    if n == 0 || n_max == 0 {
        return Err(invalid("N", "N and n_max must be positive"));
    }
    let p = 1.0 / (n as f64 + 1.0);
    let r = p / (2.0 - p);
    let weight = |m: usize| 0.5 * ((n as f64 + 1.0) + r.powi(m as i32) / (2.0 - p));
    let mut stream = KernelStream::new(d, n_max)?;
    let mut squares = Vec::with_capacity(n_max);
    let mut sum = KahanSum::default();
    sum.add(weight(0));
    for j in 1..=n_max {
        stream.advance();
        let s = stream.square_mass();
        squares.push(s);
        sum.add(s * weight(2 * j));
    }
    let alpha = AlphaEstimate::from_square_masses(d, &squares);
    let partial = sum.value();
    let w_tail = 0.5 * (n as f64 + 1.0);
    Ok(GreenSeries {
        d,
        n,
        n_max,
        partial,
        tail_estimate: w_tail * alpha.tail_estimate,
        value: partial + w_tail * alpha.tail_estimate,
        lo: partial,
        hi: partial + weight(2 * n_max + 2) * alpha.tail_bound,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GreenCheck {
    pub fourier: GreenFourier,
    pub series: GreenSeries,
    pub diff: f64,
    /// Next-order ball error ε² × ball term plus the series tail uncertainty.
    pub tolerance: f64,
    pub agree: bool,
}

pub fn green_cross_check(d: usize, n: u32, quad_points: usize, n_max: usize) -> Result<GreenCheck> {
    let fourier = green_fourier(d, n, quad_points)?;
    let series = green_series(d, n, n_max)?;
    let diff = (fourier.value - series.value).abs();
    let tolerance = fourier.ball_term * fourier.eps * fourier.eps + (series.hi - series.value);
    Ok(GreenCheck { fourier, series, diff, tolerance, agree: diff <= tolerance })
}

/// e^{β²/N}(1-q)/(1-e^{β²/N}q) = E[e^{(β²/N) L_∞}].
pub fn second_moment_closed(beta: f64, n: u32, q: f64) -> Result<f64> {
    if n == 0 || !(0.0..1.0).contains(&q) {
        return Err(invalid("q", "need N >= 1 and q in [0, 1)"));
    }
    let e = (beta * beta / n as f64).exp();
    if e * q >= 1.0 {
        return Err(Error::Regime(format!("e^(beta^2/N) q = {} >= 1", e * q)));
    }
    Ok(e * (1.0 - q) / (1.0 - e * q))
}

/// Σ_{k>=1} q^{k-1}(1-q) e^{kβ²/N}, summed term by term.
pub fn second_moment_series(beta: f64, n: u32, q: f64) -> Result<f64> {
    second_moment_closed(beta, n, q)?;
    let e = (beta * beta / n as f64).exp();
    let mut s = KahanSum::default();
    let mut term = (1.0 - q) * e;
    let mut k = 0u64;
    while term > 1e-18 * s.value().max(1.0) || k < 10 {
        s.add(term);
        term *= q * e;
        k += 1;
        if k > 100_000_000 {
            break;
        }
    }
    Ok(s.value())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairMoment {
    pub t: f64,
    pub steps: usize,
    /// E[e^{(β²/N) L_{tN}}] over independent walk pairs.
    pub estimate: PartitionEstimate,
    pub closed: f64,
    /// estimate <= closed + 3 stderr.
    pub below_envelope: bool,
}

/// Monte Carlo of E[e^{(β²/N) L_{tN}}], L counting the times i < tN at
/// which two independent lazy walks coincide.
pub fn pair_moment_mc(model: &LazyModel, t: f64, n_pairs: usize, q: f64, seed: u64) -> Result<PairMoment> {
    let steps = model.steps(t)?;
    let closed = second_moment_closed(model.beta, model.n, q)?;
    let b = model.beta * model.beta / model.n as f64;
    let d = model.d;
    let acc = par_accumulate(n_pairs, |i| {
        let mut rng = Key::new(seed).with(label::PAIRS).with(steps as u64).with(i as u64).stream();
        let (mut x, mut y) = ([0i32; MAX_DIM], [0i32; MAX_DIM]);
        let mut l = 0u32;
        for _ in 0..steps {
            if x[..d] == y[..d] {
                l += 1;
            }
            model.step(&mut x[..d], &mut rng);
            model.step(&mut y[..d], &mut rng);
        }
        (b * l as f64).exp()
    });
    let estimate = PartitionEstimate { mean: acc.mean(), stderr: acc.stderr(), n_samples: acc.n, nested: None };
    Ok(PairMoment { t, steps, below_envelope: estimate.mean <= closed + 3.0 * estimate.stderr, estimate, closed })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReturnRow {
    pub n: u32,
    pub q: f64,
    pub n_one_minus_q: f64,
    pub n_log_inv_q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReturnScan {
    pub d: usize,
    pub quad_points: usize,
    pub rows: Vec<ReturnRow>,
    /// Smallest and largest N(1-q) over the scan.
    pub c1: f64,
    pub c2: f64,
    /// |Δ N(1-q)| strictly decreasing along the scan.
    pub increments_shrink: bool,
    /// sqrt(min_N N ln(1/q)): β below this satisfies the standing assumption
    /// for every scanned N (not a claim about the infimum over all N).
    pub beta_bound: f64,
}

pub fn return_scan(d: usize, n_list: &[u32], quad_points: usize) -> Result<ReturnScan> {
    if n_list.is_empty() {
        return Err(invalid("n_list", "empty"));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let q = return_prob_q(d, n, quad_points)?;
        let nf = n as f64;
        rows.push(ReturnRow { n, q, n_one_minus_q: nf * (1.0 - q), n_log_inv_q: -nf * q.ln() });
    }
    let c1 = rows.iter().map(|r| r.n_one_minus_q).fold(f64::INFINITY, f64::min);
    let c2 = rows.iter().map(|r| r.n_one_minus_q).fold(0.0, f64::max);
    let incs: Vec<f64> = rows.windows(2).map(|w| (w[1].n_one_minus_q - w[0].n_one_minus_q).abs()).collect();
    let increments_shrink = incs.windows(2).all(|w| w[1] < w[0]);
    let min_log = rows.iter().map(|r| r.n_log_inv_q).fold(f64::INFINITY, f64::min);
    Ok(ReturnScan { d, quad_points, rows, c1, c2, increments_shrink, beta_bound: min_log.sqrt() })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaitingRow {
    pub n: u32,
    pub n_samples: usize,
    /// KS statistic of the scaled samples against Exp(1).
    pub ks: f64,
    pub p_value: f64,
    /// Exact sup distance between the scaled geometric law and Exp(1).
    pub exact_distance: f64,
}

/// sup_x |P(τ/N <= x) - (1 - e^{-x})| for τ geometric on {1, 2, ...} with
/// success probability 1/(N+1).
pub fn waiting_time_distance(n: u32) -> f64 {
    let rho = n as f64 / (n as f64 + 1.0);
    let mut d = 0.0f64;
    let mut k = 1u64;
    loop {
        let f_exp = 1.0 - (-(k as f64) / n as f64).exp();
        let left = 1.0 - rho.powf(k as f64 - 1.0);
        let right = 1.0 - rho.powf(k as f64);
        d = d.max((f_exp - left).abs()).max((right - f_exp).abs());
        if 1.0 - right < 1e-12 {
            break;
        }
        k += 1;
    }
    d
}

pub fn waiting_time_ks(n_list: &[u32], n_samples: usize, seed: u64) -> Result<Vec<WaitingRow>> {
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(invalid("N", "must be a positive integer"));
            }
            let geo = Geometric::new(1.0 / (n as f64 + 1.0)).map_err(|e| invalid("N", e.to_string()))?;
            let mut rng = Key::new(seed).with(label::EXPONENTIALS).with(n as u64).stream();
            let xs: Vec<f64> = (0..n_samples).map(|_| (geo.sample(&mut rng) + 1) as f64 / n as f64).collect();
            let ks = ks_one_sample(&xs, |x| 1.0 - (-x).exp());
            Ok(WaitingRow {
                n,
                n_samples,
                ks: ks.statistic,
                p_value: ks.p_value,
                exact_distance: waiting_time_distance(n),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailRow {
    pub u: f64,
    /// Number of environments with Z < e^{-u}.
    pub count: u64,
    pub n_env: usize,
    pub p: f64,
    pub log_p: f64,
    /// 95% Wilson interval, in log space.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub usable: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailFit {
    /// log p = a - b x, x = u² (quadratic) or u (exponential).
    pub a: f64,
    pub b: f64,
    pub b_stderr: f64,
    /// Bootstrap 95% interval for b, resampling environments.
    pub b_ci: (f64, f64),
    /// Weighted residual sum of squares.
    pub chi2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    pub params: ModelParams,
    pub t: f64,
    pub n_env: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub rows: Vec<TailRow>,
    pub usable_u_max: f64,
    pub z_mean: f64,
    pub z_stderr: f64,
    pub quadratic: TailFit,
    pub exponential: TailFit,
    /// chi2(exponential) - chi2(quadratic); both models have two parameters.
    pub score: f64,
    pub quadratic_preferred: bool,
    /// Fraction of bootstrap replicates in which the quadratic model fits better.
    pub quadratic_preferred_fraction: f64,
    pub b_positive_95: bool,
    pub monotone: bool,
}

fn wilson(count: u64, n: usize) -> (f64, f64) {
    let (z, nf) = (1.96, n as f64);
    let p = count as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), center + half)
}

fn fit_tail(u: &[f64], counts: &[f64], n: f64, quadratic: bool) -> (f64, f64, f64, f64) {
    let x: Vec<f64> = u.iter().map(|u| if quadratic { u * u } else { *u }).collect();
    let y: Vec<f64> = counts.iter().map(|c| (c / n).ln()).collect();
    let s: Vec<f64> = counts.iter().map(|c| ((1.0 - c / n) / c).sqrt()).collect();
    let f = linear_fit(&x, &y, Some(&s));
    (f.intercept, -f.slope, f.slope_stderr, f.rss)
}

/// Empirical Q(Z_{0,0}^t < e^{-u}) for the continuous-time model, with
/// quadratic and linear fits of its logarithm in u.
pub fn tail_empirical(
    params: &ModelParams,
    t: f64,
    n_env: usize,
    n_paths: usize,
    u_grid: &[f64],
    seed: u64,
) -> Result<TailReport> {
    params.validate()?;
    if u_grid.is_empty() || u_grid[0] < 0.0 || u_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("u_grid", "must be nonempty, nonnegative and strictly increasing"));
    }
    if !(t > 0.0) || n_env == 0 || n_paths == 0 {
        return Err(invalid("t", "need t > 0 and positive sample counts"));
    }
    if params.d >= 3 {
        let alpha = alpha_d_streaming(params.d, 100, 1.0)?;
        if params.lambda() * alpha.partial_sum >= 1.0 {
            return Err(Error::Regime(format!("beta = {} is not in weak disorder", params.beta)));
        }
    } else {
        return Err(invalid("d", "the lower tail experiment needs d >= 3"));
    }
    let origin = LatticeSite::origin(params.d);
    let z: Vec<f64> = par_map(n_env, |e| {
        let field = run_field(seed, e, params.d);
        estimate_z_forward(&field, params, &origin, 0.0, t, n_paths, &mut path_stream(seed, e, 0)).mean
    });
    let mut zacc = Accumulator::new();
    for &v in &z {
        zacc.push(v);
    }
    // level(e) = number of grid points u with Z_e < e^{-u}; the set is a prefix.
    let thresholds: Vec<f64> = u_grid.iter().map(|u| (-u).exp()).collect();
    let mut hist = vec![0u64; u_grid.len() + 1];
    for &v in &z {
        hist[thresholds.iter().take_while(|&&th| v < th).count()] += 1;
    }
    let cumulate = |h: &[u64]| -> Vec<u64> {
        let mut c = vec![0u64; u_grid.len()];
        let mut s = 0;
        for j in (0..u_grid.len()).rev() {
            s += h[j + 1];
            c[j] = s;
        }
        c
    };
    let counts = cumulate(&hist);
    let rows: Vec<TailRow> = u_grid
        .iter()
        .zip(&counts)
        .map(|(&u, &count)| {
            let (lo, hi) = wilson(count, n_env);
            let p = count as f64 / n_env as f64;
            TailRow {
                u,
                count,
                n_env,
                p,
                log_p: p.ln(),
                ci_lo: lo.ln(),
                ci_hi: hi.ln(),
                usable: count >= MIN_TAIL_EVENTS,
            }
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].p <= w[0].p);
    let used = rows.iter().take_while(|r| r.usable && r.count < n_env as u64).count();
    if used < 3 {
        let max_u = if used == 0 { f64::NAN } else { rows[used - 1].u };
        return Err(Error::InsufficientEvents(format!(
            "{used} u bins with >= {MIN_TAIL_EVENTS} events (max usable u = {max_u})"
        )));
    }
    let u_used = &u_grid[..used];
    let nf = n_env as f64;
    let c_used: Vec<f64> = counts[..used].iter().map(|&c| c as f64).collect();
    let quad = fit_tail(u_used, &c_used, nf, true);
    let lin = fit_tail(u_used, &c_used, nf, false);

    let mut rng = Key::new(seed).with(label::BOOTSTRAP).stream();
    let mut b_quad = Vec::with_capacity(TAIL_BOOTSTRAP);
    let mut b_lin = Vec::with_capacity(TAIL_BOOTSTRAP);
    let mut prefer = 0usize;
    for _ in 0..TAIL_BOOTSTRAP {
        let mut h = vec![0u64; hist.len()];
        let (mut left, mut mass) = (n_env as u64, nf);
        for (j, &c) in hist.iter().enumerate() {
            if left == 0 || mass <= 0.0 {
                break;
            }
            let prob = (c as f64 / mass).clamp(0.0, 1.0);
            let draw = if j + 1 == hist.len() {
                left
            } else {
                Binomial::new(left, prob).map_err(|e| invalid("bootstrap", e.to_string()))?.sample(&mut rng)
            };
            h[j] = draw;
            left -= draw;
            mass -= c as f64;
        }
        let cb: Vec<f64> = cumulate(&h)[..used].iter().map(|&c| (c as f64).max(0.5)).collect();
        let q = fit_tail(u_used, &cb, nf, true);
        let l = fit_tail(u_used, &cb, nf, false);
        b_quad.push(q.1);
        b_lin.push(l.1);
        if q.3 < l.3 {
            prefer += 1;
        }
    }
    b_quad.sort_by(f64::total_cmp);
    b_lin.sort_by(f64::total_cmp);
    let ci = |v: &[f64]| (quantile_sorted(v, 0.025), quantile_sorted(v, 0.975));
    let quadratic = TailFit { a: quad.0, b: quad.1, b_stderr: quad.2, b_ci: ci(&b_quad), chi2: quad.3 };
    let exponential = TailFit { a: lin.0, b: lin.1, b_stderr: lin.2, b_ci: ci(&b_lin), chi2: lin.3 };
    Ok(TailReport {
        params: *params,
        t,
        n_env,
        n_paths,
        seed,
        usable_u_max: u_used[used - 1],
        rows,
        z_mean: zacc.mean(),
        z_stderr: zacc.stderr(),
        score: lin.3 - quad.3,
        quadratic_preferred: quad.3 < lin.3,
        quadratic_preferred_fraction: prefer as f64 / TAIL_BOOTSTRAP as f64,
        b_positive_95: quadratic.b_ci.0 > 0.0,
        quadratic,
        exponential,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_law_sums_to_one() {
        for n in [1, 2, 7, 32] {
            let m = LazyModel::new(3, n, 0.2).unwrap();
            let total = m.stay_probability() + 6.0 * m.neighbour_probability();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_beta_is_exactly_one() {
        let m = LazyModel::new(3, 4, 0.0).unwrap();
        let z = z_discrete(&m, 2.5, 17, 50).unwrap();
        assert_eq!(z.mean, 1.0);
        assert_eq!(z.stderr, 0.0);
        assert_eq!(z_discrete_exact(&m, 2.5, 17).unwrap(), 1.0);
        assert_eq!(second_moment_closed(0.0, 4, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn short_horizons_match_enumeration() {
        let m = LazyModel::new(3, 1, 0.7).unwrap();
        let seed = 99;
        let w0 = m.beta * m.disorder(seed, &[0, 0, 0], 0);
        // tN = 1: every path carries the same weight.
        let exact1 = (w0 - 0.5 * m.beta * m.beta).exp();
        let mc1 = z_discrete(&m, 1.0, seed, 10).unwrap();
        assert!((mc1.mean - exact1).abs() < 1e-14 * exact1);
        assert!((z_discrete_exact(&m, 1.0, seed).unwrap() - exact1).abs() < 1e-14 * exact1);
        // tN = 2: the 2d+1 positions of S_1.
        let mut brute = m.stay_probability() * (w0 + m.beta * m.disorder(seed, &[0, 0, 0], 1)).exp();
        for i in 0..3 {
            for s in [1, -1] {
                let mut y = [0; 3];
                y[i] = s;
                brute += m.neighbour_probability() * (w0 + m.beta * m.disorder(seed, &y, 1)).exp();
            }
        }
        brute *= (-m.beta * m.beta).exp();
        let dp = z_discrete_exact(&m, 2.0, seed).unwrap();
        assert!((dp - brute).abs() < 1e-14 * brute);
        let mc = z_discrete(&m, 2.0, seed, 20_000).unwrap();
        assert!(mc.within(brute, 4.0, 0.0), "{mc:?} vs {brute}");
    }

    #[test]
    fn mc_matches_transfer() {
        let m = LazyModel::new(3, 2, 0.5).unwrap();
        let exact = z_discrete_exact(&m, 4.0, 5).unwrap();
        let mc = z_discrete(&m, 4.0, 5, 40_000).unwrap();
        assert!(mc.within(exact, 4.0, 0.0), "{mc:?} vs {exact}");
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let nodes = gauss_legendre(8, 0.0, 2.0);
        let s: f64 = nodes.iter().map(|(x, w)| w * x.powi(15)).sum();
        assert!((s - 2f64.powi(16) / 16.0).abs() < 1e-10);
    }

    #[test]
    fn fourier_and_series_agree() {
        for n in [1, 2, 4] {
            let c = green_cross_check(3, n, DEFAULT_QUAD_POINTS, 200).unwrap();
            assert!(c.fourier.q > 0.0 && c.fourier.q < 1.0);
            assert!(c.agree, "{c:?}");
        }
    }

    #[test]
    fn closed_form_matches_series() {
        for (beta, n, q) in [(0.2, 4, 0.7), (0.5, 2, 0.5), (0.9, 16, 0.95)] {
            let c = second_moment_closed(beta, n, q).unwrap();
            let s = second_moment_series(beta, n, q).unwrap();
            assert!((c - s).abs() < 1e-12 * c);
        }
        assert!(matches!(second_moment_closed(2.0, 1, 0.9), Err(Error::Regime(_))));
    }

    #[test]
    fn waiting_law_distance_shrinks() {
        let d: Vec<f64> = [1, 2, 4, 8, 16].iter().map(|&n| waiting_time_distance(n)).collect();
        for w in d.windows(2) {
            assert!(w[1] < w[0]);
            assert!((w[0] / w[1] - 2.0).abs() < 0.5);
        }
    }
}
