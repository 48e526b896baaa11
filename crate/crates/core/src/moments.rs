//! Closed-form constants and gap moments A(t, l, r), with numerical checks
//! of the bounds they satisfy.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::keyed::{label, Key};
use crate::params::ModelParams;
use crate::stats::{par_accumulate, Accumulator, KahanSum};
use crate::walk::{iota, j_window, poisson_log_weight, poisson_tail_steps, KernelStream, LatticeSite, TupleIndex};

pub use crate::params::lambda;

/// Largest jump count accepted by [`a_quadrature`].
pub const QUADRATURE_MAX_L: usize = 12;

/// β²/((1-ν₁)((2-ν)(1-ν₁) - β²)); an error when the denominator is not
/// positive.
pub fn psi(beta: f64, nu: f64, nu1: f64) -> Result<f64> {
    let b2 = beta * beta;
    let den = (1.0 - nu1) * ((2.0 - nu) * (1.0 - nu1) - b2);
    if !(den > 0.0) {
        return Err(Error::Regime(format!("psi denominator {den} <= 0 at beta={beta}, nu={nu}, nu1={nu1}")));
    }
    Ok(b2 / den)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LambdaProductReport {
    pub beta: f64,
    pub r: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub passed: bool,
}

/// E Π_{j<=r} (e^{β²τ_j} - 1) over i.i.d. Exp(1) τ_j, against λ^r.
pub fn lambda_product_check(beta: f64, r: usize, n_samples: usize, seed: u64) -> Result<LambdaProductReport> {
    if r == 0 {
        return Err(invalid("r", "must be at least 1"));
    }
    if !(beta < 1.0) {
        return Err(invalid("beta", "lambda needs beta < 1"));
    }
    let b2 = beta * beta;
    let acc = par_accumulate(n_samples, |i| {
        if b2 == 0.0 {
            return 0.0;
        }
        let mut rng = Key::new(seed).with(label::EXPONENTIALS).with(i as u64).stream();
        (0..r)
            .map(|_| {
                let tau: f64 = Exp1.sample(&mut rng);
                (b2 * tau).exp_m1()
            })
            .product()
    });
    let target = lambda(beta).powi(r as i32);
    Ok(LambdaProductReport {
        beta,
        r,
        estimate: acc.mean(),
        stderr: acc.stderr(),
        target,
        passed: (acc.mean() - target).abs() <= 3.0 * acc.stderr() + 1e-15,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMethod {
    Mc,
    Quadrature,
}

/// A(t, l, r) with its provenance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GapMoment {
    pub t: f64,
    pub l: usize,
    pub r: usize,
    pub value: f64,
    /// Monte Carlo standard error, or the quadrature tolerance.
    pub stderr: f64,
    pub method: GapMethod,
}

fn check_cell(t: f64, l: usize, r: usize, beta: f64) -> Result<()> {
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    if r == 0 || r > l + 1 {
        return Err(invalid("r", "need 1 <= r <= l + 1"));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(invalid("beta", "need 0 <= beta < 1"));
    }
    Ok(())
}

/// Gap product for sorted jump times `s` on (0, t): gaps t_j = s_j - s_{j-1}
/// (s_0 = 0), t_{l+1} = t - s_l, t_0 = 0.
fn gap_product(t: f64, s: &[f64], r: usize, b2: f64) -> f64 {
    let gap = |j: usize| -> f64 {
        if j == 0 {
            0.0
        } else if j <= s.len() {
            s[j - 1] - if j >= 2 { s[j - 2] } else { 0.0 }
        } else {
            t - s.last().copied().unwrap_or(0.0)
        }
    };
    let mut p = 1.0;
    for j in 1..r.saturating_sub(1) {
        p *= (b2 * gap(j)).exp_m1();
    }
    p * (b2 * (gap(r - 1) + gap(r))).exp()
}

/// Monte Carlo A(t, l, r): jump times given n_t = l are uniform order
/// statistics on (0, t).
pub fn a_mc<R: Rng + ?Sized>(
    t: f64,
    l: usize,
    r: usize,
    beta: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<GapMoment> {
    check_cell(t, l, r, beta)?;
    let b2 = beta * beta;
    let mut acc = Accumulator::new();
    let mut s = vec![0.0; l];
    for _ in 0..n_samples {
        for v in s.iter_mut() {
            *v = t * rng.random::<f64>();
        }
        s.sort_by(f64::total_cmp);
        acc.push(gap_product(t, &s, r, b2));
    }
    Ok(GapMoment { t, l, r, value: acc.mean(), stderr: acc.stderr(), method: GapMethod::Mc })
}

/// Chebyshev interpolant on [0, t].
#[derive(Debug, Clone)]
struct Cheb {
    t: f64,
    coef: Vec<f64>,
}

const CHEB_N: usize = 64;

impl Cheb {
    fn fit(t: f64, f: impl Fn(f64) -> f64) -> Self {
        let n = CHEB_N;
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let x = (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos();
                f(0.5 * t * (x + 1.0))
            })
            .collect();
        // cos(π j (2k+1) / 2n) through an exact reduction of j(2k+1) mod 4n
        let table: Vec<f64> = (0..4 * n).map(|m| (std::f64::consts::PI * m as f64 / (2 * n) as f64).cos()).collect();
        let coef = (0..n)
            .map(|j| {
                let s: KahanSum = (0..n).map(|k| vals[k] * table[(j * (2 * k + 1)) % (4 * n)]).collect();
                s.value() * if j == 0 { 1.0 } else { 2.0 } / n as f64
            })
            .collect();
        Cheb { t, coef }
    }

    fn eval(&self, s: f64) -> f64 {
        let x = (2.0 * s / self.t - 1.0).clamp(-1.0, 1.0);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coef.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        x * b1 - b2 + self.coef[0]
    }
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Adaptive Gauss–Kronrod (7, 15) on [a, b].
fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let (f1, f2) = (f(c - h * GK_X[i]), f(c + h * GK_X[i]));
        k += GK_WK[i] * (f1 + f2);
        if i % 2 == 1 {
            g += GK_WG[i / 2] * (f1 + f2);
        }
    }
    let (k, g) = (k * h, g * h);
    let err = k.abs() * (200.0 * (k - g).abs() / k.abs().max(f64::MIN_POSITIVE)).min(1.0).powf(1.5);
    if err <= tol.max(1e-15 * k.abs()) || depth == 0 {
        k
    } else {
        gauss_kronrod(f, a, c, 0.5 * tol, depth - 1) + gauss_kronrod(f, c, b, 0.5 * tol, depth - 1)
    }
}

/// I(t, l, r) as a chain of one-dimensional convolutions
/// g^{*(r-2)} * e * e * 1^{*(l+1-r)} (r >= 2) or e * 1^{*l} (r = 1), with
/// e(s) = e^{β²s}, g = e - 1; every intermediate function is held as a
/// Chebyshev interpolant on [0, t]. Chains are memoized per (t, β).
pub struct GapQuadrature {
    t: f64,
    b2: f64,
    memo: HashMap<(usize, usize, usize), Cheb>,
}

impl GapQuadrature {
    pub fn new(t: f64, beta: f64) -> Self {
        GapQuadrature { t, b2: beta * beta, memo: HashMap::new() }
    }

    fn factor_counts(l: usize, r: usize) -> (usize, usize, usize) {
        if r == 1 {
            (l, 1, 0)
        } else {
            (l + 1 - r, 2, r - 2)
        }
    }

    /// Chebyshev form of e^{-β²s} (ones^{n_one} * e^{n_e} * g^{n_g})(s).
    /// Dividing out the growth keeps the absolute error of the interpolant
    /// uniform in relative terms across [0, t].
    fn chain(&mut self, n_one: usize, n_e: usize, n_g: usize) -> Cheb {
        if let Some(c) = self.memo.get(&(n_one, n_e, n_g)) {
            return c.clone();
        }
        let (t, b2) = (self.t, self.b2);
        // (f * F)(τ) e^{-β²τ} = ∫_0^τ f(s) e^{-β²s} H(τ - s) ds
        let result = if n_g > 0 {
            let inner = self.chain(n_one, n_e, n_g - 1);
            convolve(t, &inner, move |s| -(-b2 * s).exp_m1())
        } else if n_e > 0 && (n_one > 0 || n_e > 1) {
            let inner = self.chain(n_one, n_e - 1, 0);
            convolve(t, &inner, |_| 1.0)
        } else if n_e == 1 {
            Cheb::fit(t, |_| 1.0)
        } else {
            // 1^{*k} = s^{k-1}/(k-1)!
            let k = n_one as i32;
            let fact: f64 = (1..n_one).map(|i| i as f64).product();
            Cheb::fit(t, move |s| s.powi(k - 1) / fact * (-b2 * s).exp())
        };
        self.memo.insert((n_one, n_e, n_g), result.clone());
        result
    }

    pub fn integral(&mut self, l: usize, r: usize) -> f64 {
        let (n_one, n_e, n_g) = Self::factor_counts(l, r);
        if self.b2 == 0.0 {
            if n_g > 0 {
                return 0.0;
            }
            return self.t.powi(l as i32) / (1..=l).map(|i| i as f64).product::<f64>();
        }
        (self.b2 * self.t).exp() * self.chain(n_one, n_e, n_g).eval(self.t)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GoldenCase {
    pub t: f64,
    pub l: usize,
    pub r: usize,
    pub quadrature: f64,
    pub closed: f64,
    pub abs_err: f64,
}

/// I(t, 1, 1) = (e^{β²t} - 1)/β² and I(t, 1, 2) = t e^{β²t} against the
/// quadrature.
pub fn golden_i_cases(t: f64, beta: f64) -> Result<Vec<GoldenCase>> {
    if !(t > 0.0) || !(beta > 0.0) {
        return Err(invalid("beta", "golden cases need t > 0 and beta > 0"));
    }
    let b = beta * beta;
    let mut q = GapQuadrature::new(t, beta);
    Ok([(1, 1, (b * t).exp_m1() / b), (1, 2, t * (b * t).exp())]
        .into_iter()
        .map(|(l, r, closed)| {
            let quadrature = q.integral(l, r);
            GoldenCase { t, l, r, quadrature, closed, abs_err: (quadrature - closed).abs() }
        })
        .collect())
}

fn convolve(t: f64, inner: &Cheb, f: impl Fn(f64) -> f64) -> Cheb {
    Cheb::fit(t, |tau| {
        if tau <= 0.0 {
            return 0.0;
        }
        gauss_kronrod(&|s: f64| f(s) * inner.eval(tau - s), 0.0, tau, 0.0, 8)
    })
}

/// A(t, l, r) = l!/t^l · I(t, l, r) by quadrature.
pub fn a_quadrature(t: f64, l: usize, r: usize, beta: f64) -> Result<GapMoment> {
    check_cell(t, l, r, beta)?;
    if l > QUADRATURE_MAX_L {
        return Err(Error::QuadratureTooLarge { l, max: QUADRATURE_MAX_L });
    }
    let mut q = GapQuadrature::new(t, beta);
    Ok(quadrature_cell(&mut q, l, r))
}

fn quadrature_cell(q: &mut GapQuadrature, l: usize, r: usize) -> GapMoment {
    let scale: f64 = (1..=l).map(|i| i as f64 / q.t).product();
    GapMoment { t: q.t, l, r, value: scale * q.integral(l, r), stderr: 1e-9, method: GapMethod::Quadrature }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCell {
    pub t: f64,
    pub l: usize,
    pub r: usize,
    pub a: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ABoundReport {
    pub beta: f64,
    pub cells: Vec<BoundCell>,
    /// max A / ((l+1)² e^{β²t} β^{2r} t^r / ((l+1)...(l+r))) over cells with
    /// a positive bound shape.
    pub fitted_c: f64,
    /// Cells whose bound shape vanishes while A > 0.
    pub violations: Vec<BoundCell>,
    pub psi: Option<f64>,
    pub psi_cells: Vec<BoundCell>,
    /// max A / ψ^r over the cells with νt < l < (2-ν)t, r < ν₁ l.
    pub fitted_c_psi: Option<f64>,
    pub psi_violations: Vec<BoundCell>,
}

/// Fits the constants of both A bounds over a grid. Cells with l beyond the
/// quadrature limit use Monte Carlo with 10^5 samples.
pub fn a_bound_check(t_grid: &[f64], l_grid: &[usize], r_grid: &[usize], params: &ModelParams) -> Result<ABoundReport> {
    let beta = params.beta;
    let b2 = beta * beta;
    let psi_val = psi(beta, params.nu, params.nu1).ok().filter(|p| *p > 0.0);
    let mut cells = Vec::new();
    let mut violations = Vec::new();
    let mut psi_cells = Vec::new();
    let mut psi_violations = Vec::new();
    let mut fitted: f64 = 0.0;
    let mut fitted_psi: f64 = 0.0;
    for (ti, &t) in t_grid.iter().enumerate() {
        let mut quad = GapQuadrature::new(t, beta);
        for &l in l_grid {
            for &r in r_grid {
                if r == 0 || r > l + 1 {
                    continue;
                }
                check_cell(t, l, r, beta)?;
                let a = if l <= QUADRATURE_MAX_L {
                    quadrature_cell(&mut quad, l, r).value
                } else {
                    let mut rng = Key::new(0x0a11).with(ti as u64).with(l as u64).with(r as u64).stream();
                    a_mc(t, l, r, beta, 100_000, &mut rng)?.value
                };
                let rising: f64 = (1..=r).map(|i| (l + i) as f64).product();
                let bound = ((l + 1) as f64).powi(2) * (b2 * t).exp() * b2.powi(r as i32) * t.powi(r as i32) / rising;
                let cell = BoundCell { t, l, r, a, bound };
                if bound > 0.0 {
                    fitted = fitted.max(a / bound);
                } else if a > 0.0 {
                    violations.push(cell.clone());
                }
                let lf = l as f64;
                if params.nu * t < lf && lf < (2.0 - params.nu) * t && (r as f64) < params.nu1 * lf {
                    let pb = psi_val.map_or(0.0, |p| p.powi(r as i32));
                    let pc = BoundCell { bound: pb, ..cell.clone() };
                    if pb > 0.0 {
                        fitted_psi = fitted_psi.max(a / pb);
                    } else if a > 0.0 {
                        psi_violations.push(pc.clone());
                    }
                    psi_cells.push(pc);
                }
                cells.push(cell);
            }
        }
    }
    Ok(ABoundReport {
        beta,
        cells,
        fitted_c: fitted,
        violations,
        psi: psi_val,
        fitted_c_psi: if psi_cells.is_empty() { None } else { Some(fitted_psi) },
        psi_cells,
        psi_violations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvolutionBound {
    pub d: usize,
    pub r_max: usize,
    pub n_max: usize,
    /// Smallest c with LHS(r, n) <= c^r n^{-d/2} on the grid.
    pub c: f64,
    pub argmax: (usize, usize),
    /// Per r, max over n of (n^{d/2} LHS)^{1/r}.
    pub per_r: Vec<f64>,
}

/// Σ_{0<i_1<...<i_r<n} i_1^{-d/2} (i_2-i_1)^{-d/2} ... (n-i_r)^{-d/2},
/// i.e. the (r+1)-fold convolution of k^{-d/2}, for r <= r_max, n <= n_max.
/// Entry [r][n].
pub fn convolution_lhs(d: usize, r_max: usize, n_max: usize) -> Vec<Vec<f64>> {
    let e = d as f64 / 2.0;
    let f: Vec<f64> = (0..=n_max).map(|k| if k == 0 { 0.0 } else { (k as f64).powf(-e) }).collect();
    let mut table = vec![vec![0.0; n_max + 1]; r_max + 1];
    table[0] = f.clone();
    for r in 1..=r_max {
        for n in 0..=n_max {
            let mut s = KahanSum::default();
            for i in 1..n {
                s.add(table[r - 1][i] * f[n - i]);
            }
            table[r][n] = s.value();
        }
    }
    table
}

pub fn convolution_bound_check(d: usize, r_max: usize, n_max: usize) -> Result<ConvolutionBound> {
    if d < 3 {
        return Err(invalid("d", "needs d >= 3"));
    }
    if r_max == 0 || n_max < 2 {
        return Err(invalid("r_max", "need r_max >= 1 and n_max >= 2"));
    }
    let table = convolution_lhs(d, r_max, n_max);
    let e = d as f64 / 2.0;
    let mut per_r = vec![0.0; r_max];
    let mut c = 0.0;
    let mut argmax = (1, 2);
    for r in 1..=r_max {
        for n in (r + 1)..=n_max {
            let v = ((n as f64).powf(e) * table[r][n]).powf(1.0 / r as f64);
            if v > per_r[r - 1] {
                per_r[r - 1] = v;
            }
            if v > c {
                c = v;
                argmax = (r, n);
            }
        }
    }
    Ok(ConvolutionBound { d, r_max, n_max, c, argmax, per_r })
}

/// Extra 1-norm radius beyond the sites of interest so that, up to step n,
/// walks leaving the table and returning change values by a relative amount
/// below `tol` (per-coordinate Hoeffding bound on bridge excursions).
pub fn truncation_margin(d: usize, n: usize, tol: f64) -> usize {
    (d as f64 * ((n as f64 / d as f64) * (1.0 / tol).ln() / 2.0).sqrt()).ceil() as usize
}

const RATIO_TRUNCATION_TOL: f64 = 1e-8;

/// Canonical classes with Euclidean norm <= rho, as (parity, index, norm).
fn classes_within(index: &TupleIndex, rho: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for parity in 0..2 {
        for i in 0..index.class_len(parity) {
            let t = index.tuple(parity, i);
            let n2: f64 = t.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if n2 <= rho {
                out.push((parity, i, n2));
            }
        }
    }
    out
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.75 && sigma < 1.0) {
        return Err(invalid("sigma", "the ratio checks need sigma in (3/4, 1)"));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioRow {
    pub t: f64,
    /// sup over the y window of the checked ratio (normalized as documented
    /// on each check).
    pub sup: f64,
    /// Canonical representative attaining the sup.
    pub argmax: Vec<i32>,
    pub n_sites: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
    /// Single constant valid over the whole t grid.
    pub fitted_c: f64,
    pub n_max: usize,
    pub radius: usize,
}

/// sup over |y| <= t^σ of (p_{t-2t^ξ}^y / p_t^y) / e^{β² t^ξ}, per t.
pub fn p_ratio_check(params: &ModelParams, t_grid: &[f64], xi: f64) -> Result<RatioReport> {
    p_ratio_check_with(params, t_grid, xi, 0, 0)
}

/// As [`p_ratio_check`] with extra kernel steps and radius on top of the
/// automatic coverage.
pub fn p_ratio_check_with(
    params: &ModelParams,
    t_grid: &[f64],
    xi: f64,
    extra_steps: usize,
    extra_radius: usize,
) -> Result<RatioReport> {
    check_sigma(params.sigma)?;
    if !(xi > 0.0 && xi < 1.0) {
        return Err(invalid("xi", "must lie in (0, 1)"));
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| !(t - 2.0 * t.powf(xi) > 0.0)) {
        return Err(invalid("t_grid", "need t > 2 t^xi"));
    }
    let d = params.d;
    let t_top = t_grid.iter().copied().fold(0.0, f64::max);
    let n_max = poisson_tail_steps(t_top, crate::partition::TAIL_EPS) + extra_steps;
    let y_max = t_top.powf(params.sigma);
    let y1 = (y_max * (d as f64).sqrt()).floor() as usize;
    let radius = y1 + truncation_margin(d, n_max, RATIO_TRUNCATION_TOL) + extra_radius;
    let index = std::sync::Arc::new(TupleIndex::new(d, radius)?);
    let mut stream = KernelStream::with_index(index.clone());
    // Mixture accumulators per t: [p_t, p_{t'}] per parity class entry.
    let mut acc: Vec<[Vec<KahanSum>; 2]> = t_grid
        .iter()
        .map(|_| {
            [
                vec![KahanSum::default(); index.class_len(0) + index.class_len(1)],
                vec![KahanSum::default(); index.class_len(0) + index.class_len(1)],
            ]
        })
        .collect();
    let n0 = index.class_len(0);
    for n in 0..=n_max {
        if n > 0 {
            stream.advance();
        }
        let base = if n % 2 == 0 { 0 } else { n0 };
        for (g, &t) in t_grid.iter().enumerate() {
            let tp = t - 2.0 * t.powf(xi);
            let w = poisson_log_weight(n, t).exp();
            let wp = poisson_log_weight(n, tp).exp();
            for (i, &q) in stream.layer().iter().enumerate() {
                acc[g][0][base + i].add(w * q);
                acc[g][1][base + i].add(wp * q);
            }
        }
    }
    let mut rows = Vec::new();
    for (g, &t) in t_grid.iter().enumerate() {
        let rho = t.powf(params.sigma);
        let norm = (params.beta * params.beta * t.powf(xi)).exp();
        let mut row = RatioRow { t, sup: 0.0, argmax: vec![], n_sites: 0 };
        for (parity, i, _) in classes_within(&index, rho) {
            let k = if parity == 0 { i } else { n0 + i };
            let (p, pp) = (acc[g][0][k].value(), acc[g][1][k].value());
            if !(p > 0.0) {
                return Err(Error::Regime(format!("p_t vanished at t={t}")));
            }
            row.n_sites += index.multiplicity(parity, i) as usize;
            let v = pp / p / norm;
            if v > row.sup {
                row.sup = v;
                row.argmax = index.tuple(parity, i).iter().map(|&c| c as i32).collect();
            }
        }
        rows.push(row);
    }
    let fitted_c = rows.iter().map(|r| r.sup).fold(0.0, f64::max);
    Ok(RatioReport { rows, fitted_c, n_max, radius })
}

/// sup of q^y_{m+l} / q^y_{ι(y,l)} over m ∈ J(2t^{ξ₁}), l ∈ J(t - 2t^{ξ₁}),
/// |y| <= t^σ, per t, from streamed kernel layers.
pub fn q_iota_check(params: &ModelParams, t_grid: &[f64], xi1: f64) -> Result<RatioReport> {
    check_sigma(params.sigma)?;
    if !(xi1 > 0.0 && xi1 < 1.0 - params.sigma) {
        return Err(invalid("xi1", "must lie in (0, 1 - sigma)"));
    }
    let d = params.d;
    struct Window {
        ms: Vec<usize>,
        ls: std::ops::RangeInclusive<usize>,
    }
    let windows: Vec<Window> = t_grid
        .iter()
        .map(|&t| Window {
            ms: j_window(2.0 * t.powf(xi1), params.nu).collect(),
            ls: j_window(t - 2.0 * t.powf(xi1), params.nu),
        })
        .collect();
    if windows.iter().any(|w| w.ms.is_empty() || w.ls.is_empty()) {
        return Err(invalid("t_grid", "empty J windows"));
    }
    let n_max = windows.iter().map(|w| w.ms.iter().max().unwrap() + w.ls.end()).max().unwrap();
    let depth = windows.iter().map(|w| *w.ms.iter().max().unwrap()).max().unwrap() + 1;
    let t_top = t_grid.iter().copied().fold(0.0, f64::max);
    let y1 = (t_top.powf(params.sigma) * (d as f64).sqrt()).floor() as usize;
    let radius = y1 + truncation_margin(d, n_max, RATIO_TRUNCATION_TOL);
    let index = std::sync::Arc::new(TupleIndex::new(d, radius)?);
    let sites: Vec<Vec<(usize, usize, f64)>> =
        t_grid.iter().map(|&t| classes_within(&index, t.powf(params.sigma))).collect();
    for (g, &t) in t_grid.iter().enumerate() {
        // ι(y, l) > |y|_1 keeps the denominator positive.
        let y1_t = sites[g].iter().map(|&(p, i, _)| index.tuple(p, i).iter().sum::<u32>() as usize).max().unwrap_or(0);
        if y1_t >= *windows[g].ls.start() {
            return Err(Error::Regime(format!("t={t} too small: |y|_1 reaches the l window")));
        }
    }
    let mut ring: std::collections::VecDeque<Vec<f64>> = std::collections::VecDeque::with_capacity(depth + 1);
    let mut stream = KernelStream::with_index(index.clone());
    ring.push_back(stream.layer().to_vec());
    let mut rows: Vec<RatioRow> =
        t_grid.iter().map(|&t| RatioRow { t, sup: 0.0, argmax: vec![], n_sites: 0 }).collect();
    for (g, s) in sites.iter().enumerate() {
        rows[g].n_sites = s.iter().map(|&(p, i, _)| index.multiplicity(p, i) as usize).sum();
    }
    // layer k sits at ring[ring.len() - 1 - (n - k)]
    for n in 1..=n_max {
        stream.advance();
        if ring.len() == depth + 1 {
            ring.pop_front();
        }
        ring.push_back(stream.layer().to_vec());
        let get = |k: usize, i: usize| -> f64 { ring[ring.len() - 1 - (n - k)].get(i).copied().unwrap_or(0.0) };
        for (g, w) in windows.iter().enumerate() {
            for &m in &w.ms {
                if m > n {
                    continue;
                }
                let l = n - m;
                if !w.ls.contains(&l) {
                    continue;
                }
                for &(parity, i, _) in &sites[g] {
                    if parity != n % 2 {
                        continue;
                    }
                    let tuple = index.tuple(parity, i);
                    let y = LatticeSite::new(&tuple.iter().map(|&v| v as i32).collect::<Vec<_>>());
                    let k = iota(&y, l);
                    let v = get(n, i) / get(k, i);
                    if v > rows[g].sup {
                        rows[g].sup = v;
                        rows[g].argmax = y.coords().to_vec();
                    }
                }
            }
        }
    }
    let fitted_c = rows.iter().map(|r| r.sup).fold(0.0, f64::max);
    Ok(RatioReport { rows, fitted_c, n_max, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// ₁F₁(a; b; z) by its power series (all terms positive here).
    fn hyp1f1(a: f64, b: f64, z: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 0..500 {
            let kf = k as f64;
            term *= (a + kf) / (b + kf) * z / (kf + 1.0);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    /// Inverse Laplace transform of β^{2(r-2)} p^{-(l-1)} (p-β²)^{-r}
    /// (r >= 2) or p^{-l} (p-β²)^{-1} (r = 1).
    fn i_laplace(t: f64, l: usize, r: usize, beta: f64) -> f64 {
        let b = beta * beta;
        let (a, c, pre) = if r == 1 { (l, 1, 1.0) } else { (l - 1, r, b.powi(r as i32 - 2)) };
        let m = a + c;
        let fact: f64 = (1..m).map(|i| i as f64).product();
        pre * t.powi(m as i32 - 1) / fact * hyp1f1(c as f64, m as f64, b * t)
    }

    #[test]
    fn psi_plug_in() {
        assert!((psi(0.2, 0.6, 0.8).unwrap() - 5.0 / 6.0).abs() < 1e-14);
        assert_eq!(psi(0.0, 0.6, 0.8).unwrap(), 0.0);
        assert!(psi(0.6, 0.6, 0.8).is_err());
        assert!(psi(0.3, 0.6, 0.8).unwrap() > psi(0.2, 0.6, 0.8).unwrap());
    }

    #[test]
    fn golden_i_values() {
        let beta: f64 = 0.3;
        let b = beta * beta;
        for &t in &[0.5, 2.0, 7.0] {
            let mut q = GapQuadrature::new(t, beta);
            assert!((q.integral(1, 1) - (b * t).exp_m1() / b).abs() < 1e-12);
            assert!((q.integral(1, 2) - (b * t).exp() * t).abs() < 1e-12);
            let i22 = ((b * t).exp() * t - (b * t).exp() / b + 1.0 / b) / b;
            assert!((q.integral(2, 2) - i22).abs() < 1e-10 * i22.abs().max(1.0));
        }
    }

    #[test]
    fn quadrature_matches_laplace_oracle() {
        for &beta in &[0.2, 0.9] {
            for &t in &[1.0, 12.0] {
                let mut q = GapQuadrature::new(t, beta);
                for l in 0..=QUADRATURE_MAX_L {
                    for r in 1..=l + 1 {
                        if r >= 2 && l == 0 {
                            continue;
                        }
                        let got = q.integral(l, r);
                        let want = if l == 0 { (beta * beta * t).exp() } else { i_laplace(t, l, r, beta) };
                        let scale: f64 = (1..=l).map(|i| i as f64 / t).product();
                        assert!(
                            scale * (got - want).abs() <= 1e-9_f64.max(1e-13 * scale * want),
                            "t={t} l={l} r={r} {got} {want}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn recursion_identity_holds() {
        // I(t, l+1, l+1) = ∫_0^t (e^{β²s} - 1) I(t - s, l, l) ds
        let beta = 0.4;
        let t = 3.0;
        let mut q = GapQuadrature::new(t, beta);
        let lhs = q.integral(4, 4);
        let rhs = gauss_kronrod(
            &|s: f64| (beta * beta * s).exp_m1() * GapQuadrature::new(t - s, beta).integral(3, 3),
            0.0,
            t,
            1e-13,
            10,
        );
        assert!((lhs - rhs).abs() < 1e-9 * lhs);
    }

    #[test]
    fn a_cells_small_cases() {
        let g = a_quadrature(4.0, 0, 1, 0.3).unwrap();
        assert!((g.value - (0.09f64 * 4.0).exp()).abs() < 1e-12);
        for r in 1..=5 {
            let v = a_quadrature(3.0, 6, r, 0.0).unwrap().value;
            assert!((v - if r <= 2 { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mc = a_mc(5.0, 8, 3, 0.3, 200_000, &mut rng).unwrap();
        let qv = a_quadrature(5.0, 8, 3, 0.3).unwrap();
        assert!((mc.value - qv.value).abs() <= 3.0 * mc.stderr + 1e-9);
        assert!(a_quadrature(1.0, 13, 2, 0.3).is_err());
    }

    #[test]
    fn convolution_first_order_matches_double_loop() {
        let table = convolution_lhs(3, 2, 40);
        for n in 2..=40usize {
            let direct: f64 = (1..n).map(|i| (i as f64).powf(-1.5) * ((n - i) as f64).powf(-1.5)).sum();
            assert!((table[1][n] - direct).abs() < 1e-14);
        }
        let mut brute = 0.0;
        let n = 12usize;
        for i1 in 1..n {
            for i2 in i1 + 1..n {
                brute += (i1 as f64).powf(-1.5) * ((i2 - i1) as f64).powf(-1.5) * ((n - i2) as f64).powf(-1.5);
            }
        }
        assert!((table[2][n] - brute).abs() < 1e-14);
    }

    #[test]
    fn lambda_product_small() {
        let rep = lambda_product_check(0.3, 3, 200_000, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert_eq!(lambda_product_check(0.0, 2, 100, 1).unwrap().estimate, 0.0);
    }
}
