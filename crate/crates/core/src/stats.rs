//! Small statistics toolkit shared by the estimators and the checks.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Streaming mean/variance accumulator (Welford). Merging is associative, so
/// parallel partial results combined in a fixed order give identical output
/// for any worker count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.mean(), stderr: self.stderr(), n: self.n }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Fixed chunk size of [`par_accumulate`]; part of the reproducibility
/// contract (results depend on it, not on the thread count).
pub const PAR_CHUNK: usize = 256;

/// Parallel mean/variance of f(0), ..., f(n-1), merged in index order.
pub fn par_accumulate<F>(n: usize, f: F) -> Accumulator
where
    F: Fn(usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    let parts: Vec<Accumulator> = (0..n.div_ceil(PAR_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut a = Accumulator::new();
            for i in c * PAR_CHUNK..((c + 1) * PAR_CHUNK).min(n) {
                a.push(f(i));
            }
            a
        })
        .collect();
    let mut total = Accumulator::new();
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Parallel map over 0..n preserving index order.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { mean: value, stderr: 0.0, n: 0 }
    }

    /// |mean - target| <= k * stderr (+ slack).
    pub fn within(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr + slack
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Asymptotic Kolmogorov survival function Q_KS(lambda).
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let sq = ne.sqrt();
    KsResult { statistic: d, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d) }
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sq = n.sqrt();
    KsResult { statistic: d, p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d) }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit. Cells with expected count below `min_expected`
/// are pooled into one tail cell.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> ChiSquareResult {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let total = total as f64;
    let mass: f64 = probs.iter().sum();
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = total * p / mass;
        if e < min_expected {
            pool_o += o as f64;
            pool_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e.max(1e-300);
        cells += 1;
    }
    let dof = cells.saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
    ChiSquareResult { statistic: stat, dof, p_value }
}

/// Anderson–Darling statistic A² for samples that should be standard normal
/// (fully specified null). The 1% critical value is 3.857.
pub fn anderson_darling_std_normal(samples: &[f64]) -> f64 {
    use statrs::distribution::Normal;
    let nd = Normal::new(0.0, 1.0).unwrap();
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        let fi = nd.cdf(x[i]).clamp(1e-300, 1.0 - 1e-16);
        let fr = nd.cdf(x[n - 1 - i]).clamp(1e-300, 1.0 - 1e-16);
        s += (2.0 * i as f64 + 1.0) * (fi.ln() + (1.0 - fr).ln());
    }
    -nf - s / nf
}

pub const ANDERSON_DARLING_CRIT_1PCT: f64 = 3.857;

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci<R: Rng>(values: &[f64], n_boot: usize, level: f64, rng: &mut R) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| {
            let mut s = 0.0;
            for _ in 0..n {
                s += values[rng.random_range(0..n)];
            }
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha))
}

/// Linear interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    pub rss: f64,
}

/// Weighted least squares y = intercept + slope x, weights 1/sigma².
/// With `sigmas == None` an ordinary fit with residual-based errors.
pub fn linear_fit(x: &[f64], y: &[f64], sigmas: Option<&[f64]>) -> LinearFit {
    let n = x.len();
    assert_eq!(n, y.len());
    let w: Vec<f64> = match sigmas {
        Some(s) => s.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let xm = sx / sw;
    let ym = sy / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    let sxy: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (x, y))| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2)).sum();
    let (slope_var, int_var) = if sigmas.is_some() {
        (1.0 / sxx, 1.0 / sw + xm * xm / sxx)
    } else {
        let s2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
        (s2 / sxx, s2 * (1.0 / sw + xm * xm / sxx))
    };
    LinearFit { slope, intercept, slope_stderr: slope_var.sqrt(), intercept_stderr: int_var.sqrt(), rss }
}

/// Sample Pearson correlation with its approximate standard error under
/// independence (1/sqrt(n)).
pub fn correlation(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    (sab / (saa * sbb).sqrt(), 1.0 / n.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let whole: Accumulator = xs.iter().copied().collect();
        let mut left: Accumulator = xs[..333].iter().copied().collect();
        let right: Accumulator = xs[333..].iter().copied().collect();
        left.merge(&right);
        assert_eq!(whole.n, left.n);
        assert!((whole.mean() - left.mean()).abs() < 1e-12);
        assert!((whole.variance() - left.variance()).abs() < 1e-10);
    }

    #[test]
    fn kahan_recovers_small_terms() {
        let mut s = KahanSum::default();
        s.add(1.0);
        for _ in 0..10_000 {
            s.add(1e-17);
        }
        assert!((s.value() - (1.0 + 1e-13)).abs() < 1e-18);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() + 0.1).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
        assert!(ks_one_sample(&a, |x| x.clamp(0.0, 1.0)).p_value > 0.01);
    }

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = linear_fit(&x, &y, None);
        assert!((f.slope + 0.5).abs() < 1e-12);
        assert!((f.intercept - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_uniform_counts_pass() {
        let obs = [1000u64, 1010, 990, 1005, 995];
        let r = chi_square_gof(&obs, &[0.2; 5], 5.0);
        assert_eq!(r.dof, 4);
        assert!(r.p_value > 0.5);
    }
}
