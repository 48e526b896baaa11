use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::LatticeSite;
use crate::error::{invalid, Error, Result};
use crate::stats::KahanSum;

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Default cap on stored kernel entries (f64 each), about 640 MB.
pub const DEFAULT_ENTRY_BUDGET: u64 = 80_000_000;

pub(crate) const NONE: u32 = u32::MAX;

/// Canonical form of a site under the hyperoctahedral group: absolute
/// coordinates sorted in decreasing order.
#[inline]
fn canonical(z: &[i32]) -> ([u32; MAX_DIM], usize) {
    let mut a = [0u32; MAX_DIM];
    let mut m = 0usize;
    for (i, &c) in z.iter().enumerate() {
        let v = c.unsigned_abs();
        m += v as usize;
        let mut j = i;
        while j > 0 && a[j - 1] < v {
            a[j] = a[j - 1];
            j -= 1;
        }
        a[j] = v;
    }
    (a, m)
}

#[derive(Debug)]
struct ParityClass {
    /// Flat list of canonical tuples (d entries each), ordered by 1-norm then rank.
    tuples: Vec<u32>,
    /// 2d neighbour indices per tuple into the opposite parity class.
    neighbours: Vec<u32>,
    /// Number of lattice sites in each symmetry class.
    multiplicity: Vec<f64>,
}

/// Ranking of canonical tuples with 1-norm at most `radius`.
///
/// Tuples are grouped by parity of their 1-norm; inside a parity class they
/// are ordered by 1-norm and then lexicographically (first coordinate
/// ascending), which makes every layer of the kernel a prefix of its class.
#[derive(Debug)]
pub struct TupleIndex {
    d: usize,
    radius: usize,
    /// counts[(k, m, u)]: nonincreasing length-k sequences summing to m with
    /// first element at most u.
    counts: Vec<u64>,
    offsets: Vec<usize>,
    class_sizes: Vec<usize>,
    classes: [ParityClass; 2],
}

impl TupleIndex {
    pub fn new(d: usize, radius: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(invalid("d", format!("dimension must be in 1..={MAX_DIM}")));
        }
        let r1 = radius + 1;
        let mut counts = vec![0u64; (d + 1) * r1 * r1];
        let at = |k: usize, m: usize, u: usize| (k * r1 + m) * r1 + u;
        for u in 0..r1 {
            counts[at(0, 0, u)] = 1;
        }
        for k in 1..=d {
            for m in 0..r1 {
                counts[at(k, m, 0)] = u64::from(m == 0);
                for u in 1..r1 {
                    let mut c = counts[at(k, m, u - 1)];
                    if u <= m {
                        c += counts[at(k - 1, m - u, u)];
                    }
                    counts[at(k, m, u)] = c;
                }
            }
        }
        let class_sizes: Vec<usize> = (0..r1).map(|m| counts[at(d, m, radius)] as usize).collect();
        let mut offsets = vec![0usize; r1];
        for m in 2..r1 {
            offsets[m] = offsets[m - 2] + class_sizes[m - 2];
        }
        let mut index = TupleIndex {
            d,
            radius,
            counts,
            offsets,
            class_sizes,
            classes: [ParityClass::empty(), ParityClass::empty()],
        };
        for parity in 0..2 {
            index.classes[parity] = index.build_class(parity);
        }
        Ok(index)
    }

    fn build_class(&self, parity: usize) -> ParityClass {
        let d = self.d;
        let mut tuples = Vec::new();
        let mut buf = vec![0u32; d];
        let mut m = parity;
        while m <= self.radius {
            enumerate_sum(&mut buf, 0, m as u32, m as u32, &mut |t| tuples.extend_from_slice(t));
            m += 2;
        }
        let count = tuples.len() / d.max(1);
        let mut neighbours = Vec::with_capacity(count * 2 * d);
        let mut multiplicity = Vec::with_capacity(count);
        let mut nb = [0i32; MAX_DIM];
        for i in 0..count {
            let t = &tuples[i * d..(i + 1) * d];
            debug_assert_eq!(
                self.offsets[t.iter().sum::<u32>() as usize] + self.rank(t, t.iter().sum::<u32>() as usize),
                i
            );
            multiplicity.push(class_multiplicity(t));
            for axis in 0..d {
                for delta in [1i32, -1] {
                    for (j, &v) in t.iter().enumerate() {
                        nb[j] = v as i32;
                    }
                    nb[axis] += delta;
                    let (c, s) = canonical(&nb[..d]);
                    neighbours.push(if s > self.radius {
                        NONE
                    } else {
                        (self.offsets[s] + self.rank(&c[..d], s)) as u32
                    });
                }
            }
        }
        ParityClass { tuples, neighbours, multiplicity }
    }

    #[inline]
    fn count(&self, k: usize, m: usize, u: usize) -> u64 {
        let r1 = self.radius + 1;
        self.counts[(k * r1 + m) * r1 + u.min(self.radius)]
    }

    /// Rank of a canonical tuple among those with the same 1-norm `m`.
    #[inline]
    fn rank(&self, a: &[u32], m: usize) -> usize {
        let mut r = 0u64;
        let mut rem = m;
        for (i, &v) in a.iter().enumerate() {
            if v > 0 {
                r += self.count(self.d - i, rem, v as usize - 1);
            }
            rem -= v as usize;
        }
        r as usize
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Position of site `z` in its parity class, with its 1-norm; `None` when
    /// the 1-norm exceeds the radius.
    #[inline]
    pub fn locate(&self, z: &[i32]) -> Option<(usize, usize)> {
        debug_assert_eq!(z.len(), self.d);
        let (c, m) = canonical(z);
        if m > self.radius {
            return None;
        }
        Some((self.offsets[m] + self.rank(&c[..self.d], m), m))
    }

    /// Number of entries of the kernel layer at step n.
    pub fn layer_len(&self, n: usize) -> usize {
        let top = n.min(self.radius);
        let top = if top % 2 == n % 2 { top } else { top - 1 };
        self.offsets[top] + self.class_sizes[top]
    }

    /// Number of canonical tuples of the given parity.
    pub fn class_len(&self, parity: usize) -> usize {
        self.classes[parity].multiplicity.len()
    }

    pub fn tuple(&self, parity: usize, i: usize) -> &[u32] {
        &self.classes[parity].tuples[i * self.d..(i + 1) * self.d]
    }

    pub fn multiplicity(&self, parity: usize, i: usize) -> f64 {
        self.classes[parity].multiplicity[i]
    }

    pub(crate) fn neighbours(&self, parity: usize, i: usize) -> &[u32] {
        let w = 2 * self.d;
        &self.classes[parity].neighbours[i * w..(i + 1) * w]
    }
}

impl ParityClass {
    fn empty() -> Self {
        ParityClass { tuples: Vec::new(), neighbours: Vec::new(), multiplicity: Vec::new() }
    }
}

/// Visits nonincreasing tuples summing to `rem` with entries at most `cap`,
/// first coordinate ascending (rank order).
fn enumerate_sum(buf: &mut [u32], pos: usize, rem: u32, cap: u32, f: &mut impl FnMut(&[u32])) {
    let k = (buf.len() - pos) as u32;
    if k == 1 {
        if rem <= cap {
            buf[pos] = rem;
            f(buf);
        }
        return;
    }
    let lo = rem.div_ceil(k);
    let hi = rem.min(cap);
    for v in lo..=hi {
        buf[pos] = v;
        enumerate_sum(buf, pos + 1, rem - v, v, f);
    }
}

fn class_multiplicity(t: &[u32]) -> f64 {
    let d = t.len();
    let mut perms = (1..=d).product::<usize>() as f64;
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && t[j] == t[i] {
            j += 1;
        }
        perms /= (1..=(j - i)).product::<usize>() as f64;
        i = j;
    }
    let nonzero = t.iter().filter(|&&v| v > 0).count();
    perms * f64::powi(2.0, nonzero as i32)
}

/// One-layer-at-a-time evaluation of q_n on the canonical tuples, for runs
/// that cannot afford to store every layer.
pub struct KernelStream {
    index: Arc<TupleIndex>,
    n: usize,
    layer: Vec<f64>,
    scratch: Vec<f64>,
}

impl KernelStream {
    pub fn new(d: usize, radius: usize) -> Result<Self> {
        Ok(Self::with_index(Arc::new(TupleIndex::new(d, radius)?)))
    }

    pub fn with_index(index: Arc<TupleIndex>) -> Self {
        KernelStream { index, n: 0, layer: vec![1.0], scratch: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index(&self) -> &Arc<TupleIndex> {
        &self.index
    }

    /// Values of q_n, indexed like the parity class of n.
    pub fn layer(&self) -> &[f64] {
        &self.layer
    }

    pub fn advance(&mut self) {
        let n = self.n + 1;
        let parity = n % 2;
        let len = self.index.layer_len(n);
        let inv = 1.0 / (2 * self.index.d) as f64;
        self.scratch.clear();
        self.scratch.reserve(len);
        let prev = &self.layer;
        for i in 0..len {
            let mut s = KahanSum::default();
            for &j in self.index.neighbours(parity, i) {
                if let Some(&v) = prev.get(j as usize) {
                    s.add(v);
                }
            }
            self.scratch.push(s.value() * inv);
        }
        std::mem::swap(&mut self.layer, &mut self.scratch);
        self.n = n;
    }

    /// q_n at site z; zero off parity or beyond n, `None` beyond the radius.
    pub fn value(&self, z: &[i32]) -> Option<f64> {
        let (i, m) = self.index.locate(z)?;
        if m > self.n || m % 2 != self.n % 2 {
            return Some(0.0);
        }
        Some(self.layer[i])
    }

    /// Σ_z q_n^z over the stored box.
    pub fn total_mass(&self) -> f64 {
        layer_mass(&self.index, self.n, &self.layer)
    }

    /// Σ_z (q_n^z)^2 over the stored box.
    pub fn square_mass(&self) -> f64 {
        let parity = self.n % 2;
        self.layer
            .iter()
            .enumerate()
            .map(|(i, v)| self.index.multiplicity(parity, i) * v * v)
            .collect::<KahanSum>()
            .value()
    }
}

fn layer_mass(index: &TupleIndex, n: usize, layer: &[f64]) -> f64 {
    let parity = n % 2;
    layer.iter().enumerate().map(|(i, v)| index.multiplicity(parity, i) * v).collect::<KahanSum>().value()
}

/// Table of discrete-time transition probabilities q_n^z for n <= n_max and
/// |z|_1 <= min(n, radius), stored once per symmetry class.
pub struct TransitionKernel {
    n_max: usize,
    index: Arc<TupleIndex>,
    layers: Vec<Vec<f64>>,
}

impl std::fmt::Debug for TransitionKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransitionKernel")
            .field("d", &self.dim())
            .field("n_max", &self.n_max)
            .field("radius", &self.radius())
            .finish()
    }
}

impl TransitionKernel {
    pub fn build(d: usize, n_max: usize, radius: usize) -> Result<Self> {
        Self::build_with_budget(d, n_max, radius, DEFAULT_ENTRY_BUDGET)
    }

    pub fn build_with_budget(d: usize, n_max: usize, radius: usize, budget: u64) -> Result<Self> {
        let radius = radius.min(n_max);
        let index = Arc::new(TupleIndex::new(d, radius)?);
        let needed: u64 = (0..=n_max).map(|n| index.layer_len(n) as u64).sum();
        if needed > budget {
            return Err(Error::MemoryBudget { needed, budget });
        }
        let mut stream = KernelStream::with_index(index.clone());
        let mut layers = Vec::with_capacity(n_max + 1);
        layers.push(stream.layer().to_vec());
        for _ in 0..n_max {
            stream.advance();
            layers.push(stream.layer().to_vec());
        }
        Ok(TransitionKernel { n_max, index, layers })
    }

    /// Reassembles a kernel from stored layers (cache import).
    pub(crate) fn from_layers(d: usize, n_max: usize, radius: usize, layers: Vec<Vec<f64>>) -> Result<Self> {
        let index = Arc::new(TupleIndex::new(d, radius)?);
        if layers.len() != n_max + 1 {
            return Err(Error::Cache(format!("expected {} layers, found {}", n_max + 1, layers.len())));
        }
        for (n, l) in layers.iter().enumerate() {
            if l.len() != index.layer_len(n) {
                return Err(Error::Cache(format!("layer {n} has wrong length")));
            }
        }
        Ok(TransitionKernel { n_max, index, layers })
    }

    pub fn dim(&self) -> usize {
        self.index.d
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn radius(&self) -> usize {
        self.index.radius
    }

    pub fn index(&self) -> &Arc<TupleIndex> {
        &self.index
    }

    pub fn layer(&self, n: usize) -> &[f64] {
        &self.layers[n]
    }

    pub(crate) fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    /// q_n^z. Zero when parity or reach rule it out; an error when n exceeds
    /// n_max or z is reachable but outside the stored radius.
    pub fn q(&self, n: usize, z: &LatticeSite) -> Result<f64> {
        self.q_coords(n, z.coords())
    }

    pub fn q_coords(&self, n: usize, z: &[i32]) -> Result<f64> {
        if n > self.n_max {
            return Err(Error::StepOutOfRange { n, n_max: self.n_max });
        }
        let norm: usize = z.iter().map(|c| c.unsigned_abs() as usize).sum();
        if norm > n || norm % 2 != n % 2 {
            return Ok(0.0);
        }
        match self.index.locate(z) {
            Some((i, _)) => Ok(self.layers[n][i]),
            None => Err(Error::OutsideTable { norm, radius: self.radius(), n }),
        }
    }

    /// Like `q_coords` but treats everything outside the table as zero.
    #[inline]
    pub(crate) fn q_or_zero(&self, n: usize, z: &[i32]) -> f64 {
        if n > self.n_max {
            return 0.0;
        }
        match self.index.locate(z) {
            Some((i, m)) if m <= n && m % 2 == n % 2 => self.layers[n][i],
            _ => 0.0,
        }
    }

    pub fn total_mass(&self, n: usize) -> f64 {
        layer_mass(&self.index, n, &self.layers[n])
    }

    /// Poisson-mixture continuous-time transition probability p_t^y.
    pub fn p_continuous(&self, t: f64, y: &LatticeSite, tail_eps: f64) -> Result<f64> {
        let terms = self.mixture_terms(t, tail_eps)?;
        let norm = y.norm1();
        if norm > self.radius() {
            return Err(Error::OutsideTable { norm, radius: self.radius(), n: terms });
        }
        let mut s = KahanSum::default();
        let mut n = norm;
        while n <= terms {
            s.add(poisson_log_weight(n, t).exp() * self.q_or_zero(n, y.coords()));
            n += 2;
        }
        Ok(s.value())
    }

    /// Number of Poisson terms needed for (t, tail_eps), checked against n_max.
    pub fn mixture_terms(&self, t: f64, tail_eps: f64) -> Result<usize> {
        if !(t > 0.0) {
            return Err(invalid("t", "must be positive"));
        }
        let required = poisson_tail_steps(t, tail_eps);
        if required > self.n_max {
            return Err(Error::InsufficientSteps { t, eps: tail_eps, n_max: self.n_max, required });
        }
        Ok(required)
    }

    /// p_t for every canonical class, indexed [parity][class index].
    pub fn p_continuous_table(&self, t: f64, tail_eps: f64) -> Result<ContinuousTable> {
        let terms = self.mixture_terms(t, tail_eps)?;
        let mut values =
            [vec![KahanSum::default(); self.index.class_len(0)], vec![KahanSum::default(); self.index.class_len(1)]];
        for n in 0..=terms {
            let w = poisson_log_weight(n, t).exp();
            for (acc, q) in values[n % 2].iter_mut().zip(&self.layers[n]) {
                acc.add(w * q);
            }
        }
        Ok(ContinuousTable {
            index: self.index.clone(),
            t,
            values: values.map(|v| v.into_iter().map(|s| s.value()).collect()),
        })
    }

    /// Partial sum Σ_{n=1}^{n_max} Σ_z (q_n^z)^2 with a tail estimate and
    /// bound; errors when the bound exceeds `tolerance`.
    pub fn alpha_d(&self, tolerance: f64) -> Result<AlphaEstimate> {
        if self.radius() < self.n_max {
            return Err(invalid("radius", "alpha_d needs radius >= n_max for exact layers"));
        }
        let squares: Vec<f64> = (1..=self.n_max)
            .map(|n| {
                let p = n % 2;
                self.layers[n]
                    .iter()
                    .enumerate()
                    .map(|(i, v)| self.index.multiplicity(p, i) * v * v)
                    .collect::<KahanSum>()
                    .value()
            })
            .collect();
        let est = AlphaEstimate::from_square_masses(self.dim(), &squares);
        est.check(tolerance)
    }
}

/// Continuous-time probabilities p_t on every canonical class of a kernel box.
#[derive(Debug, Clone)]
pub struct ContinuousTable {
    index: Arc<TupleIndex>,
    pub t: f64,
    values: [Vec<f64>; 2],
}

impl ContinuousTable {
    pub fn get(&self, y: &[i32]) -> Option<f64> {
        let (i, m) = self.index.locate(y)?;
        Some(self.values[m % 2][i])
    }

    pub fn index(&self) -> &TupleIndex {
        &self.index
    }

    pub fn class_values(&self, parity: usize) -> &[f64] {
        &self.values[parity]
    }

    /// Σ_y p_t^y over the box.
    pub fn total_mass(&self) -> f64 {
        let mut s = KahanSum::default();
        for p in 0..2 {
            for (i, v) in self.values[p].iter().enumerate() {
                s.add(self.index.multiplicity(p, i) * v);
            }
        }
        s.value()
    }
}

/// Result of the α_d computation: partial sum plus tail.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub d: usize,
    pub n_max: usize,
    pub partial_sum: f64,
    /// Tail Σ_{n>n_max} predicted from the last tabulated term.
    pub tail_estimate: f64,
    /// Upper bound on the tail from C·Σ_{n>n_max} n^{-d/2}.
    pub tail_bound: f64,
    /// The constant C used in the bound.
    pub tail_constant: f64,
    pub value: f64,
}

impl AlphaEstimate {
    /// `squares[n-1]` = Σ_z (q_n^z)^2 for n = 1..=n_max.
    pub fn from_square_masses(d: usize, squares: &[f64]) -> Self {
        let n_max = squares.len();
        let partial_sum = squares.iter().copied().collect::<KahanSum>().value();
        let s = d as f64 / 2.0;
        // Σ_z (q_n^z)^2 = q_{2n}^0 ~ 2 (d / 4πn)^{d/2}; n^{d/2} q_{2n}^0 increases to
        // that limit, so the larger of the limit and the observed sup bounds it.
        let lclt_constant = 2.0 * (d as f64 / (4.0 * PI)).powf(s);
        let observed = squares.iter().enumerate().map(|(i, v)| ((i + 1) as f64).powf(s) * v).fold(0.0, f64::max);
        let last = (n_max as f64).powf(s) * squares[n_max - 1];
        let zeta_tail = hurwitz_zeta(s, n_max as f64 + 1.0);
        let tail_constant = lclt_constant.max(observed);
        // n^{d/2} s_n ≈ K - b/n near the end of the table; b fitted from the last term.
        let tail_estimate = if d < 3 {
            f64::INFINITY
        } else if last < lclt_constant {
            let b = n_max as f64 * (lclt_constant - last);
            lclt_constant * zeta_tail - b * hurwitz_zeta(s + 1.0, n_max as f64 + 1.0)
        } else {
            last * zeta_tail
        };
        let tail_bound = if d >= 3 { tail_constant * zeta_tail } else { f64::INFINITY };
        AlphaEstimate {
            d,
            n_max,
            partial_sum,
            tail_estimate,
            tail_bound,
            tail_constant,
            value: partial_sum + tail_estimate,
        }
    }

    fn check(self, tolerance: f64) -> Result<Self> {
        if self.tail_bound > tolerance {
            return Err(Error::ToleranceNotAchievable {
                requested: tolerance,
                achieved: self.tail_bound,
                n_max: self.n_max,
            });
        }
        Ok(self)
    }

    /// Interval certainly containing α_d.
    pub fn interval(&self) -> (f64, f64) {
        (self.partial_sum, self.partial_sum + self.tail_bound)
    }
}

/// α_d without storing the kernel (layers are streamed).
pub fn alpha_d_streaming(d: usize, n_max: usize, tolerance: f64) -> Result<AlphaEstimate> {
    let mut stream = KernelStream::new(d, n_max)?;
    let mut squares = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        stream.advance();
        squares.push(stream.square_mass());
    }
    AlphaEstimate::from_square_masses(d, &squares).check(tolerance)
}

/// α_d from independent pairs of simple walks: the mean number of times
/// n in 1..=n_max with S_n = S'_n, plus the Gaussian tail
/// Σ_{n>n_max} 2 (d / 4πn)^{d/2}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlphaMc {
    pub d: usize,
    pub n_max: usize,
    pub n_pairs: usize,
    pub partial: f64,
    pub partial_stderr: f64,
    pub tail: f64,
    pub value: f64,
}

pub fn alpha_pair_mc(d: usize, n_max: usize, n_pairs: usize, seed: u64) -> Result<AlphaMc> {
    use crate::keyed::{label, Key};
    use rand::Rng;
    if !(3..=MAX_DIM).contains(&d) {
        return Err(invalid("d", "alpha_d is finite only for 3 <= d"));
    }
    let two_d = 2 * d;
    let acc = crate::stats::par_accumulate(n_pairs, |i| {
        let mut rng = Key::new(seed).with(label::PAIRS).with(i as u64).stream();
        // Track the difference walk; each coordinate move is ±1 on one axis.
        let mut diff = [0i32; MAX_DIM];
        let mut hits = 0u32;
        for _ in 0..n_max {
            for sign in [1, -1] {
                let j = rng.random_range(0..two_d);
                diff[j / 2] += if j % 2 == 0 { sign } else { -sign };
            }
            if diff[..d].iter().all(|&c| c == 0) {
                hits += 1;
            }
        }
        hits as f64
    });
    let s = d as f64 / 2.0;
    let tail = 2.0 * (d as f64 / (4.0 * PI)).powf(s) * hurwitz_zeta(s, n_max as f64 + 1.0);
    Ok(AlphaMc { d, n_max, n_pairs, partial: acc.mean(), partial_stderr: acc.stderr(), tail, value: acc.mean() + tail })
}

/// ln of the Poisson(t) probability of n.
#[inline]
pub fn poisson_log_weight(n: usize, t: f64) -> f64 {
    if t == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -t + n as f64 * t.ln() - statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

/// Smallest K with P(Poisson(t) > K) <= eps by the Chernoff bound
/// P(N >= k) <= e^{-t} (e t / k)^k, k > t.
pub fn poisson_tail_steps(t: f64, eps: f64) -> usize {
    assert!(eps > 0.0 && eps < 1.0);
    let log_eps = eps.ln();
    let mut k = t.floor() as usize + 1;
    loop {
        let kf = k as f64;
        let log_bound = if t == 0.0 { f64::NEG_INFINITY } else { -t + kf * (1.0 + t.ln() - kf.ln()) };
        if log_bound <= log_eps {
            return k - 1;
        }
        k += 1;
    }
}

/// Gaussian main term (d / 2πt)^{d/2} exp(-d |y|^2 / 2t).
pub fn lclt_approx(d: usize, t: f64, y: &LatticeSite) -> f64 {
    let df = d as f64;
    (df / (2.0 * PI * t)).powf(df / 2.0) * (-df * y.norm2_sq() / (2.0 * t)).exp()
}

/// Hurwitz zeta Σ_{k>=0} (a + k)^{-s}, s > 1, by direct summation plus an
/// Euler–Maclaurin tail.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(s > 1.0 && a > 0.0);
    let m = 64usize;
    let mut sum = KahanSum::default();
    for k in 0..m {
        sum.add((a + k as f64).powf(-s));
    }
    let x = a + m as f64;
    sum.add(x.powf(1.0 - s) / (s - 1.0));
    sum.add(0.5 * x.powf(-s));
    sum.add(s * x.powf(-s - 1.0) / 12.0);
    sum.add(-s * (s + 1.0) * (s + 2.0) * x.powf(-s - 3.0) / 720.0);
    sum.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact endpoint counts of all (2d)^n paths.
    fn enumerate_counts(d: usize, n: usize) -> std::collections::HashMap<Vec<i32>, u64> {
        let mut map = std::collections::HashMap::new();
        let total = (2 * d).pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let mut z = vec![0i32; d];
            for _ in 0..n {
                let s = c % (2 * d);
                c /= 2 * d;
                z[s / 2] += if s.is_multiple_of(2) { 1 } else { -1 };
            }
            *map.entry(z).or_insert(0u64) += 1;
        }
        map
    }

    #[test]
    fn rank_is_a_bijection_onto_classes() {
        let idx = TupleIndex::new(3, 12).unwrap();
        for parity in 0..2 {
            let mut seen = vec![false; idx.class_len(parity)];
            for i in 0..idx.class_len(parity) {
                let t: Vec<i32> = idx.tuple(parity, i).iter().map(|&v| v as i32).collect();
                let (j, m) = idx.locate(&t).unwrap();
                assert_eq!(m % 2, parity);
                assert_eq!(i, j);
                seen[j] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn multiplicities_count_all_sites() {
        let idx = TupleIndex::new(3, 6).unwrap();
        let mut total = 0.0;
        for p in 0..2 {
            for i in 0..idx.class_len(p) {
                total += idx.multiplicity(p, i);
            }
        }
        // |{z in Z^3 : |z|_1 <= 6}| = (2r+1)(2r^2+2r+3)/3 at r = 6
        assert_eq!(total, (13.0 * (72.0 + 12.0 + 3.0) / 3.0));
    }

    #[test]
    fn kernel_matches_path_enumeration() {
        for d in 1..=3usize {
            let n_top = if d == 3 { 6 } else { 8 };
            let k = TransitionKernel::build(d, n_top, n_top).unwrap();
            for n in 0..=n_top {
                let counts = enumerate_counts(d, n);
                let total = (2 * d).pow(n as u32) as f64;
                for (z, c) in &counts {
                    let q = k.q_coords(n, z).unwrap();
                    assert!((q - *c as f64 / total).abs() < 1e-15, "d={d} n={n} z={z:?}");
                }
            }
        }
    }

    #[test]
    fn small_examples() {
        let k = TransitionKernel::build(3, 8, 8).unwrap();
        let o = LatticeSite::origin(3);
        assert_eq!(k.q(0, &o).unwrap(), 1.0);
        assert!((k.q(1, &LatticeSite::along_axis(3, 0, 1)).unwrap() - 1.0 / 6.0).abs() < 1e-16);
        assert!((k.q(2, &o).unwrap() - 1.0 / 6.0).abs() < 1e-16);
        assert!((k.q(2, &LatticeSite::along_axis(3, 0, 2)).unwrap() - 1.0 / 36.0).abs() < 1e-16);
        assert_eq!(k.q(4, &LatticeSite::new(&[1, 1, 1])).unwrap(), 0.0);
        assert_eq!(k.q(3, &o).unwrap(), 0.0);
        assert!(matches!(k.q(9, &o), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn truncated_radius_reports_outside() {
        let k = TransitionKernel::build(3, 10, 4).unwrap();
        assert!(matches!(k.q(10, &LatticeSite::along_axis(3, 0, 6)), Err(Error::OutsideTable { .. })));
        assert_eq!(k.q(3, &LatticeSite::along_axis(3, 0, 6)).unwrap(), 0.0);
    }

    #[test]
    fn memory_budget_is_enforced() {
        assert!(matches!(TransitionKernel::build_with_budget(3, 50, 50, 1000), Err(Error::MemoryBudget { .. })));
    }

    #[test]
    fn poisson_tail_steps_bounds_the_tail() {
        use statrs::distribution::{DiscreteCDF, Poisson};
        for &t in &[0.5, 1.0, 5.0, 20.0, 100.0] {
            let k = poisson_tail_steps(t, 1e-12);
            let p = Poisson::new(t).unwrap();
            assert!(p.sf(k as u64) <= 1e-12, "t={t} k={k}");
        }
    }

    #[test]
    fn hurwitz_zeta_matches_riemann() {
        // ζ(3/2) = 2.612375348685488...
        assert!((hurwitz_zeta(1.5, 1.0) - 2.612_375_348_685_488).abs() < 1e-12);
        assert!((hurwitz_zeta(2.0, 1.0) - PI * PI / 6.0).abs() < 1e-13);
    }
}
