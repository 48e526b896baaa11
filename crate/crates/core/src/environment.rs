//! Two-sided Brownian environment {W^x}_{x in Z^d}.
//!
//! W^x is a deterministic function of (seed, x, t). Times are resolved on the
//! grid 2^-32; values are held in fixed point (2^-40) so that increments
//! telescope exactly. Integer times carry cumulative sums of keyed normals
//! (a separate stream for negative times), and inside each unit cell the
//! path is built by Lévy midpoint refinement, every midpoint keyed by its
//! dyadic position. The joint law on the time grid is exactly Brownian.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::keyed::{label, Key};
use crate::walk::Skeleton;

/// log2 of the number of time-grid points per unit of time.
pub const TIME_BITS: u32 = 32;
const VALUE_BITS: i32 = 40;
const VALUE_SCALE: f64 = (1u64 << VALUE_BITS) as f64;
const UNIT: i64 = 1 << TIME_BITS;

const POSITIVE: u64 = 0x11;
const NEGATIVE: u64 = 0x12;
const CELL: u64 = 0x13;

/// Energy A of a path; see [`action`].
pub type ActionValue = f64;

#[inline]
pub fn time_to_tick(t: f64) -> i64 {
    (t * UNIT as f64).round() as i64
}

#[inline]
pub fn tick_to_time(k: i64) -> f64 {
    k as f64 / UNIT as f64
}

#[inline]
fn to_fixed(x: f64) -> i64 {
    (x * VALUE_SCALE).round() as i64
}

#[inline]
pub(crate) fn from_fixed(v: i64) -> f64 {
    v as f64 / VALUE_SCALE
}

/// Midpoint standard deviations (in fixed-point units) per refinement level:
/// level l halves an interval of length 2^{1-l}, conditional sd 2^{-(l+1)/2}.
fn level_sd() -> &'static [f64; TIME_BITS as usize + 1] {
    static SD: std::sync::OnceLock<[f64; TIME_BITS as usize + 1]> = std::sync::OnceLock::new();
    SD.get_or_init(|| {
        let mut t = [0.0; TIME_BITS as usize + 1];
        for (l, v) in t.iter_mut().enumerate().skip(1) {
            *v = (2.0f64).powf(-((l + 1) as f64) / 2.0) * VALUE_SCALE;
        }
        t
    })
}

/// Read access to a Wiener field.
pub trait Environment: Sync {
    fn dim(&self) -> usize;

    /// Path of W^x covering at least [s, t].
    fn site_path(&self, x: &[i32], s: f64, t: f64) -> SitePath;

    /// W^x_t - W^x_s.
    fn increment(&self, x: &[i32], s: f64, t: f64) -> f64 {
        if s == t {
            return 0.0;
        }
        let p = self.site_path(x, s.min(t), s.max(t));
        from_fixed(p.ticks_at(t) - p.ticks_at(s))
    }
}

/// Anchor values of one site at integer times.
#[derive(Debug, Clone, Default)]
struct Anchors {
    /// pos[k] = W(k), k >= 0.
    pos: Vec<i64>,
    /// neg[j] = W(-j), j >= 0.
    neg: Vec<i64>,
}

impl Anchors {
    fn extend(&mut self, key: Key, lo: i64, hi: i64) {
        if self.pos.is_empty() {
            self.pos.push(0);
            self.neg.push(0);
        }
        while (self.pos.len() as i64) <= hi.max(0) {
            let k = self.pos.len() as i64 - 1;
            let last = *self.pos.last().unwrap();
            self.pos.push(last + to_fixed(key.with(POSITIVE).with_i64(k).normal()));
        }
        while (self.neg.len() as i64) <= (-lo).max(0) {
            let j = self.neg.len() as i64;
            let last = *self.neg.last().unwrap();
            self.neg.push(last + to_fixed(key.with(NEGATIVE).with_i64(j).normal()));
        }
    }

    fn covers(&self, lo: i64, hi: i64) -> bool {
        !self.pos.is_empty() && (self.pos.len() as i64) > hi.max(0) && (self.neg.len() as i64) > (-lo).max(0)
    }

    #[inline]
    fn at(&self, k: i64) -> i64 {
        if k >= 0 {
            self.pos[k as usize]
        } else {
            self.neg[(-k) as usize]
        }
    }
}

/// Materialized anchors of one site; evaluates W^x anywhere inside the
/// covered integer range without further locking.
#[derive(Debug, Clone)]
pub struct SitePath {
    key: Key,
    anchors: Arc<Anchors>,
    shift: i64,
    reversed: bool,
}

impl SitePath {
    /// W at time t in fixed point.
    #[inline]
    pub fn ticks_at(&self, t: f64) -> i64 {
        if self.reversed {
            return -self.at_tick(-time_to_tick(t));
        }
        self.at_tick(time_to_tick(t) + self.shift) - self.origin()
    }

    #[inline]
    fn origin(&self) -> i64 {
        if self.shift == 0 {
            0
        } else {
            self.at_tick(self.shift)
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        from_fixed(self.ticks_at(t))
    }

    #[inline]
    fn at_tick(&self, tick: i64) -> i64 {
        let k = tick >> TIME_BITS;
        let u = (tick & (UNIT - 1)) as u64;
        let a = self.anchors.at(k);
        if u == 0 {
            return a;
        }
        let b = self.anchors.at(k + 1);
        refine(self.key.with(CELL).with_i64(k), a, b, u)
    }
}

#[inline]
fn refine(cell: Key, mut va: i64, mut vb: i64, u: u64) -> i64 {
    let sd = level_sd();
    let (mut lo, mut hi) = (0u64, UNIT as u64);
    for l in 1..=TIME_BITS as usize {
        let mid = (lo + hi) >> 1;
        let vm = ((va + vb) >> 1) + (sd[l] * cell.with(mid).normal()).round() as i64;
        if u == mid {
            return vm;
        }
        if u < mid {
            hi = mid;
            vb = vm;
        } else {
            lo = mid;
            va = vm;
        }
    }
    unreachable!("time grid exhausted")
}

/// Retention policy for materialized anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheMode {
    /// Keep every site (pathwise comparisons).
    Pinned,
    /// Evict least recently used sites beyond `max_sites` (pure Monte Carlo).
    Streaming { max_sites: usize },
}

type SiteCoords = SmallVec<[i32; 4]>;

#[derive(Default)]
struct Cache {
    rows: HashMap<SiteCoords, (Arc<Anchors>, u64)>,
    clock: u64,
}

/// Seeded two-sided Wiener field; the disorder ω.
pub struct BrownianField {
    seed: u64,
    d: usize,
    key: Key,
    mode: CacheMode,
    cache: Mutex<Cache>,
}

/// Serializable description of a field for run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldManifest {
    pub seed: u64,
    pub d: usize,
    pub anchor_spacing: f64,
    pub time_resolution: f64,
}

impl BrownianField {
    pub fn new(seed: u64, d: usize) -> Self {
        Self::with_mode(seed, d, CacheMode::Pinned)
    }

    pub fn with_mode(seed: u64, d: usize, mode: CacheMode) -> Self {
        BrownianField { seed, d, key: Key::new(seed).with(label::ENV), mode, cache: Mutex::new(Cache::default()) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn manifest(&self) -> FieldManifest {
        FieldManifest { seed: self.seed, d: self.d, anchor_spacing: 1.0, time_resolution: tick_to_time(1) }
    }

    pub fn cached_sites(&self) -> usize {
        self.cache.lock().rows.len()
    }

    /// View with ω(x, t) -> -ω(x, -t), the field seen by time-reversed paths.
    pub fn time_reversed(&self) -> ReversedField<'_> {
        ReversedField { base: self }
    }

    /// View with ω(x, t) -> ω(x, t + s) - ω(x, s).
    pub fn wiener_shift(&self, s: f64) -> ShiftedField<'_> {
        ShiftedField { base: self, shift: time_to_tick(s) }
    }

    fn path_ticks(&self, x: &[i32], lo_tick: i64, hi_tick: i64) -> SitePath {
        assert_eq!(x.len(), self.d, "site dimension mismatch");
        let lo = lo_tick >> TIME_BITS;
        let hi = (hi_tick >> TIME_BITS) + 1;
        let key = self.key.with_site(x);
        let mut cache = self.cache.lock();
        cache.clock += 1;
        let clock = cache.clock;
        let coords: SiteCoords = SmallVec::from_slice(x);
        let anchors = match cache.rows.get_mut(&coords) {
            Some((row, used)) => {
                *used = clock;
                if !row.covers(lo, hi) {
                    Arc::make_mut(row).extend(key, lo, hi);
                }
                row.clone()
            }
            None => {
                let mut a = Anchors::default();
                a.extend(key, lo, hi);
                let a = Arc::new(a);
                cache.rows.insert(coords, (a.clone(), clock));
                if let CacheMode::Streaming { max_sites } = self.mode {
                    let excess = cache.rows.len().saturating_sub(max_sites.max(1));
                    if excess > 0 {
                        evict_oldest(&mut cache.rows, excess);
                    }
                }
                a
            }
        };
        SitePath { key, anchors, shift: 0, reversed: false }
    }

    /// The discrete-time field ω(x, k) ~ N(0, 1/N) of the lazy-walk model is
    /// the increment of W^x over [k/N, (k+1)/N].
    pub fn lazy_disorder(&self, x: &[i32], k: i64, n: u32) -> f64 {
        let s = k as f64 / n as f64;
        self.increment(x, s, (k + 1) as f64 / n as f64)
    }
}

/// Sequential reader of W^x on the dyadic grid 2^{-level}, one unit cell
/// at a time. Values agree bit for bit with point queries on the same field,
/// at the cost of one keyed normal per grid point.
pub struct GridCursor {
    key: Key,
    level: u32,
    k: i64,
    wk: i64,
}

impl GridCursor {
    /// Cursor at the start of unit cell [k, k+1].
    pub fn new(field: &BrownianField, x: &[i32], k: i64, level: u32) -> Self {
        assert!(level <= TIME_BITS, "grid finer than the time resolution");
        assert_eq!(x.len(), field.d, "site dimension mismatch");
        let key = field.key.with_site(x);
        let mut wk = 0i64;
        if k >= 0 {
            for j in 0..k {
                wk += to_fixed(key.with(POSITIVE).with_i64(j).normal());
            }
        } else {
            for j in 1..=-k {
                wk += to_fixed(key.with(NEGATIVE).with_i64(j).normal());
            }
        }
        GridCursor { key, level, k, wk }
    }

    pub fn cell(&self) -> i64 {
        self.k
    }

    fn next_anchor(&self) -> i64 {
        if self.k >= 0 {
            self.wk + to_fixed(self.key.with(POSITIVE).with_i64(self.k).normal())
        } else {
            // W(-j+1) = W(-j) - ξ_j
            self.wk - to_fixed(self.key.with(NEGATIVE).with_i64(-self.k).normal())
        }
    }

    /// Fills `out` (length 2^level + 1) with fixed-point W at
    /// k + i 2^{-level}, then moves to the next cell.
    pub fn next_cell(&mut self, out: &mut [i64]) {
        let m = 1usize << self.level;
        assert_eq!(out.len(), m + 1);
        let b = self.next_anchor();
        out[0] = self.wk;
        out[m] = b;
        let cell = self.key.with(CELL).with_i64(self.k);
        let sd = level_sd();
        let shift = TIME_BITS - self.level;
        let mut half = m;
        let mut l = 1;
        while half > 1 {
            let step = half / 2;
            let mut i = step;
            while i < m {
                let mid = (i as u64) << shift;
                let (va, vb) = (out[i - step], out[i + step]);
                out[i] = ((va + vb) >> 1) + (sd[l] * cell.with(mid).normal()).round() as i64;
                i += half;
            }
            half = step;
            l += 1;
        }
        self.wk = b;
        self.k += 1;
    }
}

fn evict_oldest(rows: &mut HashMap<SiteCoords, (Arc<Anchors>, u64)>, count: usize) {
    let mut ages: Vec<(u64, SiteCoords)> = rows.iter().map(|(k, (_, u))| (*u, k.clone())).collect();
    ages.sort_unstable_by_key(|(u, _)| *u);
    for (_, k) in ages.into_iter().take(count) {
        rows.remove(&k);
    }
}

impl Environment for BrownianField {
    fn dim(&self) -> usize {
        self.d
    }

    fn site_path(&self, x: &[i32], s: f64, t: f64) -> SitePath {
        self.path_ticks(x, time_to_tick(s), time_to_tick(t))
    }
}

/// Wiener-shifted view of a field.
pub struct ShiftedField<'a> {
    base: &'a BrownianField,
    shift: i64,
}

impl Environment for ShiftedField<'_> {
    fn dim(&self) -> usize {
        self.base.d
    }

    fn site_path(&self, x: &[i32], s: f64, t: f64) -> SitePath {
        let (a, b) = (time_to_tick(s) + self.shift, time_to_tick(t) + self.shift);
        let mut p = self.base.path_ticks(x, a.min(self.shift), b.max(self.shift));
        p.shift = self.shift;
        p
    }
}

/// Time-reversed view of a field.
pub struct ReversedField<'a> {
    base: &'a BrownianField,
}

impl Environment for ReversedField<'_> {
    fn dim(&self) -> usize {
        self.base.d
    }

    fn site_path(&self, x: &[i32], s: f64, t: f64) -> SitePath {
        let mut p = self.base.path_ticks(x, -time_to_tick(t), -time_to_tick(s));
        p.reversed = true;
        p
    }
}

/// e^{-β²(t-s)/2} e^{β(W^z_t - W^z_s)} - 1.
pub fn h<E: Environment + ?Sized>(env: &E, beta: f64, z: &[i32], s: f64, t: f64) -> f64 {
    (-0.5 * beta * beta * (t - s) + beta * env.increment(z, s, t)).exp() - 1.0
}

/// Σ_j (W^{γ_j}(s_{j+1}) - W^{γ_j}(s_j)) in fixed point.
pub fn action_fixed<E: Environment + ?Sized>(env: &E, sk: &Skeleton) -> i64 {
    let mut total = 0i64;
    sk.for_each_segment(|site, a, b| {
        if a < b {
            let p = env.site_path(site.coords(), a, b);
            total += p.ticks_at(b) - p.ticks_at(a);
        }
    });
    total
}

/// The action A of a skeleton in the field.
pub fn action<E: Environment + ?Sized>(env: &E, sk: &Skeleton) -> ActionValue {
    from_fixed(action_fixed(env, sk))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk::{LatticeSite, UnitStep};

    #[test]
    fn zero_at_origin_and_empty_interval() {
        let f = BrownianField::new(3, 3);
        assert_eq!(f.site_path(&[1, 2, 3], 0.0, 1.0).value(0.0), 0.0);
        assert_eq!(f.increment(&[0, 0, 0], 0.7, 0.7), 0.0);
    }

    #[test]
    fn telescoping_is_exact() {
        let f = BrownianField::new(9, 3);
        let x = [1, 0, -1];
        for &(s, u, t) in &[(0.1, 0.35, 2.7), (-3.2, 0.0, 4.9), (5.5, 5.5000001, 5.9), (-1.0, -0.5, -0.25)] {
            let a = f.increment(&x, s, u) + f.increment(&x, u, t);
            let b = f.increment(&x, s, t);
            let p = f.site_path(&x, s, t);
            assert_eq!(p.ticks_at(u) - p.ticks_at(s) + p.ticks_at(t) - p.ticks_at(u), p.ticks_at(t) - p.ticks_at(s));
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn query_order_does_not_matter() {
        let f1 = BrownianField::new(5, 2);
        let f2 = BrownianField::with_mode(5, 2, CacheMode::Streaming { max_sites: 1 });
        let queries = [([0, 0], 0.3, 7.2), ([1, 0], -2.0, 1.1), ([0, 0], 2.5, 3.0)];
        let forward: Vec<f64> = queries.iter().map(|(x, s, t)| f1.increment(x, *s, *t)).collect();
        let backward: Vec<f64> = queries.iter().rev().map(|(x, s, t)| f2.increment(x, *s, *t)).collect();
        for (a, b) in forward.iter().zip(backward.iter().rev()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(f2.cached_sites(), 1);
    }

    #[test]
    fn increments_have_brownian_variance() {
        let n = 20_000;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut cross = 0.0;
        for seed in 0..n {
            let f = BrownianField::new(seed, 3);
            let a = f.increment(&[0, 0, 0], 0.25, 1.75);
            let b = f.increment(&[0, 0, 0], 1.75, 2.3);
            s1 += a * a;
            s2 += b * b;
            cross += a * b;
        }
        let nf = n as f64;
        assert!((s1 / nf - 1.5).abs() < 4.0 * 1.5 * (2.0 / nf).sqrt());
        assert!((s2 / nf - 0.55).abs() < 4.0 * 0.55 * (2.0 / nf).sqrt());
        assert!((cross / nf).abs() < 4.0 * (1.5f64 * 0.55 / nf).sqrt());
    }

    #[test]
    fn shift_matches_definition() {
        let f = BrownianField::new(1, 3);
        let x = [0, 1, 0];
        let g = f.wiener_shift(1.5);
        assert_eq!(g.increment(&x, 0.2, 0.9), f.increment(&x, 1.7, 2.4));
        assert_eq!(g.site_path(&x, 0.0, 1.0).value(0.0), 0.0);
        let z = f.wiener_shift(0.0);
        assert_eq!(z.increment(&x, -0.3, 2.2), f.increment(&x, -0.3, 2.2));
    }

    #[test]
    fn reversed_view_flips_increments() {
        let f = BrownianField::new(4, 3);
        let r = f.time_reversed();
        let x = [2, 0, 1];
        assert_eq!(r.increment(&x, -2.5, -0.5), f.increment(&x, 0.5, 2.5));
        assert_eq!(r.increment(&x, 0.25, 1.0), f.increment(&x, -1.0, -0.25));
    }

    #[test]
    fn action_of_constant_path_is_single_increment() {
        let f = BrownianField::new(2, 3);
        let o = LatticeSite::origin(3);
        let sk = Skeleton::constant(o.clone(), 0.5, 2.0);
        assert_eq!(action(&f, &sk), f.increment(o.coords(), 0.5, 2.0));
        let sk = Skeleton {
            start_site: o,
            start_time: 0.0,
            end_time: 3.0,
            jump_times: vec![0.4, 1.9, 2.2],
            steps: vec![UnitStep::from_index(0), UnitStep::from_index(3), UnitStep::from_index(1)],
        };
        let (l, r) = sk.split_at(1.0);
        assert_eq!(action_fixed(&f, &sk), action_fixed(&f, &l) + action_fixed(&f, &r));
    }

    #[test]
    fn h_plug_in() {
        let f = BrownianField::new(0, 3);
        let beta = 0.5;
        let inc = f.increment(&[0, 0, 0], 0.0, 1.0);
        let expect = (-0.125 + beta * inc).exp() - 1.0;
        assert!((h(&f, beta, &[0, 0, 0], 0.0, 1.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn grid_cursor_matches_point_queries() {
        let f = BrownianField::new(77, 2);
        let x = [3, -1];
        for (k0, level) in [(0i64, 4u32), (-3, 3), (5, 6)] {
            let mut c = GridCursor::new(&f, &x, k0, level);
            let m = 1usize << level;
            let mut buf = vec![0i64; m + 1];
            for cell in 0..3 {
                c.next_cell(&mut buf);
                let p = f.site_path(&x, (k0 + cell) as f64, (k0 + cell + 1) as f64);
                for (i, &v) in buf.iter().enumerate() {
                    let t = (k0 + cell) as f64 + i as f64 / m as f64;
                    assert_eq!(v, p.ticks_at(t), "k0={k0} level={level} cell={cell} i={i}");
                }
            }
        }
    }
}
