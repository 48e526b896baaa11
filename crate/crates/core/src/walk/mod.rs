//! Simple symmetric random walk on Z^d: exact kernels, their continuous-time
//! Poisson mixtures, the Gaussian main term, and path samplers.

mod cache;
pub(crate) use cache::hex;
mod kernel;
mod sample;

pub use cache::{KernelManifest, CACHE_FORMAT_VERSION};
pub(crate) use kernel::NONE as OUTSIDE;
pub use kernel::{
    alpha_d_streaming, alpha_pair_mc, hurwitz_zeta, lclt_approx, poisson_log_weight, poisson_tail_steps, AlphaEstimate,
    AlphaMc, ContinuousTable, KernelStream, TransitionKernel, TupleIndex, DEFAULT_ENTRY_BUDGET, MAX_DIM,
};
pub use sample::{sample_bridge, sample_walk, BridgeSampler};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::fmt;
use std::ops::RangeInclusive;

/// A point of Z^d.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticeSite(SmallVec<[i32; 4]>);

impl LatticeSite {
    pub fn origin(d: usize) -> Self {
        LatticeSite(SmallVec::from_elem(0, d))
    }

    pub fn new(coords: &[i32]) -> Self {
        LatticeSite(SmallVec::from_slice(coords))
    }

    /// `k` times the unit vector along `axis`.
    pub fn along_axis(d: usize, axis: usize, k: i32) -> Self {
        let mut s = Self::origin(d);
        s.0[axis] = k;
        s
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    pub fn norm1(&self) -> usize {
        self.0.iter().map(|c| c.unsigned_abs() as usize).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.norm2_sq().sqrt()
    }

    pub fn norm2_sq(&self) -> f64 {
        self.0.iter().map(|&c| (c as f64) * (c as f64)).sum()
    }

    #[inline]
    pub fn apply(&mut self, step: UnitStep) {
        self.0[step.axis as usize] += step.sign as i32;
    }

    pub fn stepped(&self, step: UnitStep) -> Self {
        let mut s = self.clone();
        s.apply(step);
        s
    }

    pub fn add(&self, other: &LatticeSite) -> Self {
        LatticeSite(self.0.iter().zip(other.0.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &LatticeSite) -> Self {
        LatticeSite(self.0.iter().zip(other.0.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn neg(&self) -> Self {
        LatticeSite(self.0.iter().map(|a| -a).collect())
    }
}

impl fmt::Debug for LatticeSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0.as_slice())
    }
}

impl fmt::Display for LatticeSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// One of the 2d nearest-neighbour moves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitStep {
    pub axis: u16,
    pub sign: i8,
}

impl UnitStep {
    /// Index in 0..2d to step, the encoding used by the samplers.
    #[inline]
    pub fn from_index(i: usize) -> Self {
        UnitStep { axis: (i / 2) as u16, sign: if i.is_multiple_of(2) { 1 } else { -1 } }
    }

    pub fn reversed(self) -> Self {
        UnitStep { axis: self.axis, sign: -self.sign }
    }
}

/// A realized continuous-time walk on [start_time, end_time]: its start site,
/// jump times and the discrete moves made at those times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub start_site: LatticeSite,
    pub start_time: f64,
    pub end_time: f64,
    pub jump_times: Vec<f64>,
    pub steps: Vec<UnitStep>,
}

impl Skeleton {
    pub fn constant(site: LatticeSite, s: f64, t: f64) -> Self {
        Skeleton { start_site: site, start_time: s, end_time: t, jump_times: Vec::new(), steps: Vec::new() }
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// Checks the structural invariants: matching lengths, strictly
    /// increasing jump times inside (start, end).
    pub fn is_valid(&self) -> bool {
        if self.jump_times.len() != self.steps.len() || self.start_time > self.end_time {
            return false;
        }
        let d = self.start_site.dim();
        if self.steps.iter().any(|s| s.axis as usize >= d || s.sign.abs() != 1) {
            return false;
        }
        let mut prev = self.start_time;
        for &tj in &self.jump_times {
            if !(tj > prev) {
                return false;
            }
            prev = tj;
        }
        self.jump_times.last().is_none_or(|&l| l < self.end_time)
    }

    /// Site occupied at time `tau`: start plus all moves with jump time < tau.
    pub fn position_at(&self, tau: f64) -> LatticeSite {
        let mut site = self.start_site.clone();
        for (tj, st) in self.jump_times.iter().zip(&self.steps) {
            if *tj < tau {
                site.apply(*st);
            } else {
                break;
            }
        }
        site
    }

    pub fn endpoint(&self) -> LatticeSite {
        let mut site = self.start_site.clone();
        for st in &self.steps {
            site.apply(*st);
        }
        site
    }

    /// Visits each constant piece as (site, from, to), in time order.
    pub fn for_each_segment(&self, mut f: impl FnMut(&LatticeSite, f64, f64)) {
        let mut site = self.start_site.clone();
        let mut from = self.start_time;
        for (tj, st) in self.jump_times.iter().zip(&self.steps) {
            f(&site, from, *tj);
            site.apply(*st);
            from = *tj;
        }
        f(&site, from, self.end_time);
    }

    /// Splits at a time that is not a jump time; the two halves cover
    /// [start, tau] and [tau, end].
    pub fn split_at(&self, tau: f64) -> (Skeleton, Skeleton) {
        assert!(tau >= self.start_time && tau <= self.end_time);
        let k = self.jump_times.partition_point(|&tj| tj < tau);
        let left = Skeleton {
            start_site: self.start_site.clone(),
            start_time: self.start_time,
            end_time: tau,
            jump_times: self.jump_times[..k].to_vec(),
            steps: self.steps[..k].to_vec(),
        };
        let right = Skeleton {
            start_site: self.position_at(tau),
            start_time: tau,
            end_time: self.end_time,
            jump_times: self.jump_times[k..].to_vec(),
            steps: self.steps[k..].to_vec(),
        };
        (left, right)
    }

    /// The same path read backwards in time and mapped by tau -> -tau:
    /// runs on [-end, -start] from the old endpoint to the old start.
    pub fn time_reversed(&self) -> Skeleton {
        Skeleton {
            start_site: self.endpoint(),
            start_time: -self.end_time,
            end_time: -self.start_time,
            jump_times: self.jump_times.iter().rev().map(|t| -t).collect(),
            steps: self.steps.iter().rev().map(|s| s.reversed()).collect(),
        }
    }

    /// Translate the whole path in time.
    pub fn shifted(&self, dt: f64) -> Skeleton {
        Skeleton {
            start_site: self.start_site.clone(),
            start_time: self.start_time + dt,
            end_time: self.end_time + dt,
            jump_times: self.jump_times.iter().map(|t| t + dt).collect(),
            steps: self.steps.clone(),
        }
    }
}

/// All sites z with |z - center|_1 <= r, in lexicographic order.
pub fn ball_sites(center: &LatticeSite, r: usize) -> Vec<LatticeSite> {
    fn rec(d: usize, pos: usize, rem: i32, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if pos == d {
            out.push(cur.clone());
            return;
        }
        for v in -rem..=rem {
            cur.push(v);
            rec(d, pos + 1, rem - v.abs(), cur, out);
            cur.pop();
        }
    }
    let mut raw = Vec::new();
    rec(center.dim(), 0, r as i32, &mut Vec::new(), &mut raw);
    raw.into_iter().map(|z| center.add(&LatticeSite::new(&z))).collect()
}

/// Smallest step count >= n with the parity of |y|_1.
pub fn iota(y: &LatticeSite, n: usize) -> usize {
    if y.norm1() % 2 == n % 2 {
        n
    } else {
        n + 1
    }
}

/// The integer window {n >= 1 : nu t < n < (2 - nu) t}.
pub fn j_window(t: f64, nu: f64) -> RangeInclusive<usize> {
    assert!(nu > 0.5 && nu < 1.0, "nu must lie in (1/2, 1)");
    assert!(t > 0.0);
    let lo_f = nu * t;
    let hi_f = (2.0 - nu) * t;
    let mut lo = lo_f.floor() as usize + 1;
    lo = lo.max(1);
    let mut hi = hi_f.ceil() as usize;
    if hi as f64 >= hi_f {
        hi = hi.saturating_sub(1);
    }
    #[allow(clippy::reversed_empty_ranges)]
    if hi < lo {
        return 1..=0;
    }
    lo..=hi
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_counts() {
        // (2r+1)(2r^2+2r+3)/3 sites in the 1-norm ball of Z^3
        assert_eq!(ball_sites(&LatticeSite::origin(3), 8).len(), 17 * 147 / 3);
        assert_eq!(ball_sites(&LatticeSite::new(&[5]), 2).len(), 5);
    }

    #[test]
    fn iota_examples() {
        let y = LatticeSite::new(&[1, -2, 0]);
        assert_eq!(iota(&y, 5), 5);
        assert_eq!(iota(&y, 4), 5);
        assert_eq!(iota(&LatticeSite::origin(3), 0), 0);
    }

    #[test]
    fn j_window_examples() {
        assert_eq!(j_window(10.0, 0.6), 7..=13);
        assert_eq!(j_window(1.0, 0.99), 1..=1);
        assert_eq!(j_window(100.0, 0.75), 76..=124);
        assert!(j_window(0.5, 0.6).is_empty());
    }

    #[test]
    fn skeleton_split_and_reverse() {
        let sk = Skeleton {
            start_site: LatticeSite::origin(2),
            start_time: 0.0,
            end_time: 3.0,
            jump_times: vec![0.5, 1.5, 2.5],
            steps: vec![UnitStep::from_index(0), UnitStep::from_index(2), UnitStep::from_index(1)],
        };
        assert!(sk.is_valid());
        assert_eq!(sk.endpoint(), LatticeSite::new(&[0, 1]));
        assert_eq!(sk.position_at(1.0), LatticeSite::new(&[1, 0]));
        let (l, r) = sk.split_at(2.0);
        assert_eq!(l.n_jumps() + r.n_jumps(), 3);
        assert_eq!(r.start_site, LatticeSite::new(&[1, 1]));
        let rev = sk.time_reversed();
        assert!(rev.is_valid());
        assert_eq!(rev.endpoint(), LatticeSite::origin(2));
        assert_eq!(rev.time_reversed(), sk);
    }
}
