use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::kernel::{poisson_log_weight, TransitionKernel};
use super::{LatticeSite, Skeleton, UnitStep};
use crate::error::{invalid, Error, Result};

/// Continuous-time simple random walk from (x, s) run until time t.
pub fn sample_walk<R: Rng + ?Sized>(x: &LatticeSite, s: f64, t: f64, rng: &mut R) -> Skeleton {
    assert!(t >= s, "sample_walk needs s <= t");
    let two_d = 2 * x.dim();
    let mut sk = Skeleton::constant(x.clone(), s, t);
    let mut tau = s;
    loop {
        let e: f64 = Exp1.sample(rng);
        tau += e;
        if tau >= t {
            break;
        }
        sk.jump_times.push(tau);
        sk.steps.push(UnitStep::from_index(rng.random_range(0..two_d)));
    }
    sk
}

/// Exact sampler for the walk from (x, s) conditioned on being at y at time t.
///
/// The jump count is drawn from its conditional law, the discrete path
/// backwards from y through the kernel layers, and the jump times as uniform
/// order statistics.
pub struct BridgeSampler<'a> {
    kernel: &'a TransitionKernel,
    x: LatticeSite,
    s: f64,
    t: f64,
    disp: LatticeSite,
    counts: Vec<usize>,
    weights: WeightedIndex<f64>,
    probs: Vec<f64>,
}

impl<'a> BridgeSampler<'a> {
    pub fn new(
        kernel: &'a TransitionKernel,
        x: &LatticeSite,
        s: f64,
        y: &LatticeSite,
        t: f64,
        tail_eps: f64,
    ) -> Result<Self> {
        if !(t > s) {
            return Err(invalid("t", "bridge needs s < t"));
        }
        if x.dim() != kernel.dim() || y.dim() != kernel.dim() {
            return Err(invalid("d", "site dimension differs from kernel dimension"));
        }
        let dt = t - s;
        let terms = kernel.mixture_terms(dt, tail_eps)?;
        let disp = y.sub(x);
        let norm = disp.norm1();
        let mut counts = Vec::new();
        let mut raw = Vec::new();
        let mut n = norm;
        while n <= terms {
            let q = kernel.q_or_zero(n, disp.coords());
            if q > 0.0 {
                counts.push(n);
                raw.push(poisson_log_weight(n, dt).exp() * q);
            }
            n += 2;
        }
        let total: f64 = raw.iter().sum();
        if counts.is_empty() || !(total > 0.0) {
            return Err(Error::Unreachable { t: dt, norm });
        }
        let probs = raw.iter().map(|w| w / total).collect();
        let weights = WeightedIndex::new(&raw).map_err(|_| Error::Unreachable { t: dt, norm })?;
        Ok(BridgeSampler { kernel, x: x.clone(), s, t, disp, counts, weights, probs })
    }

    /// Conditional jump-count law as (n, probability) pairs.
    pub fn jump_count_law(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.counts.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Skeleton {
        let n = self.counts[self.weights.sample(rng)];
        let d = self.disp.dim();
        let mut steps = vec![UnitStep::from_index(0); n];
        let mut cur: Vec<i32> = self.disp.coords().to_vec();
        let mut cand = [0.0f64; 16];
        for k in (0..n).rev() {
            // γ_k = cur - step with weight q_k^{cur - step}
            let mut total = 0.0;
            for i in 0..2 * d {
                let st = UnitStep::from_index(i);
                cur[st.axis as usize] -= st.sign as i32;
                cand[i] = self.kernel.q_or_zero(k, &cur);
                cur[st.axis as usize] += st.sign as i32;
                total += cand[i];
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = 2 * d - 1;
            for (i, &w) in cand[..2 * d].iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            while cand[pick] == 0.0 {
                pick -= 1;
            }
            let st = UnitStep::from_index(pick);
            cur[st.axis as usize] -= st.sign as i32;
            steps[k] = st;
        }
        debug_assert!(cur.iter().all(|&c| c == 0));
        let dt = self.t - self.s;
        let mut jump_times: Vec<f64> = (0..n).map(|_| self.s + dt * rng.random::<f64>()).collect();
        jump_times.sort_by(f64::total_cmp);
        // Ties and endpoints have probability zero but can appear in floating point.
        for i in 0..n {
            let lo = if i == 0 { self.s } else { jump_times[i - 1] };
            if !(jump_times[i] > lo) {
                jump_times[i] = next_up(lo);
            }
        }
        if n > 0 && jump_times[n - 1] >= self.t {
            return self.sample(rng);
        }
        Skeleton { start_site: self.x.clone(), start_time: self.s, end_time: self.t, jump_times, steps }
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

/// One bridge draw with the default Poisson tail tolerance.
pub fn sample_bridge<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    x: &LatticeSite,
    s: f64,
    y: &LatticeSite,
    t: f64,
    rng: &mut R,
) -> Result<Skeleton> {
    Ok(BridgeSampler::new(kernel, x, s, y, t, 1e-12)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn walk_jump_count_has_poisson_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = LatticeSite::origin(3);
        let n = 200_000;
        let total: usize = (0..n).map(|_| sample_walk(&o, 1.0, 3.5, &mut rng).n_jumps()).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 2.5).abs() < 3.0 * (2.5f64 / n as f64).sqrt() + 1e-3);
        assert_eq!(sample_walk(&o, 2.0, 2.0, &mut rng).n_jumps(), 0);
    }

    #[test]
    fn bridges_end_at_target() {
        let k = TransitionKernel::build(3, 40, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = LatticeSite::new(&[1, 0, -1]);
        let y = LatticeSite::new(&[2, 2, 0]);
        let b = BridgeSampler::new(&k, &x, 0.5, &y, 4.0, 1e-12).unwrap();
        for _ in 0..2000 {
            let sk = b.sample(&mut rng);
            assert!(sk.is_valid());
            assert_eq!(sk.endpoint(), y);
            assert_eq!(sk.start_site, x);
        }
    }

    #[test]
    fn short_loop_bridge_mode_is_zero_jumps() {
        let k = TransitionKernel::build(3, 20, 20).unwrap();
        let o = LatticeSite::origin(3);
        let b = BridgeSampler::new(&k, &o, 0.0, &o, 0.1, 1e-12).unwrap();
        let (mode, _) = b.jump_count_law().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(mode, 0);
    }

    #[test]
    fn unreachable_is_reported() {
        let k = TransitionKernel::build(3, 20, 5).unwrap();
        let o = LatticeSite::origin(3);
        let far = LatticeSite::along_axis(3, 0, 9);
        assert!(matches!(BridgeSampler::new(&k, &o, 0.0, &far, 1.0, 1e-12), Err(Error::Unreachable { .. })));
    }
}
