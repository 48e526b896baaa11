use polymer_core::environment::{BrownianField, Environment};
use polymer_core::params::{lambda, weak_disorder_threshold, ModelParams};
use polymer_core::partition::{estimate_z_forward, path_weight, second_moment_limit, second_moment_profile};
use polymer_core::she::{integrate, BoxSpec, Laplacian, LatticeFunction};
use polymer_core::walk::{alpha_d_streaming, sample_bridge, sample_walk};
use polymer_core::{LatticeSite, TransitionKernel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Σ_{n>=1} P(simple random walk on Z^3 is at 0 after 2n steps), from
/// Watson's integral: G(0) - 1 with G(0) = 1.516386059...
const WATSON_RETURN_SUM: f64 = 0.516_386_059_1;

#[test]
fn alpha_3_matches_watson_integral() {
    let a = alpha_d_streaming(3, 300, 0.05).unwrap();
    let (lo, hi) = a.interval();
    assert!(lo <= WATSON_RETURN_SUM && WATSON_RETURN_SUM <= hi, "{lo} .. {hi}");
    assert!((a.value - WATSON_RETURN_SUM).abs() < 2e-3, "{}", a.value);
    let th = weak_disorder_threshold(a.value, lo, hi);
    assert!(th.lo <= th.value && th.value <= th.hi);
    assert!((th.value - 0.8121).abs() < 1e-3);
}

#[test]
fn lambda_and_l2_limit() {
    approx::assert_relative_eq!(lambda(0.5), 1.0 / 3.0, max_relative = 1e-15);
    assert_eq!(second_moment_limit(0.0, 0.5), 1.0);
    assert!(second_moment_limit(1.2, WATSON_RETURN_SUM).is_infinite());
    // Finite up to sqrt(2) beta*, not only up to beta*.
    let beta_star = 1.0 / (1.0 + WATSON_RETURN_SUM).sqrt();
    assert!(second_moment_limit(1.3 * beta_star, WATSON_RETURN_SUM).is_finite());
    assert!(second_moment_limit(1.45 * beta_star, WATSON_RETURN_SUM).is_infinite());
}

#[test]
fn second_moment_profile_increases_towards_limit() {
    let p = ModelParams::new(3, 0.3);
    let ts = [1.0, 4.0, 16.0];
    let v = second_moment_profile(&p, &ts, 24).unwrap();
    let lim = second_moment_limit(0.3, WATSON_RETURN_SUM);
    assert!(v[0] > 1.0 && v.windows(2).all(|w| w[1] > w[0]), "{v:?}");
    assert!(v[2] < lim + 1e-6, "{v:?} vs {lim}");
}

#[test]
fn zero_beta_partition_function_is_one() {
    let field = BrownianField::new(3, 3);
    let p = ModelParams::new(3, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = estimate_z_forward(&field, &p, &LatticeSite::origin(3), 0.0, 5.0, 50, &mut rng);
    assert_eq!(z.mean, 1.0);
    assert_eq!(z.stderr, 0.0);
}

#[test]
fn she_conserves_mass_without_noise() {
    let field = BrownianField::new(1, 3);
    let p = ModelParams::new(3, 0.0);
    let spec = BoxSpec::new(3, 5).unwrap();
    for lap in [Laplacian::Walk, Laplacian::Graph] {
        let f0 = LatticeFunction::delta(spec, &LatticeSite::origin(3));
        let u = integrate(&field, &p, &f0, 1.0, 1.0 / 16.0, lap).unwrap();
        assert!((u.sum() - 1.0).abs() < 1e-12);
        assert!(u.values.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn she_is_linear_in_initial_data() {
    let field = BrownianField::new(9, 2);
    let p = ModelParams::new(2, 0.4);
    let spec = BoxSpec::new(2, 4).unwrap();
    let a = LatticeFunction::delta(spec, &LatticeSite::origin(2));
    let b = LatticeFunction::delta(spec, &LatticeSite::new(&[1, -2]));
    let ab = LatticeFunction::from_fn(spec, |z| a.get(z) + 3.0 * b.get(z));
    let dt = 1.0 / 32.0;
    let (ua, ub, uab) = (
        integrate(&field, &p, &a, 0.5, dt, Laplacian::Walk).unwrap(),
        integrate(&field, &p, &b, 0.5, dt, Laplacian::Walk).unwrap(),
        integrate(&field, &p, &ab, 0.5, dt, Laplacian::Walk).unwrap(),
    );
    for i in 0..spec.len() {
        approx::assert_relative_eq!(
            uab.values[i],
            ua.values[i] + 3.0 * ub.values[i],
            max_relative = 1e-12,
            epsilon = 1e-300
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_is_a_symmetric_probability(d in 1usize..=4, n in 0usize..=30, seed in any::<u64>()) {
        let k = TransitionKernel::build(d, 30, 30).unwrap();
        prop_assert!((k.total_mass(n) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<i32> = (0..d).map(|_| rand::Rng::random_range(&mut rng, -4..=4)).collect();
        let q = k.q_coords(n, &z).unwrap();
        let flipped: Vec<i32> = z.iter().rev().map(|c| -c).collect();
        prop_assert_eq!(q, k.q_coords(n, &flipped).unwrap());
        let l1: i32 = z.iter().map(|c| c.abs()).sum();
        if (l1 as usize + n) % 2 == 1 || l1 as usize > n {
            prop_assert_eq!(q, 0.0);
        }
    }

    #[test]
    fn field_increments_telescope(seed in any::<u64>(), a in 0.0f64..3.0, b in 0.0f64..3.0, c in 0.0f64..3.0) {
        let f = BrownianField::new(seed, 2);
        let x = [1, -1];
        let whole = f.increment(&x, a, c);
        let split = f.increment(&x, a, b) + f.increment(&x, b, c);
        prop_assert!((whole - split).abs() < 1e-9);
    }

    #[test]
    fn bridges_end_where_asked(seed in any::<u64>(), y0 in -3i32..=3, y1 in -3i32..=3, t in 0.5f64..4.0) {
        let k = TransitionKernel::build(2, 120, 120).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = LatticeSite::origin(2);
        let y = LatticeSite::new(&[y0, y1]);
        let sk = sample_bridge(&k, &x, 1.0, &y, 1.0 + t, &mut rng).unwrap();
        prop_assert!(sk.is_valid());
        prop_assert_eq!(sk.endpoint(), y);
        prop_assert!(sk.jump_times.iter().all(|&s| s > 1.0 && s < 1.0 + t));
    }

    #[test]
    fn path_weight_is_exp_of_action(seed in any::<u64>(), beta in 0.0f64..1.0) {
        let f = BrownianField::new(seed, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let sk = sample_walk(&LatticeSite::origin(3), 0.0, 2.0, &mut rng);
        let a = polymer_core::environment::action(&f, &sk);
        let mut by_segment = 0.0;
        sk.for_each_segment(|z, s, t| by_segment += f.increment(z.coords(), s, t));
        prop_assert!((a - by_segment).abs() < 1e-9);
        let w = path_weight(&f, beta, &sk);
        prop_assert!((w - (beta * a - beta * beta).exp()).abs() <= 1e-12 * w.max(1.0));
    }
}
