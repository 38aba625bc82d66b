use std::sync::Arc;

use chainlab::besov_thermic::GridFunction;
use chainlab::chain_model::*;
use chainlab::flow_resolvent::FreezingFrame;
use chainlab::ChainSpec;
use nalgebra::DMatrix;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_sigma() -> SigmaFn {
    Arc::new(|_t, _x: &[f64]| DMatrix::identity(1, 1))
}

fn zero() -> DriftFn {
    Arc::new(|_t, _x: &[f64], out: &mut [f64]| out.fill(0.0))
}

#[test]
fn linear_chain_assumptions() {
    let spec = ChainSpec::linear(2, 1).unwrap();
    let grid: Vec<(f64, Vec<f64>)> = (0..10).map(|k| (0.1 * k as f64, vec![(k as f64).sin(), (k as f64).cos()])).collect();
    let rep = validate_assumptions(&spec, &grid, 1e-3).unwrap();
    assert!(rep.ue_pass && rep.h_pass && rep.chain_structure_pass && rep.sample_based);
    assert_eq!(rep.ellipticity, (1.0, 1.0));
    assert!((rep.jacobian_min_singular[0] - 1.0).abs() < 1e-8);
    assert!(validate_assumptions(&spec, &[], 1e-3).is_err());
}

#[test]
fn vanishing_diffusion_fails_ellipticity() {
    let spec = ChainSpec::zero_drift(2, 1, 0.0).unwrap();
    let rep = validate_assumptions(&spec, &[(0.0, vec![1.0, 2.0])], 1e-3).unwrap();
    assert!(!rep.ue_pass);
    assert_eq!(rep.ellipticity, (0.0, 0.0));
}

#[test]
fn decoupled_second_level_fails_rank() {
    let f2: DriftFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[1].sin());
    let spec = ChainSpec::new(2, 1, vec![zero(), f2], unit_sigma(), vec![1.0, 1.0], 0.5, 0.0, 1.0, "decoupled").unwrap();
    let rep = validate_assumptions(&spec, &[(0.0, vec![0.3, -0.2]), (0.5, vec![1.0, 1.0])], 1e-3).unwrap();
    assert!(rep.ue_pass);
    assert!(!rep.h_pass);
    assert!(rep.jacobian_min_singular[0].abs() < 1e-10);
}

#[test]
fn non_chain_drift_detected() {
    // F_3 depending on x_1 breaks the chain structure.
    let d: Vec<DriftFn> = vec![
        zero(),
        Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0]),
        Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[1] + x[0] * x[0]),
    ];
    let spec = ChainSpec::new(3, 1, d, unit_sigma(), vec![1.0; 3], 0.5, 0.0, 1.0, "bad").unwrap();
    assert!(!chain_structure_holds(&spec, 0.0, &[0.5, 0.1, 0.2]));
    assert!(chain_structure_holds(&ChainSpec::holder(3, 1, vec![1.0, 0.9, 0.85], 0.5).unwrap(), 0.0, &[0.5, 0.1, 0.2]));
}

#[test]
fn spec_invariants_enforced() {
    assert!(ChainSpec::new(2, 1, vec![zero(), zero()], unit_sigma(), vec![1.0, 0.0], 0.5, 0.0, 1.0, "x").is_err());
    assert!(ChainSpec::new(2, 1, vec![zero(), zero()], unit_sigma(), vec![1.0, 1.0], 1.0, 0.0, 1.0, "x").is_err());
    assert!(ChainSpec::new(2, 1, vec![zero(), zero()], unit_sigma(), vec![1.0, 1.0], 0.5, 0.0, 0.5, "x").is_err());
    assert!(ChainSpec::new(0, 1, vec![], unit_sigma(), vec![], 0.5, 0.0, 1.0, "x").is_err());
}

#[test]
fn above_threshold_flag() {
    assert!(ChainSpec::holder(2, 1, vec![0.5, 0.8], 0.5).unwrap().above_threshold());
    assert!(!ChainSpec::holder(2, 1, vec![0.5, 0.6], 0.5).unwrap().above_threshold());
    assert!(!ChainSpec::holder(3, 1, vec![1.0, 0.9, 0.8], 0.5).unwrap().above_threshold());
    assert!(ChainSpec::holder(3, 1, vec![1.0, 0.9, 0.81], 0.5).unwrap().above_threshold());
}

#[test]
fn holder_thresholds_exact() {
    assert_eq!(holder_threshold(1).unwrap(), Ratio::from_integer(0));
    assert_eq!(holder_threshold(2).unwrap(), Ratio::new(2, 3));
    assert_eq!(holder_threshold(3).unwrap(), Ratio::new(4, 5));
    assert_eq!(holder_threshold(7).unwrap(), Ratio::new(12, 13));
}

#[test]
fn mollifier_scale_values() {
    assert!((mollifier_scale(2, 0.25).unwrap() - 0.35355339059327373).abs() < 1e-15);
    assert!((mollifier_scale(3, 0.01).unwrap() - 1.7782794100389228e-4).abs() < 1e-17);
    for i in 2..6 {
        assert_eq!(mollifier_scale(i, 1.0).unwrap(), 1.0);
    }
    assert!(mollifier_scale(1, 0.1).is_err());
    assert!(mollifier_scale(2, 0.0).is_err());
    assert!(mollifier_scale(2, 1.5).is_err());
}

#[test]
fn bump_kernel_is_a_mollifier() {
    // Independent mass check with a fine midpoint rule.
    let n = 200_000;
    let h = 2.0 / n as f64;
    let mass: f64 = (0..n).map(|k| bump(-1.0 + (k as f64 + 0.5) * h) * h).sum();
    assert!((mass - 1.0).abs() < 1e-9);
    assert_eq!(bump(1.0), 0.0);
    assert_eq!(bump(-1.3), 0.0);
    assert!((MollifierSchedule::kernel_mass(16) - 1.0).abs() < 1e-14);
    assert!(MollifierSchedule::new(vec![0.1, 0.0]).is_err());
}

fn level2(spec: &ChainSpec, x: &[f64]) -> f64 {
    let mut out = [0.0];
    spec.drift_component(2, 0.0, x, &mut out);
    out[0]
}

#[test]
fn mollification_of_affine_drift_is_exact() {
    let f2: DriftFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0] - 0.7 * x[1] + 0.3);
    let spec = ChainSpec::new(2, 1, vec![zero(), f2], unit_sigma(), vec![1.0, 1.0], 0.5, 0.0, 1.0, "affine").unwrap();
    let moll = mollify_drift(&spec, &MollifierSchedule::uniform(2, 0.4).unwrap(), 16).unwrap();
    for x in [[0.0, 0.0], [1.0, -2.0], [-0.3, 0.45]] {
        assert!((level2(&moll, &x) - level2(&spec, &x)).abs() < 1e-13);
    }
    assert!(mollify_drift(&spec, &MollifierSchedule::uniform(2, 0.4).unwrap(), 4).is_err());
}

#[test]
fn mollification_converges_at_continuity_points() {
    let spec = ChainSpec::holder(2, 1, vec![1.0, 0.6], 1.0).unwrap();
    let grid: Vec<[f64; 2]> = (0..21).map(|k| [0.2, -1.0 + 0.1 * k as f64 + 0.013]).collect();
    let mut prev = f64::INFINITY;
    for delta in [0.1, 0.01, 0.001] {
        let moll = mollify_drift(&spec, &MollifierSchedule::uniform(2, delta).unwrap(), 32).unwrap();
        let dev = grid.iter().map(|x| (level2(&moll, x) - level2(&spec, x)).abs()).fold(0.0, f64::max);
        assert!(dev < prev);
        prev = dev;
    }
    assert!(prev < 0.02);
}

#[test]
fn mollified_cusp_at_origin_scales_like_delta_beta() {
    let beta = 0.6;
    let spec = ChainSpec::holder(2, 1, vec![1.0, beta], 1.0).unwrap();
    // ∫ρ(u)|u|^β du by brute-force midpoint quadrature.
    let n = 400_000;
    let h = 2.0 / n as f64;
    let moment: f64 = (0..n).map(|k| -1.0 + (k as f64 + 0.5) * h).map(|u| bump(u) * u.abs().powf(beta) * h).sum();
    for delta in [0.2, 0.05, 0.0125] {
        let moll = mollify_drift(&spec, &MollifierSchedule::uniform(2, delta).unwrap(), 64).unwrap();
        let v = level2(&moll, &[0.0, 0.0]);
        assert!(v <= moment * f64::powf(delta, beta) * 1.02, "{v}");
        assert!(v >= moment * f64::powf(delta, beta) * 0.98, "{v}");
    }
}

#[test]
fn first_component_untouched_by_mollification() {
    let spec = ChainSpec::holder(2, 1, vec![0.5, 0.8], 1.0).unwrap();
    let moll = mollify_drift(&spec, &MollifierSchedule::uniform(2, 0.5).unwrap(), 16).unwrap();
    let (mut a, mut b) = ([0.0], [0.0]);
    spec.drift_component(1, 0.0, &[0.0, 1.0], &mut a);
    moll.drift_component(1, 0.0, &[0.0, 1.0], &mut b);
    assert_eq!(a, b);
}

#[test]
fn holder_modulus_examples() {
    let f = GridFunction::from_fn(-1.0, 1.0, 201, false, |x| x.abs().sqrt()).unwrap();
    let m = estimate_holder_modulus(&f, 0.5);
    assert!((0.95..=1.0 + 1e-12).contains(&m));
    let c = GridFunction::from_fn(-1.0, 1.0, 50, false, |_| 2.5).unwrap();
    assert_eq!(estimate_holder_modulus(&c, 0.3), 0.0);
    let id = GridFunction::from_fn(-1.0, 1.0, 50, false, |x| x).unwrap();
    assert!((estimate_holder_modulus(&id, 1.0) - 1.0).abs() < 1e-12);
    assert_eq!(estimate_holder_modulus_samples(&[0.5], &[1.0], 0.5), 0.0);
}

#[test]
fn holder_modulus_of_map_in_one_coordinate() {
    let map = |x: &[f64]| x[0].abs().powf(0.5) + 10.0 * x[1];
    let offsets: Vec<f64> = (0..41).map(|k| -1.0 + 0.05 * k as f64).collect();
    let m = estimate_holder_modulus_map(&map, &[0.0, 3.0], 0, &offsets, 0.5);
    assert!((0.95..=1.0 + 1e-12).contains(&m));
}

fn taylor_spec(eta: f64, beta2: f64) -> ChainSpec {
    let f2: DriftFn = Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
        out[0] = x[0].signum() * x[0].abs().powf(1.0 + eta) + x[1].abs().powf(beta2);
    });
    ChainSpec::new(2, 1, vec![zero(), f2], unit_sigma(), vec![1.0, beta2], eta, 0.0, 1.0, "taylor").unwrap()
}

#[test]
fn taylor_remainder_vanishes_for_affine_and_coincident_points() {
    let spec = ChainSpec::linear(3, 1).unwrap();
    let frame = FreezingFrame::new(&spec, 0.0, &[0.3, -0.2, 0.1], 1.0, 64).unwrap();
    let moduli = TaylorModuli { holder: vec![1.0; 3], jacobian: 1.0 };
    let r = drift_taylor_remainder(&spec, 2, 4, &[1.0, 2.0, 3.0], 0.5, &frame, &moduli).unwrap();
    assert!(r.remainder < 1e-9, "{}", r.remainder);

    let spec = taylor_spec(0.4, 0.7);
    let frame = FreezingFrame::new(&spec, 0.0, &[0.5, 0.2], 1.0, 64).unwrap();
    let theta = frame.theta(0.6).unwrap();
    let moduli = TaylorModuli { holder: vec![0.0, 1.0], jacobian: 1.4 };
    let r = drift_taylor_remainder(&spec, 2, 3, &theta, 0.6, &frame, &moduli).unwrap();
    assert!(r.remainder < 1e-12);
    assert!(drift_taylor_remainder(&spec, 1, 3, &theta, 0.6, &frame, &moduli).is_err());
}

#[test]
fn taylor_remainder_under_majorant() {
    let eta = 0.4;
    let spec = taylor_spec(eta, 0.7);
    let frame = FreezingFrame::new(&spec, 0.0, &[0.5, 0.2], 1.0, 64).unwrap();
    // [sgn|y|^{1+η}]' = (1+η)|y|^η has η-Hölder modulus 1+η; |y|^β has β-modulus 1.
    let moduli = TaylorModuli { holder: vec![0.0, 1.0], jacobian: 1.0 + eta };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let s: f64 = rng.random_range(0.05..1.0);
        let theta = frame.theta(s).unwrap();
        let y: Vec<f64> = theta.iter().map(|t| t + rng.random_range(-1.0..1.0)).collect();
        let r = drift_taylor_remainder(&spec, 2, 3, &y, s, &frame, &moduli).unwrap();
        assert!(r.remainder <= r.bound * (1.0 + 1e-6) + 1e-9, "{} > {}", r.remainder, r.bound);
        worst = worst.max(r.ratio);
    }
    assert!(worst > 0.0 && worst <= 1.0 + 1e-6);
}

#[test]
fn model_config_builds_builtins() {
    let cfg: ModelConfig = toml::from_str("name = \"holder\"\nn = 2\nd = 1\nbeta = [1.0, 0.8]\neta = 0.3").unwrap();
    let spec = cfg.build().unwrap();
    assert_eq!((spec.n, spec.d, spec.eta), (2, 1, 0.3));
    assert!(spec.above_threshold());
    let bad: ModelConfig = toml::from_str("name = \"nope\"\nn = 2\nd = 1").unwrap();
    assert!(bad.build().is_err());
}

proptest! {
    #[test]
    fn lower_blocks_do_not_reach_upper_levels(x in prop::collection::vec(-3.0f64..3.0, 8), bump_by in -2.0f64..2.0, k in 0usize..2) {
        // n = 4, d = 2: perturb block k+1 and check levels i ≥ k+3.
        for spec in [ChainSpec::holder(4, 2, vec![1.0, 0.9, 0.9, 0.9], 0.5).unwrap(), ChainSpec::smooth(4, 2).unwrap(), ChainSpec::peano(4, 2, vec![0.5; 4]).unwrap()] {
            let mut y = x.clone();
            y[2 * k] += bump_by;
            y[2 * k + 1] -= bump_by;
            for i in k + 3..=4 {
                let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
                spec.drift_component(i, 0.0, &x, &mut a);
                spec.drift_component(i, 0.0, &y, &mut b);
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn mollifier_scale_increasing_in_dt(i in 2usize..6, a in 0.001f64..1.0, b in 0.001f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(mollifier_scale(i, lo).unwrap() <= mollifier_scale(i, hi).unwrap());
    }

    #[test]
    fn holder_modulus_monotone_under_refinement(beta in 0.2f64..1.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = z.iter().map(|x| (3.0 * x).sin() + x.abs().sqrt()).collect();
        let coarse = estimate_holder_modulus_samples(&z[..15], &f[..15], beta);
        let fine = estimate_holder_modulus_samples(&z, &f, beta);
        prop_assert!(fine >= coarse);
    }
}
