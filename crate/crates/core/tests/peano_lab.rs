use chainlab::peano_lab::*;
use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn extremal_examples() {
    assert!((peano_extremal(0.5, 1.0) - 0.25).abs() < 1e-15);
    assert!((peano_extremal(0.5, 2.0) - 1.0).abs() < 1e-15);
    assert_eq!(peano_extremal(0.5, -1.0), 0.0);
    assert!((extremal_exponent(0.5, 0) - 2.0).abs() < 1e-15);
    assert!((extremal_exponent(0.5, 1) - 3.0).abs() < 1e-15);
}

#[test]
fn extremal_solves_the_ode() {
    for alpha in [0.2, 0.5, 0.8] {
        for t in [0.3, 1.0, 2.5] {
            let h = 1e-5 * t;
            let dy = (peano_extremal(alpha, t + h) - peano_extremal(alpha, t - h)) / (2.0 * h);
            let rhs = peano_extremal(alpha, t).powf(alpha);
            assert!(((dy - rhs) / rhs).abs() < 1e-7, "α={alpha}, t={t}");
        }
    }
}

#[test]
fn iterated_extremal_solves_the_integrated_ode() {
    for (alpha, l) in [(0.3, 1usize), (0.5, 2), (0.6, 3)] {
        let p = extremal_exponent(alpha, l);
        for t in [0.4, 1.3] {
            let y = peano_extremal_iterated(alpha, l, t);
            let c = y / t.powf(p);
            let z = c * t.powf(p + l as f64) / (1..=l).map(|k| p + k as f64).product::<f64>();
            let h = 1e-5 * t;
            let dy = (peano_extremal_iterated(alpha, l, t + h) - peano_extremal_iterated(alpha, l, t - h)) / (2.0 * h);
            assert!(((dy - z.powf(alpha)) / dy).abs() < 1e-7);
        }
    }
}

#[test]
fn threshold_values() {
    assert_eq!(weak_threshold(2, 2).unwrap(), Ratio::new(1, 3));
    assert_eq!(strong_threshold(2).unwrap(), Ratio::new(2, 3));
    assert_eq!(weak_threshold(2, 3).unwrap(), Ratio::new(1, 5));
    assert_eq!(strong_threshold(1).unwrap(), Ratio::new(0, 1));
    assert!(weak_threshold(1, 2).is_err());
    assert!(weak_threshold(3, 2).is_err());
    assert!(strong_threshold(0).is_err());
    assert!((noise_threshold(1.5, 1) - 0.2).abs() < 1e-15);
    assert_eq!(noise_threshold(1.0, 3), 0.0);
}

fn sample_var(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn iterated_noise_variance() {
    let times: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..20_000 {
        a.push(*iterated_bm_noise(1, &times, &mut rng).unwrap().last().unwrap());
        b.push(*iterated_bm_noise(2, &times, &mut rng).unwrap().last().unwrap());
    }
    assert!((sample_var(&a) - 1.0).abs() < 0.04);
    assert!((sample_var(&b) - 1.0 / 3.0).abs() < 0.04 / 3.0);
    assert!(iterated_bm_noise(0, &times, &mut rng).is_err());
    assert!(iterated_bm_noise(1, &[0.0, 0.0], &mut rng).is_err());
}

#[test]
fn riemann_liouville_variance_and_scaling() {
    let gamma: f64 = 0.8;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut half, mut full) = (Vec::new(), Vec::new());
    for _ in 0..20_000 {
        let w = riemann_liouville_noise(gamma, 2.0, 64, &mut rng).unwrap();
        half.push(w[32]);
        full.push(w[64]);
    }
    let g = statrs::function::gamma::gamma(gamma + 0.5);
    let exact = 2.0f64.powf(2.0 * gamma) / (2.0 * gamma * g * g);
    assert!(((sample_var(&full) - exact) / exact).abs() < 0.04);
    let ratio = (sample_var(&full) / sample_var(&half)).sqrt();
    assert!((ratio.log2() - gamma).abs() < 0.05, "{ratio}");
    assert!(riemann_liouville_noise(0.0, 1.0, 10, &mut rng).is_err());
}

#[test]
fn self_similar_noise_dispatch() {
    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = ChaCha8Rng::seed_from_u64(5);
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    assert_eq!(self_similar_noise(1.5, 1.0, 10, &mut a).unwrap(), iterated_bm_noise(2, &times, &mut b).unwrap());
}

fn base_cfg() -> PeanoConfig {
    PeanoConfig { alpha: 0.4, gamma: 0.5, l: 0, epsilon: 0.0, horizon: 1.0, steps: 100, paths: 8, seed: 1, start: 0.0 }
}

#[test]
fn zero_noise_from_rest_stays_at_rest() {
    let ens = perturbed_peano(&base_cfg()).unwrap();
    assert!(ens.y.iter().all(|v| *v == 0.0));
    let cfg = PeanoConfig { l: 2, ..base_cfg() };
    assert!(perturbed_peano(&cfg).unwrap().y.iter().all(|v| *v == 0.0));
}

#[test]
fn terminal_value_splits_into_drift_and_noise() {
    let cfg = PeanoConfig { epsilon: 0.3, start: 0.1, l: 1, gamma: 1.5, ..base_cfg() };
    let ens = perturbed_peano(&cfg).unwrap();
    for (p, y) in ens.terminal().iter().enumerate() {
        assert!((y - (cfg.start + ens.drift[p] + ens.noise[p])).abs() < 1e-12);
        assert_eq!(ens.path(p)[0], 0.1);
    }
    assert_eq!(ens.y, perturbed_peano(&cfg).unwrap().y);
    assert!(perturbed_peano(&PeanoConfig { alpha: 1.0, ..cfg.clone() }).is_err());
    assert!(perturbed_peano(&PeanoConfig { epsilon: -1.0, ..cfg }).is_err());
}

#[test]
fn deterministic_flow_tracks_the_extremal() {
    let cfg = PeanoConfig { alpha: 0.5, start: 1e-12, steps: 20_000, paths: 1, ..base_cfg() };
    let ens = perturbed_peano(&cfg).unwrap();
    let y = ens.terminal()[0];
    assert!(((y - 0.25) / 0.25).abs() < 0.05, "{y}");
}

#[test]
fn crossing_location() {
    let a = [0.1, 0.2, 0.3, 0.4];
    assert_eq!(locate_crossing(&a, &[0.9, 0.7, 0.3, 0.1]), Crossing::At(0.25));
    assert_eq!(locate_crossing(&a, &[0.4, 0.3, 0.2, 0.1]), Crossing::AlwaysBelow);
    assert_eq!(locate_crossing(&a, &[0.9, 0.8, 0.7, 0.6]), Crossing::AlwaysAbove);
    assert_eq!(Crossing::At(0.25).value(), Some(0.25));
    assert_eq!(Crossing::AlwaysBelow.value(), None);
}

#[test]
fn scan_shares_fall_with_noise_level() {
    let alphas = [0.1, 0.3, 0.5, 0.7];
    let eps = [1.0, 0.1, 0.01];
    let settings = ScanSettings { horizon: 0.5, steps: 400, seed: 2 };
    let rep = threshold_scan(&alphas, 0.5, 0, &eps, 60, &settings).unwrap();
    assert_eq!(rep.rows.len(), 12);
    assert!((rep.threshold + 1.0).abs() < 1e-15);
    for (k, _) in alphas.iter().enumerate() {
        let shares: Vec<f64> = (0..3).map(|e| rep.rows[e * alphas.len() + k].share).collect();
        assert!(shares[0] <= shares[1] + 0.02 && shares[1] <= shares[2] + 0.02, "{shares:?}");
    }
    for r in &rep.rows {
        assert!(r.share_lo <= r.share && r.share <= r.share_hi);
        assert!((0.0..=1.0).contains(&r.share));
    }
    assert_eq!(rep.crossing, rep.crossings[2].1);
    assert!(threshold_scan(&alphas, 0.5, 0, &eps, MIN_SCAN_PATHS - 1, &settings).is_err());
    assert!(threshold_scan(&[0.5, 0.3], 0.5, 0, &eps, 40, &settings).is_err());
    assert!(threshold_scan(&alphas, 0.5, 0, &[0.0], 40, &settings).is_err());
}

proptest! {
    #[test]
    fn extremal_self_similarity(alpha in 0.05f64..0.9, t in 0.01f64..3.0, lam in 0.1f64..5.0) {
        let lhs = peano_extremal(alpha, lam * t);
        let rhs = lam.powf(1.0 / (1.0 - alpha)) * peano_extremal(alpha, t);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
    }

    #[test]
    fn thresholds_ordered(j in 2usize..20) {
        let weak = weak_threshold(2, j).unwrap();
        let strong = strong_threshold(j).unwrap();
        prop_assert!(weak < strong);
        prop_assert!(strong < Ratio::new(1, 1));
    }
}
