use std::sync::Arc;

use chainlab::chain_model::DriftFn;
use chainlab::sde_lab::*;
use chainlab::{ChainSpec, Error};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn zero_coefficients_keep_the_start() {
    let spec = ChainSpec::zero_drift(3, 2, 0.0).unwrap();
    let x0 = [0.5, -1.0, 2.0, 0.0, 0.25, 3.0];
    let noise = NoiseStream::new(1, 0, 50, 2, 1.0 / 50.0);
    let path = euler_maruyama(&spec, &x0, 1.0, 50, &noise).unwrap();
    assert_eq!(path.len(), 51);
    for k in 0..path.len() {
        assert_eq!(path.state(k), &x0);
    }
    assert_eq!(*path.times.last().unwrap(), 1.0);
}

#[test]
fn noise_streams_are_reproducible() {
    let a = NoiseStream::new(9, 3, 40, 2, 0.01);
    let b = NoiseStream::new(9, 3, 40, 2, 0.01);
    let c = NoiseStream::new(9, 4, 40, 2, 0.01);
    assert_eq!(a.increment(17), b.increment(17));
    assert_ne!(a.increment(17), c.increment(17));
    let coarse = a.coarsen(4).unwrap();
    assert_eq!(coarse.steps, 10);
    assert!((coarse.dt - 0.04).abs() < 1e-15);
    let s: f64 = (8..12).map(|k| a.increment(k)[1]).sum();
    assert!((coarse.increment(2)[1] - s).abs() < 1e-15);
    assert!(a.coarsen(3).is_err());
}

#[test]
fn mismatched_noise_rejected() {
    let spec = ChainSpec::linear(2, 1).unwrap();
    let noise = NoiseStream::new(1, 0, 50, 1, 0.02);
    assert!(euler_maruyama(&spec, &[0.0, 0.0], 1.0, 40, &noise).is_err());
    assert!(euler_maruyama(&spec, &[0.0], 1.0, 50, &noise).is_err());
}

#[test]
fn integrated_brownian_variance() {
    let spec = ChainSpec::linear(2, 1).unwrap();
    let big_t = 1.5;
    let ens = simulate_ensemble(&spec, &[0.0, 0.0], big_t, 300, 20_000, 5).unwrap();
    let last = ens.steps;
    let v: Vec<f64> = (0..ens.m).map(|p| ens.path(p)[last * 2 + 1]).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    let exact = big_t.powi(3) / 3.0;
    assert!(((var - exact) / exact).abs() < 0.04, "{var} vs {exact}");
}

#[test]
fn euler_strong_error_slope() {
    let spec = ChainSpec::lipschitz(2, 1, 0.8).unwrap();
    let fine = 1024;
    let paths = 400;
    let x0 = [0.3, -0.2];
    let levels = [16usize, 32, 64, 128];
    let mut errs = vec![0.0; levels.len()];
    for p in 0..paths {
        let noise = NoiseStream::new(11, p, fine, 1, 1.0 / fine as f64);
        let reference = euler_maruyama(&spec, &x0, 1.0, fine, &noise).unwrap();
        let end = reference.state(fine).to_vec();
        for (e, &n) in errs.iter_mut().zip(&levels) {
            let coarse = noise.coarsen(fine / n).unwrap();
            let path = euler_maruyama(&spec, &x0, 1.0, n, &coarse).unwrap();
            let g: f64 = path.state(n).iter().zip(&end).map(|(a, b)| (a - b).powi(2)).sum();
            *e += g / paths as f64;
        }
    }
    let lx: Vec<f64> = levels.iter().map(|n| (1.0 / *n as f64).ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| 0.5 * e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 4.0;
    let my = ly.iter().sum::<f64>() / 4.0;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(slope > 0.45, "slope {slope}, errors {errs:?}");
}

#[test]
fn coupled_paths_share_noise() {
    let spec = ChainSpec::smooth(2, 1).unwrap();
    let noise = NoiseStream::new(2, 7, 100, 1, 0.01);
    let (a, b) = coupled_paths(&spec, &spec, &[0.1, 0.2], 1.0, 100, &noise, &noise.clone()).unwrap();
    assert_eq!(a, b);
    assert_eq!(sup_squared_gap(&a, &b), 0.0);
    let other = NoiseStream::new(3, 7, 100, 1, 0.01);
    assert!(coupled_paths(&spec, &spec, &[0.1, 0.2], 1.0, 100, &noise, &other).is_err());
    let wrong = ChainSpec::smooth(3, 1).unwrap();
    assert!(coupled_paths(&spec, &wrong, &[0.1, 0.2], 1.0, 100, &noise, &noise).is_err());
}

#[test]
fn blow_up_is_reported() {
    let f1: DriftFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * x[0]);
    let f2: DriftFn = Arc::new(|_t, x: &[f64], out: &mut [f64]| out[0] = x[0]);
    let s: chainlab::chain_model::SigmaFn = Arc::new(|_t, _x: &[f64]| DMatrix::identity(1, 1));
    let spec = ChainSpec::new(2, 1, vec![f1, f2], s, vec![1.0, 1.0], 0.5, 0.0, 1.0, "cubic").unwrap();
    let noise = NoiseStream::new(1, 0, 100, 1, 0.01);
    assert!(matches!(euler_maruyama(&spec, &[5.0, 0.0], 1.0, 100, &noise), Err(Error::BlowUp { .. })));
}

#[test]
fn ensemble_is_thread_count_independent() {
    let spec = ChainSpec::smooth(3, 2).unwrap();
    let x0 = vec![0.1; 6];
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_ensemble(&spec, &x0, 1.0, 64, 37, 2024).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.data, b.data);
    assert_eq!(a.fingerprint, b.fingerprint);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert!(text.starts_with("path,time,x0,x1,x2,x3,x4,x5\n"));
    assert_eq!(text.lines().count(), 1 + 37 * 65);
    let c = simulate_ensemble(&spec, &x0, 1.0, 64, 37, 2025).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn fingerprint_tracks_the_model() {
    let a = spec_fingerprint(&ChainSpec::smooth(2, 1).unwrap());
    let b = spec_fingerprint(&ChainSpec::smooth(2, 1).unwrap());
    let c = spec_fingerprint(&ChainSpec::linear(2, 1).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn fluctuation_exponents_kolmogorov() {
    let spec = ChainSpec::linear(3, 1).unwrap();
    let times = [0.01, 0.02, 0.04, 0.08, 0.16];
    for (i, expect) in [(1, 0.5), (2, 1.5), (3, 2.5)] {
        let fit = fluctuation_scaling(&spec, i, &times, 4000, 320, 8).unwrap();
        assert!((fit.exponent - expect).abs() < 0.05, "level {i}: {}", fit.exponent);
    }
    assert!(fluctuation_scaling(&spec, 4, &times, 10, 10, 8).is_err());
    assert!(fluctuation_scaling(&spec, 1, &[0.0, 0.1], 10, 10, 8).is_err());
}

#[test]
fn probe_with_repeated_level_is_zero() {
    let spec = ChainSpec::holder(2, 1, vec![1.0, 0.7], 0.5).unwrap();
    let opts = ProbeOptions { paths: 40, steps: 40, batches: 4, ..ProbeOptions::default() };
    let curve = strong_uniqueness_probe(&spec, &[0.1, 0.1, 0.1], &[0.0, 0.0], &opts).unwrap();
    assert!(curve.means.iter().all(|m| *m == 0.0));
    assert!(curve.non_increasing);
    assert!(strong_uniqueness_probe(&spec, &[0.1], &[0.0, 0.0], &opts).is_err());
}

#[test]
fn probe_decreases_for_lipschitz_chain() {
    let spec = ChainSpec::lipschitz(2, 1, 1.0).unwrap();
    let opts = ProbeOptions { paths: 400, steps: 100, batches: 10, ..ProbeOptions::default() };
    let curve = strong_uniqueness_probe(&spec, &[0.4, 0.2, 0.1, 0.05], &[0.0, 0.0], &opts).unwrap();
    assert!(curve.means.windows(2).all(|w| w[1] < w[0]), "{:?}", curve.means);
    assert!(curve.non_increasing);
}

#[test]
fn zvonkin_remainder_vanishes_without_mollification() {
    let spec = ChainSpec::smooth(2, 1).unwrap();
    let noise = NoiseStream::new(4, 0, 32, 1, 0.5 / 32.0);
    let path = euler_maruyama(&spec, &[0.1, -0.1], 0.5, 32, &noise).unwrap();
    let opts = ZvonkinOptions { stride: 4, ..ZvonkinOptions::default() };
    let r = zvonkin_remainder(&spec, &spec, &path, 0.5, &opts).unwrap();
    assert_eq!(r.norm, 0.0);
    assert!(r.remainder.iter().all(|v| *v == 0.0));
    assert!(zvonkin_remainder(&spec, &spec, &path, 0.25, &opts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn kolmogorov_euler_integrates_first_block(seed in 0u64..1000, x1 in -1.0f64..1.0, x2 in -1.0f64..1.0) {
        let spec = ChainSpec::linear(2, 1).unwrap();
        let steps = 64;
        let dt = 1.0 / steps as f64;
        let noise = NoiseStream::new(seed, 0, steps, 1, dt);
        let path = euler_maruyama(&spec, &[x1, x2], 1.0, steps, &noise).unwrap();
        let mut acc = x2;
        for k in 0..steps {
            acc += path.state(k)[0] * dt;
            prop_assert!((path.state(k + 1)[1] - acc).abs() < 1e-12);
        }
        let w: f64 = (0..steps).map(|k| noise.increment(k)[0]).sum();
        prop_assert!((path.state(steps)[0] - (x1 + w)).abs() < 1e-12);
    }
}
