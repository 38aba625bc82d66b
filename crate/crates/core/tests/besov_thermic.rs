use chainlab::besov_thermic::*;
use chainlab::suite::windowed_power;
use chainlab::Error;
use num_rational::Ratio;
use proptest::prelude::*;

fn bump(a: f64, b: f64, count: usize, f: impl Fn(f64) -> f64) -> GridFunction {
    GridFunction::from_fn(a, b, count, true, f).unwrap()
}

fn gauss(x: f64) -> f64 {
    (-x * x / (2.0 * 0.02)).exp()
}

#[test]
fn heat_kernel_values() {
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((heat_kernel(1.0, &[0.0]) - c).abs() < 1e-15);
    assert!((heat_kernel(1.0, &[1.0]) - c * (-0.5f64).exp()).abs() < 1e-15);
    assert!((heat_kernel(0.5, &[0.3, -0.2]) - (-(0.09 + 0.04) / 1.0f64).exp() / std::f64::consts::PI).abs() < 1e-15);
    assert!(heat_kernel(0.0, &[0.0]).is_nan());
}

#[test]
fn heat_kernel_semigroup() {
    let (s, t, x) = (0.3, 0.5, 0.7);
    let h = 1e-3;
    let conv: f64 = (-12000..=12000).map(|k| {
        let y = k as f64 * h;
        heat_kernel(s, &[x - y]) * heat_kernel(t, &[y]) * h
    }).sum();
    assert!((conv - heat_kernel(s + t, &[x])).abs() < 1e-10);
}

#[test]
fn grid_validation() {
    assert!(GridFunction::new(0.0, 0.0, vec![0.0; 10], true).is_err());
    assert!(GridFunction::new(0.0, 0.1, vec![0.0; 4], true).is_err());
    assert!(GridFunction::new(0.0, 0.1, vec![f64::NAN; 10], true).is_err());
    assert!(Exponent::from_f64(2.0).is_err());
    assert_eq!(Exponent::from_f64(f64::INFINITY).unwrap(), Exponent::Infinity);
    let f = bump(-1.0, 1.0, 101, gauss);
    assert!(thermic_norm(&f, 2.5, 1.0, 1.0, 1).is_err());
}

#[test]
fn zero_function_has_zero_norm() {
    let f = GridFunction::new(-1.0, 0.01, vec![0.0; 201], true).unwrap();
    let r = thermic_norm(&f, 0.5, f64::INFINITY, f64::INFINITY, 1).unwrap();
    assert_eq!(r.value, 0.0);
    assert!(!r.diverges);
}

#[test]
fn dichotomy_for_power_cusp() {
    let f = windowed_power(0.5, 2.5e-4).unwrap();
    let profile = ThermicProfile::new(&f, 1, Exponent::Infinity, &VGrid::default()).unwrap();
    let below = profile.norm(0.4, Exponent::Infinity).unwrap();
    let above = profile.norm(0.6, Exponent::Infinity).unwrap();
    assert!(!below.diverges, "slope {} growth {}", below.tail_slope, below.growth);
    assert!(above.diverges, "slope {} growth {}", above.tail_slope, above.growth);
    assert!(above.refined_value > above.value);
    assert!(thermic_norm_checked(&f, 0.6, f64::INFINITY, f64::INFINITY, 1).is_err());
}

#[test]
fn homogeneity_and_triangle() {
    let f = bump(-1.0, 1.0, 801, gauss);
    let g = bump(-1.0, 1.0, 801, |x| (3.0 * x).sin() * (1.0 - x * x));
    for (p, q) in [(1.0, 1.0), (f64::INFINITY, f64::INFINITY), (1.0, f64::INFINITY)] {
        let nf = thermic_norm(&f, 0.5, p, q, 1).unwrap().value;
        let ng = thermic_norm(&g, 0.5, p, q, 1).unwrap().value;
        let nfg = thermic_norm(&f.add(&g).unwrap(), 0.5, p, q, 1).unwrap().value;
        let n3 = thermic_norm(&f.scaled(-3.0), 0.5, p, q, 1).unwrap().value;
        assert!((n3 - 3.0 * nf).abs() < 1e-10 * nf, "p={p}, q={q}");
        assert!(nfg <= (nf + ng) * (1.0 + 1e-12));
    }
}

#[test]
fn norm_grows_with_alpha() {
    let f = windowed_power(0.7, 1e-3).unwrap();
    let profile = ThermicProfile::new(&f, 1, Exponent::Infinity, &VGrid::default()).unwrap();
    let vals: Vec<f64> = [0.1, 0.3, 0.5, 0.9, 1.4].iter().map(|a| profile.norm(*a, Exponent::Infinity).unwrap().value).collect();
    assert!(vals.windows(2).all(|w| w[1] >= w[0]), "{vals:?}");
}

#[test]
fn profile_matches_direct_norm() {
    let f = bump(-1.0, 1.0, 401, gauss);
    let direct = thermic_norm(&f, 0.7, 1.0, f64::INFINITY, 1).unwrap();
    let profile = ThermicProfile::new(&f, 1, Exponent::One, &VGrid::default()).unwrap();
    let via = profile.norm(0.7, Exponent::Infinity).unwrap();
    assert!((direct.value - via.value).abs() < 1e-14 * direct.value);
    let table = thermic_table(&f, &[0.2, 0.7]).unwrap();
    assert_eq!(table.len(), 2);
    assert!(table.iter().all(|r| r.2));
}

#[test]
fn dilation_scales_seminorm() {
    let alpha = 0.5;
    let f = bump(-2.0, 2.0, 4001, gauss);
    let g = bump(-2.0, 2.0, 4001, |x| gauss(2.0 * x));
    let a = thermic_norm(&f, alpha, f64::INFINITY, f64::INFINITY, 1).unwrap().seminorm;
    let b = thermic_norm(&g, alpha, f64::INFINITY, f64::INFINITY, 1).unwrap().seminorm;
    assert!(((b / a) / 2.0f64.powf(alpha) - 1.0).abs() < 0.02, "{}", b / a);
}

#[test]
fn equivalence_ratios_are_bounded() {
    let fam = chainlab::suite::equivalence_family(0.5, 1e-3).unwrap();
    let ratios: Vec<f64> = fam.iter().map(|(_, f)| norm_equivalence_ratio(f, 0.5).unwrap().ratio).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(lo > 0.0 && hi / lo < 10.0, "{ratios:?}");
}

#[test]
fn equivalence_rejections() {
    let c = GridFunction::new(0.0, 0.01, vec![2.0; 50], false).unwrap();
    assert!(matches!(norm_equivalence_ratio(&c, 0.5), Err(Error::Degenerate(_))));
    let f = bump(-1.0, 1.0, 101, gauss);
    assert!(matches!(norm_equivalence_ratio(&f, 1.0), Err(Error::InvalidInput(_))));
    assert!(matches!(norm_equivalence_ratio(&f, 0.0), Err(Error::InvalidInput(_))));
}

#[test]
fn exponent_examples() {
    let e = besov_exponents(2, 2, 0.0, None).unwrap();
    assert_eq!(e.alpha_exact, Ratio::new(1, 3));
    assert_eq!(e.rho, 3);
    assert_eq!(e.gamma_exact, Ratio::new(1, 2));
    assert!(!e.gamma_strict && !e.integrable);
    let e = besov_exponents(2, 2, 0.08, None).unwrap();
    assert!((e.alpha - 0.34).abs() < 1e-15 && (e.gamma - 0.54).abs() < 1e-15);
    assert!(e.gamma_strict);
    let e = besov_exponents(3, 4, 0.04, None).unwrap();
    assert!((e.gamma - 0.56).abs() < 1e-15);
    assert_eq!(e.rho, 5);
    assert_eq!(besov_exponents(3, 4, 0.05, None).unwrap().alpha_exact, Ratio::new(81, 400));
    assert_eq!(besov_exponents(2, 2, 0.1, Some(1.0)).unwrap().admissible, Some(true));
    assert_eq!(besov_exponents(2, 3, 0.1, Some(0.5)).unwrap().admissible, Some(false));
    assert!(besov_exponents(1, 2, 0.1, None).is_err());
    assert!(besov_exponents(3, 2, 0.1, None).is_err());
    assert!(besov_exponents(2, 2, 1.0, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn seminorm_is_a_seminorm(c in -4.0f64..4.0, shift in -0.3f64..0.3, alpha in 0.1f64..0.9) {
        let f = bump(-1.5, 1.5, 301, gauss);
        let g = bump(-1.5, 1.5, 301, move |x| gauss(x - shift));
        let grid = VGrid { v_min: 1e-4, v_max: 1.0, nodes: 24 };
        let inf = Exponent::Infinity;
        let n = |h: &GridFunction| thermic_norm_on(h, alpha, inf, inf, 1, &grid).unwrap().value;
        let (nf, ng) = (n(&f), n(&g));
        prop_assert!((n(&f.scaled(c)) - c.abs() * nf).abs() <= 1e-10 * nf);
        prop_assert!(n(&f.add(&g.scaled(c)).unwrap()) <= (nf + c.abs() * ng) * (1.0 + 1e-12));
    }
}
