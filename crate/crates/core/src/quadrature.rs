//! Gauss rules and Gaussian expectations.

use statrs::distribution::{ContinuousCDF, Normal};

#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Rule {
    let r = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    Rule {
        nodes: r.nodes.iter().map(|z| c + h * z).collect(),
        weights: r.weights.iter().map(|w| w * h).collect(),
    }
}

/// Gauss–Hermite rule for the standard normal weight; weights sum to one.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    // physicists' nodes by Newton on orthonormal Hermite functions
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * t[0],
            3 => 1.91 * z - 0.91 * t[1],
            _ => 2.0 * z - t[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        t[n / 2] = 0.0;
    }
    let s = std::f64::consts::SQRT_2;
    let norm = std::f64::consts::PI.sqrt();
    let mut nodes: Vec<f64> = t.iter().map(|x| x * s).collect();
    let mut weights: Vec<f64> = w.iter().map(|x| x / norm).collect();
    nodes.reverse();
    weights.reverse();
    Rule { nodes, weights }
}

/// Expectation of `g(z)` for `z ~ N(0, I_dim)`.
///
/// Tensor Gauss–Hermite up to dimension 6; beyond that, Halton points pushed
/// through the normal quantile.
pub struct GaussianCubature {
    dim: usize,
    rule: Option<Rule>,
    qmc_points: usize,
}

impl GaussianCubature {
    pub fn new(dim: usize, order: usize) -> Self {
        if dim <= 6 {
            GaussianCubature { dim, rule: Some(gauss_hermite(order.max(1))), qmc_points: 0 }
        } else {
            GaussianCubature { dim, rule: None, qmc_points: 1 << 14 }
        }
    }

    /// Default order per axis: 20 up to dimension 4, 12 for 5 and 6.
    pub fn default_for(dim: usize) -> Self {
        Self::new(dim, if dim <= 4 { 20 } else { 12 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        match &self.rule {
            Some(r) => r.nodes.len().pow(self.dim as u32),
            None => self.qmc_points,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let mut z = vec![0.0; self.dim];
        match &self.rule {
            Some(rule) => {
                let q = rule.nodes.len();
                let mut idx = vec![0usize; self.dim];
                if self.dim == 0 {
                    f(&z, 1.0);
                    return;
                }
                loop {
                    let mut w = 1.0;
                    for (k, &i) in idx.iter().enumerate() {
                        z[k] = rule.nodes[i];
                        w *= rule.weights[i];
                    }
                    f(&z, w);
                    let mut k = 0;
                    loop {
                        idx[k] += 1;
                        if idx[k] < q {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                        if k == self.dim {
                            return;
                        }
                    }
                }
            }
            None => {
                let normal = Normal::standard();
                let w = 1.0 / self.qmc_points as f64;
                for i in 0..self.qmc_points {
                    for (k, zk) in z.iter_mut().enumerate() {
                        let u = halton(i as u64 + 1, PRIMES[k % PRIMES.len()]);
                        *zk = normal.inverse_cdf(u);
                    }
                    f(&z, w);
                }
            }
        }
    }

    pub fn expect(&self, mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each(|z, w| acc += w * g(z));
        acc
    }
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}
