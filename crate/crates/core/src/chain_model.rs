//! Chain SDE models, assumption checks and drift mollification.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::besov_thermic::GridFunction;
use crate::error::{invalid, Error, Result};
use crate::flow_resolvent::FreezingFrame;
use crate::quadrature::gauss_legendre;

/// `F_i(t, x, out)`: `x` is the full state in `R^{nd}`, `out` has length `d`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `σ(t, x)`, a `d×d` matrix.
pub type SigmaFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub struct ChainSpec {
    pub n: usize,
    pub d: usize,
    drift: Vec<DriftFn>,
    sigma: SigmaFn,
    pub beta: Vec<f64>,
    pub eta: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub label: String,
}

impl std::fmt::Debug for ChainSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChainSpec")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("d", &self.d)
            .field("beta", &self.beta)
            .field("eta", &self.eta)
            .field("kappa", &self.kappa)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl ChainSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        d: usize,
        drift: Vec<DriftFn>,
        sigma: SigmaFn,
        beta: Vec<f64>,
        eta: f64,
        kappa: f64,
        lambda: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        if n == 0 || d == 0 {
            return invalid("n and d must be at least 1");
        }
        if drift.len() != n || beta.len() != n {
            return invalid(format!("expected {n} drift components and exponents"));
        }
        if beta.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return invalid("beta_j must lie in (0, 1]");
        }
        if !(eta > 0.0 && eta < 1.0) {
            return invalid("eta must lie in (0, 1)");
        }
        if !(lambda >= 1.0) {
            return invalid("lambda must be at least 1");
        }
        Ok(ChainSpec { n, d, drift, sigma, beta, eta, kappa, lambda, label: label.into() })
    }

    pub fn nd(&self) -> usize {
        self.n * self.d
    }

    /// Block `i` (1-based) of `x`.
    pub fn block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        &x[(i - 1) * self.d..i * self.d]
    }

    /// Component `F_i` (1-based).
    pub fn drift_component(&self, i: usize, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift[i - 1])(t, x, out)
    }

    pub fn drift_fn(&self, i: usize) -> DriftFn {
        self.drift[i - 1].clone()
    }

    pub fn sigma_fn(&self) -> SigmaFn {
        self.sigma.clone()
    }

    pub fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..self.n {
            (self.drift[i])(t, x, &mut out[i * d..(i + 1) * d]);
        }
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.sigma)(t, x)
    }

    /// `a = σσ*`.
    pub fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(t, x);
        &s * s.transpose()
    }

    pub fn with_drift(&self, i: usize, f: DriftFn) -> ChainSpec {
        let mut out = self.clone();
        out.drift[i - 1] = f;
        out
    }

    /// True iff every `β_j` exceeds `(2j−2)/(2j−1)`.
    pub fn above_threshold(&self) -> bool {
        self.beta
            .iter()
            .enumerate()
            .all(|(k, b)| *b > threshold_value(k + 1))
    }

    pub fn fingerprint(&self) -> String {
        format!(
            "{}:n={}:d={}:beta={:?}:eta={}:kappa={}:lambda={}",
            self.label, self.n, self.d, self.beta, self.eta, self.kappa, self.lambda
        )
    }

    // ---- built-in models ----

    /// `F_1 = 0`, `F_i = x_{i−1}`, `σ = I`.
    pub fn linear(n: usize, d: usize) -> Result<Self> {
        let drift = (1..=n)
            .map(|i| -> DriftFn {
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    if i == 1 {
                        out.fill(0.0);
                    } else {
                        out.copy_from_slice(&x[(i - 2) * d..(i - 1) * d]);
                    }
                })
            })
            .collect();
        ChainSpec::new(n, d, drift, identity_sigma(d), vec![1.0; n], 0.5, 0.0, 1.0, "linear")
    }

    /// `F_1 = c|x_1|^{β_1}`, `F_i = x_{i−1} + c|x_i|^{β_i}` componentwise, `σ = I`.
    pub fn holder(n: usize, d: usize, beta: Vec<f64>, amp: f64) -> Result<Self> {
        if beta.len() != n {
            return invalid("beta length must equal n");
        }
        let drift = (1..=n)
            .map(|i| -> DriftFn {
                let b = beta[i - 1];
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    for c in 0..d {
                        let own = x[(i - 1) * d + c];
                        let lower = if i == 1 { 0.0 } else { x[(i - 2) * d + c] };
                        out[c] = lower + amp * own.abs().powf(b);
                    }
                })
            })
            .collect();
        ChainSpec::new(n, d, drift, identity_sigma(d), beta, 0.5, 0.0, 1.0, "holder")
    }

    /// Smooth Lipschitz chain: `F_1 = c sin(x_1)`, `F_i = x_{i−1} + c sin(x_i)`.
    pub fn lipschitz(n: usize, d: usize, amp: f64) -> Result<Self> {
        let drift = (1..=n)
            .map(|i| -> DriftFn {
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    for c in 0..d {
                        let own = x[(i - 1) * d + c];
                        let lower = if i == 1 { 0.0 } else { x[(i - 2) * d + c] };
                        out[c] = lower + amp * own.sin();
                    }
                })
            })
            .collect();
        ChainSpec::new(n, d, drift, identity_sigma(d), vec![1.0; n], 0.5, 0.0, 1.0, "lipschitz")
    }

    /// `F_1 = sgn(x_1)|x_1|^{β_1}`, `F_i = x_{i−1} + sgn(x_i)|x_i|^{β_i}`, with `sgn(0) = 0`.
    pub fn peano(n: usize, d: usize, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != n {
            return invalid("beta length must equal n");
        }
        let drift = (1..=n)
            .map(|i| -> DriftFn {
                let b = beta[i - 1];
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    for c in 0..d {
                        let own = x[(i - 1) * d + c];
                        let lower = if i == 1 { 0.0 } else { x[(i - 2) * d + c] };
                        out[c] = lower + sgn(own) * own.abs().powf(b);
                    }
                })
            })
            .collect();
        ChainSpec::new(n, d, drift, identity_sigma(d), beta, 0.5, 0.0, 1.0, "peano")
    }

    /// Smooth nonlinear chain with state-dependent diffusion.
    ///
    /// `F_1 = sin(x_1)/2`, `F_i = x_{i−1} + sin(x_{i−1})/2 + sin(x_i)/4`,
    /// `σ = (1 + 0.3 sin(x_{1,1})) I`.
    pub fn smooth(n: usize, d: usize) -> Result<Self> {
        let drift = (1..=n)
            .map(|i| -> DriftFn {
                Arc::new(move |_t, x: &[f64], out: &mut [f64]| {
                    for c in 0..d {
                        let own = x[(i - 1) * d + c];
                        out[c] = if i == 1 {
                            0.5 * own.sin()
                        } else {
                            let lower = x[(i - 2) * d + c];
                            lower + 0.5 * lower.sin() + 0.25 * own.sin()
                        };
                    }
                })
            })
            .collect();
        let sigma: SigmaFn = Arc::new(move |_t, x: &[f64]| DMatrix::identity(d, d) * (1.0 + 0.3 * x[0].sin()));
        ChainSpec::new(n, d, drift, sigma, vec![1.0; n], 0.5, 0.3, 2.1, "smooth")
    }

    pub fn zero_drift(n: usize, d: usize, sigma_scale: f64) -> Result<Self> {
        let drift = (0..n).map(|_| -> DriftFn { Arc::new(|_t, _x: &[f64], out: &mut [f64]| out.fill(0.0)) }).collect();
        let sigma: SigmaFn = Arc::new(move |_t, _x: &[f64]| DMatrix::identity(d, d) * sigma_scale);
        ChainSpec::new(n, d, drift, sigma, vec![1.0; n], 0.5, 0.0, 1.0, "zero")
    }
}

pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn identity_sigma(d: usize) -> SigmaFn {
    Arc::new(move |_t, _x: &[f64]| DMatrix::identity(d, d))
}

/// Built-in model selection as read from a config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub amplitude: Option<f64>,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ChainSpec> {
        let beta = self.beta.clone().unwrap_or_else(|| vec![1.0; self.n]);
        let amp = self.amplitude.unwrap_or(0.5);
        let mut spec = match self.name.as_str() {
            "linear" => ChainSpec::linear(self.n, self.d),
            "holder" => ChainSpec::holder(self.n, self.d, beta, amp),
            "lipschitz" => ChainSpec::lipschitz(self.n, self.d, amp),
            "peano" => ChainSpec::peano(self.n, self.d, beta),
            "smooth" => ChainSpec::smooth(self.n, self.d),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }?;
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::Config("model.eta must lie in (0, 1)".into()));
            }
            spec.eta = eta;
        }
        Ok(spec)
    }
}

/// Subdiagonal Jacobian blocks `D_{x_{i−1}} F_i` by central differences; all other blocks zero.
pub fn subdiagonal_jacobian(spec: &ChainSpec, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    let (n, d) = (spec.n, spec.d);
    let nd = n * d;
    let mut jac = DMatrix::zeros(nd, nd);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for i in 2..=n {
        for c in 0..d {
            let col = (i - 2) * d + c;
            let h = 1e-5 * x[col].abs().max(1.0);
            xp[col] = x[col] + h;
            spec.drift_component(i, t, &xp, &mut fp);
            xp[col] = x[col] - h;
            spec.drift_component(i, t, &xp, &mut fm);
            xp[col] = x[col];
            for r in 0..d {
                let v = (fp[r] - fm[r]) / (2.0 * h);
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite Jacobian entry at level {i}")));
                }
                jac[((i - 1) * d + r, col)] = v;
            }
        }
    }
    Ok(jac)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    /// Measured range of Rayleigh quotients of `a = σσ*`.
    pub ellipticity: (f64, f64),
    pub ue_pass: bool,
    /// Smallest sampled singular value of `D_{x_{i−1}}F_i`, for `i = 2..n`.
    pub jacobian_min_singular: Vec<f64>,
    pub jacobian_floor: f64,
    pub h_pass: bool,
    pub chain_structure_pass: bool,
    /// Passing checks are sample evidence only; failures are conclusive.
    pub sample_based: bool,
}

pub fn validate_assumptions(spec: &ChainSpec, grid: &[(f64, Vec<f64>)], jacobian_floor: f64) -> Result<AssumptionReport> {
    if grid.is_empty() {
        return invalid("sample grid is empty");
    }
    let nd = spec.nd();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut jmin = vec![f64::INFINITY; spec.n.saturating_sub(1)];
    let mut chain_ok = true;
    for (t, x) in grid {
        if x.len() != nd {
            return invalid("sample point has wrong dimension");
        }
        let a = spec.diffusion(*t, x);
        let eig = SymmetricEigen::new(a).eigenvalues;
        lo = lo.min(eig.min());
        hi = hi.max(eig.max());
        let jac = subdiagonal_jacobian(spec, *t, x)?;
        for i in 2..=spec.n {
            let blk = jac.view(((i - 1) * spec.d, (i - 2) * spec.d), (spec.d, spec.d)).into_owned();
            let sv = blk.singular_values().min();
            jmin[i - 2] = jmin[i - 2].min(sv);
        }
        chain_ok &= chain_structure_holds(spec, *t, x);
    }
    let ue_pass = lo >= 1.0 / spec.lambda - 1e-12 && hi <= spec.lambda + 1e-12;
    let h_pass = jmin.iter().all(|s| *s >= jacobian_floor);
    Ok(AssumptionReport {
        samples: grid.len(),
        ellipticity: (lo, hi),
        ue_pass,
        jacobian_min_singular: jmin,
        jacobian_floor,
        h_pass,
        chain_structure_pass: chain_ok,
        sample_based: true,
    })
}

/// Perturbs every block `x_k`, `k < i−1`, and checks that `F_i` does not move.
pub fn chain_structure_holds(spec: &ChainSpec, t: f64, x: &[f64]) -> bool {
    let d = spec.d;
    let mut f0 = vec![0.0; d];
    let mut f1 = vec![0.0; d];
    for i in 3..=spec.n {
        spec.drift_component(i, t, x, &mut f0);
        let mut xp = x.to_vec();
        for v in xp[..(i - 2) * d].iter_mut() {
            *v += 0.37;
        }
        spec.drift_component(i, t, &xp, &mut f1);
        if f0 != f1 {
            return false;
        }
    }
    true
}

fn threshold_value(j: usize) -> f64 {
    (2.0 * j as f64 - 2.0) / (2.0 * j as f64 - 1.0)
}

/// `(2j−2)/(2j−1)`.
pub fn holder_threshold(j: usize) -> Result<Ratio<i64>> {
    if j == 0 {
        return invalid("level index starts at 1");
    }
    let j = j as i64;
    Ok(Ratio::new(2 * j - 2, 2 * j - 1))
}

/// `δ_i = dt^{(i−3/2)(2i−1)/(2i−2)}`; the first level is never mollified.
pub fn mollifier_scale(i: usize, dt: f64) -> Result<f64> {
    if i < 2 {
        return invalid("level 1 is not mollified");
    }
    if !(dt > 0.0 && dt <= 1.0) {
        return invalid("dt must lie in (0, 1]");
    }
    let i = i as f64;
    Ok(dt.powf((i - 1.5) * (2.0 * i - 1.0) / (2.0 * i - 2.0)))
}

/// Normalized bump `35/32 (1−u²)³` on `[−1, 1]`.
pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        35.0 / 32.0 * w * w * w
    }
}

pub const MIN_MOLLIFIER_NODES: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MollifierSchedule {
    /// `δ_i` for levels `2..=n`, in order.
    pub deltas: Vec<f64>,
}

impl MollifierSchedule {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.iter().any(|d| !(*d > 0.0)) {
            return invalid("mollifier scales must be positive");
        }
        Ok(MollifierSchedule { deltas })
    }

    pub fn uniform(n: usize, delta: f64) -> Result<Self> {
        Self::new(vec![delta; n.saturating_sub(1)])
    }

    pub fn from_dt(n: usize, dt: f64) -> Result<Self> {
        Self::new((2..=n).map(|i| mollifier_scale(i, dt)).collect::<Result<Vec<_>>>()?)
    }

    pub fn delta(&self, level: usize) -> f64 {
        self.deltas[level - 2]
    }

    /// Kernel mass under a Gauss–Legendre rule.
    pub fn kernel_mass(nodes: usize) -> f64 {
        let r = gauss_legendre(nodes);
        r.nodes.iter().zip(&r.weights).map(|(u, w)| w * bump(*u)).sum()
    }
}

/// `F_i^δ`: convolution of `F_i` in its own variable `x_i` against the bump at scale `δ_i`
/// (tensor product over the `d` coordinates). `F_1` passes through.
pub fn mollify_drift(spec: &ChainSpec, schedule: &MollifierSchedule, quad_nodes: usize) -> Result<ChainSpec> {
    if quad_nodes < MIN_MOLLIFIER_NODES {
        return invalid(format!("at least {MIN_MOLLIFIER_NODES} quadrature nodes required"));
    }
    if schedule.deltas.len() + 1 != spec.n {
        return invalid("schedule must hold one scale per level 2..n");
    }
    let rule = gauss_legendre(quad_nodes);
    let mut w1: Vec<f64> = rule.nodes.iter().zip(&rule.weights).map(|(u, w)| w * bump(*u)).collect();
    let mass: f64 = w1.iter().sum();
    for w in w1.iter_mut() {
        *w /= mass;
    }
    let nodes = Arc::new(rule.nodes);
    let w1 = Arc::new(w1);
    let d = spec.d;
    let mut out = spec.clone();
    for i in 2..=spec.n {
        let delta = schedule.delta(i);
        let inner = spec.drift_fn(i);
        let nodes = nodes.clone();
        let w1 = w1.clone();
        let q = nodes.len();
        let f: DriftFn = Arc::new(move |t, x: &[f64], res: &mut [f64]| {
            let mut xs = x.to_vec();
            let mut buf = vec![0.0; d];
            res.fill(0.0);
            let mut idx = vec![0usize; d];
            loop {
                let mut w = 1.0;
                for c in 0..d {
                    xs[(i - 1) * d + c] = x[(i - 1) * d + c] - delta * nodes[idx[c]];
                    w *= w1[idx[c]];
                }
                inner(t, &xs, &mut buf);
                for c in 0..d {
                    res[c] += w * buf[c];
                }
                let mut k = 0;
                loop {
                    idx[k] += 1;
                    if idx[k] < q {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                    if k == d {
                        return;
                    }
                }
            }
        });
        out.drift[i - 1] = f;
    }
    out.label = format!("{}~mollified{:?}", spec.label, schedule.deltas);
    Ok(out)
}

/// Largest `|f(z) − f(z')| / |z − z'|^β` over all sample pairs.
pub fn estimate_holder_modulus_samples(z: &[f64], f: &[f64], beta: f64) -> f64 {
    let mut best = 0.0f64;
    for a in 0..z.len() {
        for b in a + 1..z.len() {
            let dz = (z[a] - z[b]).abs();
            if dz > 0.0 {
                best = best.max((f[a] - f[b]).abs() / dz.powf(beta));
            }
        }
    }
    best
}

pub fn estimate_holder_modulus(f: &GridFunction, beta: f64) -> f64 {
    let z = f.abscissae();
    estimate_holder_modulus_samples(&z, &f.values, beta)
}

/// Modulus of a map in one coordinate, the others held at `base`.
pub fn estimate_holder_modulus_map(map: &dyn Fn(&[f64]) -> f64, base: &[f64], coord: usize, offsets: &[f64], beta: f64) -> f64 {
    let mut x = base.to_vec();
    let z: Vec<f64> = offsets.iter().map(|o| base[coord] + o).collect();
    let f: Vec<f64> = z
        .iter()
        .map(|v| {
            x[coord] = *v;
            map(&x)
        })
        .collect();
    estimate_holder_modulus_samples(&z, &f, beta)
}

/// Hölder moduli entering the Taylor majorant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorModuli {
    /// `[F_ℓ]_{β_j}` in variable `j`, indexed by `j−1`.
    pub holder: Vec<f64>,
    /// `[D_{ℓ−1}F_ℓ]_η`.
    pub jacobian: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaylorRemainder {
    pub remainder: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Remainder of the first-order expansion of `F_ℓ` around the frozen flow `θ = θ_{s,τ}(ξ)`.
///
/// Blocks `1..k−1` of the evaluation point come from `y`, blocks `k..n` from `θ`
/// (`k ∈ [ℓ, n+1]`; `k = n+1` takes `y` whole). The majorant is
/// `Σ_{j=ℓ}^{k−1} [F_ℓ]_{β_j}|(y−θ)_j|^{β_j} + [DF]_η |(y−θ)_{ℓ−1}|^{1+η}`.
pub fn drift_taylor_remainder(
    spec: &ChainSpec,
    ell: usize,
    k: usize,
    y: &[f64],
    s: f64,
    frame: &FreezingFrame,
    moduli: &TaylorModuli,
) -> Result<TaylorRemainder> {
    let (n, d) = (spec.n, spec.d);
    if ell < 2 || ell > n {
        return invalid("level must lie in [2, n]");
    }
    if k < ell || k > n + 1 {
        return invalid("split index must lie in [level, n+1]");
    }
    let theta = frame.theta(s)?;
    let mut z = theta.clone();
    z[..(k - 1) * d].copy_from_slice(&y[..(k - 1) * d]);
    let mut fz = vec![0.0; d];
    let mut ft = vec![0.0; d];
    spec.drift_component(ell, s, &z, &mut fz);
    spec.drift_component(ell, s, &theta, &mut ft);
    let jac = subdiagonal_jacobian(spec, s, &theta)?;
    let mut rem = vec![0.0; d];
    for r in 0..d {
        let mut lin = 0.0;
        for c in 0..d {
            let col = (ell - 2) * d + c;
            lin += jac[((ell - 1) * d + r, col)] * (y[col] - theta[col]);
        }
        rem[r] = fz[r] - ft[r] - lin;
    }
    let remainder = norm(&rem);
    let blk = |j: usize| -> f64 {
        let v: Vec<f64> = (0..d).map(|c| y[(j - 1) * d + c] - theta[(j - 1) * d + c]).collect();
        norm(&v)
    };
    let mut bound = 0.0;
    for j in ell..k {
        bound += moduli.holder[j - 1] * blk(j).powf(spec.beta[j - 1]);
    }
    bound += moduli.jacobian * blk(ell - 1).powf(1.0 + spec.eta);
    let ratio = if remainder == 0.0 { 0.0 } else { remainder / bound };
    Ok(TaylorRemainder { remainder, bound, ratio })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
