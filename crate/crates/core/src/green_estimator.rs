//! Green operator of the frozen proxy, its cross-derivatives, singularity exponents
//! and a desk-scale Picard iteration for the Duhamel identity.
//!
//! Sign convention: `ũ(t,x) = −∫_t^T P̃_{s,t} f(s,·)(x) ds` solves
//! `(∂_t + L̃) ũ = f` with `ũ(T,·) = 0`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain_model::{subdiagonal_jacobian, ChainSpec};
use crate::error::{invalid, Error, Result};
use crate::fit::{linear_fit, logspace};
use crate::flow_resolvent::FreezingFrame;
use crate::gaussian_proxy::{frobenius, GaussianProxy};
use crate::quadrature::{gauss_legendre_on, GaussianCubature};

pub type Source = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Time quadrature on `[t, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeMesh {
    /// `s_k = t + (T−t)(k/K)^p`, two Gauss points per cell.
    Graded { cells: usize, power: f64 },
    /// Cells `[q^{-k-1}, q^{-k}](T−t)` for `k < levels` plus `[0, q^{-levels}](T−t)`,
    /// four Gauss points per cell; suited to `(s−t)^{−θ}` integrands.
    Geometric { levels: usize, ratio: f64 },
}

impl TimeMesh {
    pub fn nodes(&self, t: f64, horizon: f64) -> Vec<(f64, f64)> {
        let h = horizon - t;
        let mut out = Vec::new();
        let mut cell = |a: f64, b: f64, q: usize| {
            let r = gauss_legendre_on(q, a, b);
            out.extend(r.nodes.into_iter().zip(r.weights));
        };
        match *self {
            TimeMesh::Graded { cells, power } => {
                for k in 0..cells {
                    let a = t + h * (k as f64 / cells as f64).powf(power);
                    let b = t + h * ((k + 1) as f64 / cells as f64).powf(power);
                    cell(a, b, 2);
                }
            }
            TimeMesh::Geometric { levels, ratio } => {
                cell(t, t + h * ratio.powi(-(levels as i32)), 4);
                for k in (0..levels).rev() {
                    cell(t + h * ratio.powi(-(k as i32) - 1), t + h * ratio.powi(-(k as i32)), 4);
                }
            }
        }
        out
    }

    pub fn refined(&self) -> TimeMesh {
        match *self {
            TimeMesh::Graded { cells, power } => TimeMesh::Graded { cells: 2 * cells, power },
            TimeMesh::Geometric { levels, ratio } => TimeMesh::Geometric { levels: 2 * levels + 4, ratio: ratio.sqrt() },
        }
    }
}

#[derive(Clone)]
pub struct GreenJob {
    pub spec: ChainSpec,
    pub source: Source,
    /// Declared Hölder exponents of the source, per level.
    pub exponents: Vec<f64>,
    pub t: f64,
    pub horizon: f64,
    pub x: Vec<f64>,
    pub l: usize,
    pub r: usize,
    pub mesh: TimeMesh,
    pub gh_order: usize,
    pub cov_quad: usize,
    pub frame_steps: usize,
}

impl GreenJob {
    pub fn new(spec: &ChainSpec, source: Source, t: f64, horizon: f64, x: &[f64]) -> Self {
        GreenJob {
            exponents: vec![1.0; spec.n],
            spec: spec.clone(),
            source,
            t,
            horizon,
            x: x.to_vec(),
            l: 1,
            r: 0,
            mesh: TimeMesh::Graded { cells: 32, power: 2.0 },
            gh_order: if spec.nd() <= 4 { 20 } else { 12 },
            cov_quad: 16,
            frame_steps: 128,
        }
    }

    pub fn with_derivative(mut self, l: usize, r: usize) -> Self {
        self.l = l;
        self.r = r;
        self.mesh = TimeMesh::Geometric { levels: 40, ratio: 2.0 };
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.horizon > self.t) {
            return invalid("horizon must exceed t");
        }
        if self.x.len() != self.spec.nd() {
            return invalid("target point has wrong dimension");
        }
        if self.exponents.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            return invalid("declared exponents must lie in (0, 1]");
        }
        Ok(())
    }

    fn frame(&self) -> Result<FreezingFrame> {
        FreezingFrame::new(&self.spec, self.t, &self.x, self.horizon, self.frame_steps)
    }
}

/// `−∫_t^T P̃_{s,t} f(s,·)(x) ds`, frozen at `(t, x)`.
pub fn green_apply(job: &GreenJob) -> Result<f64> {
    job.validate()?;
    let frame = job.frame()?;
    let cub = GaussianCubature::new(job.spec.nd(), job.gh_order);
    let mut acc = 0.0;
    for (s, w) in job.mesh.nodes(job.t, job.horizon) {
        let proxy = GaussianProxy::new(&job.spec, &frame, job.t, s, job.cov_quad)?;
        let f = &job.source;
        acc -= w * proxy.semigroup_apply(&cub, &job.x, |y| f(s, y));
    }
    Ok(acc)
}

/// `green_apply` on the job mesh and on its refinement; errors if they disagree beyond `tol`.
pub fn green_apply_checked(job: &GreenJob, tol: f64) -> Result<f64> {
    let a = green_apply(job)?;
    let mut fine = job.clone();
    fine.mesh = job.mesh.refined();
    let b = green_apply(&fine)?;
    if (a - b).abs() > tol * (1.0 + b.abs()) {
        return Err(Error::NoConvergence { tol, change: (a - b).abs() });
    }
    Ok(b)
}

/// Whitened-coordinate pieces of a proxy: `A = R̃* L^{-T}` gives `D_x p / p = A z`.
struct DerivKernel {
    a: DMatrix<f64>,
    m: DVector<f64>,
    factor: DMatrix<f64>,
}

impl DerivKernel {
    fn new(p: &GaussianProxy, x: &[f64]) -> Self {
        let lt_inv = p
            .factor
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(p.nd(), p.nd()))
            .expect("nonsingular factor");
        DerivKernel { a: p.r.transpose() * lt_inv, m: p.mean(x), factor: p.factor.clone() }
    }
}

/// The time integrand `D_{x_l} D^r_{x_1} P̃_{s,t}[f(s,·) − f(s, ·_{1:l−1}, θ^{l:n}_{s,t}(x))](x)`,
/// frozen at `(t, x)`, as a `d×1` (`r = 0`) or `d×d` (`r = 1`) tensor.
#[allow(clippy::too_many_arguments)]
pub fn centered_derivative_integrand(
    spec: &ChainSpec,
    proxy: &GaussianProxy,
    theta: &[f64],
    x: &[f64],
    f: &dyn Fn(&[f64]) -> f64,
    l: usize,
    r: usize,
    cub: &GaussianCubature,
) -> DMatrix<f64> {
    let d = spec.d;
    let nd = spec.nd();
    let k = DerivKernel::new(proxy, x);
    let lo = (l - 1) * d;
    let mut out = DMatrix::zeros(d, if r == 0 { 1 } else { d });
    let mut y = vec![0.0; nd];
    let mut yc = vec![0.0; nd];
    let mut az = vec![0.0; nd];
    cub.for_each(|z, w| {
        for i in 0..nd {
            let mut v = k.m[i];
            for j in 0..=i {
                v += k.factor[(i, j)] * z[j];
            }
            y[i] = v;
        }
        yc[..lo].copy_from_slice(&y[..lo]);
        yc[lo..].copy_from_slice(&theta[lo..]);
        let df = f(&y) - f(&yc);
        if df == 0.0 {
            return;
        }
        for i in 0..nd {
            let mut v = 0.0;
            for j in 0..nd {
                v += k.a[(i, j)] * z[j];
            }
            az[i] = v;
        }
        if r == 0 {
            for a in 0..d {
                out[(a, 0)] += w * az[lo + a] * df;
            }
        } else {
            for a in 0..d {
                for b in 0..d {
                    let mut hab = 0.0;
                    for j in 0..nd {
                        hab += k.a[(lo + a, j)] * k.a[(b, j)];
                    }
                    out[(a, b)] += w * (az[lo + a] * az[b] - hab) * df;
                }
            }
        }
    });
    out
}

/// `D_{x_l} D^r_{x_1} ũ(t, x)` through the centered representation.
pub fn green_cross_derivative(job: &GreenJob) -> Result<DMatrix<f64>> {
    job.validate()?;
    if job.l < 1 || job.l > job.spec.n || job.r > 1 {
        return invalid("need l in [1, n] and r in {0, 1}");
    }
    let frame = job.frame()?;
    let cub = GaussianCubature::new(job.spec.nd(), job.gh_order);
    let d = job.spec.d;
    let mut acc = DMatrix::zeros(d, if job.r == 0 { 1 } else { d });
    for (s, w) in job.mesh.nodes(job.t, job.horizon) {
        let proxy = GaussianProxy::new(&job.spec, &frame, job.t, s, job.cov_quad)?;
        let theta = frame.theta(s)?;
        let src = &job.source;
        let f = |y: &[f64]| src(s, y);
        acc -= centered_derivative_integrand(&job.spec, &proxy, &theta, &job.x, &f, job.l, job.r, &cub) * w;
    }
    Ok(acc)
}

/// Derivative on the job mesh and on its refinement, for divergence diagnostics.
pub fn green_cross_derivative_refinement(job: &GreenJob) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = green_cross_derivative(job)?;
    let mut fine = job.clone();
    fine.mesh = job.mesh.refined();
    Ok((a, green_cross_derivative(&fine)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SingularityFit {
    pub l: usize,
    pub r: usize,
    pub j: usize,
    pub beta: f64,
    pub predicted: f64,
    pub fitted: f64,
    pub residual: f64,
    pub gaps: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn predicted_exponent(l: usize, r: usize, j: usize, beta: f64) -> f64 {
    -(l as f64 - 0.5) - r as f64 / 2.0 + beta * (j as f64 - 0.5)
}

/// Log-log slope of `sup_κ |D_{x_l}D^r_{x_1} P̃_{t+h,t}(centered |y_j|^β)(x_κ)|` over `h`,
/// with probes `x_κ = κ h^{j−1/2} e_j`.
#[allow(clippy::too_many_arguments)]
pub fn singularity_exponent_fit(
    spec: &ChainSpec,
    j: usize,
    beta: f64,
    l: usize,
    r: usize,
    gaps: &[f64],
    kappas: &[f64],
    gh_order: usize,
    max_residual: f64,
) -> Result<SingularityFit> {
    if !(beta > 0.0 && beta <= 1.0) {
        return invalid("beta must lie in (0, 1]");
    }
    if j < 1 || j > spec.n || l < 1 || l > spec.n || r > 1 {
        return invalid("indices out of range");
    }
    let (n, d) = (spec.n, spec.d);
    let cub = GaussianCubature::new(n * d, gh_order);
    let f = move |y: &[f64]| -> f64 {
        let v: f64 = (0..d).map(|c| y[(j - 1) * d + c].powi(2)).sum::<f64>();
        v.sqrt().powf(beta)
    };
    let values: Vec<f64> = gaps
        .par_iter()
        .map(|&h| -> Result<f64> {
            let mut best = 0.0f64;
            for &kappa in kappas {
                let mut x = vec![0.0; n * d];
                x[(j - 1) * d] = kappa * h.powf(j as f64 - 0.5);
                let frame = FreezingFrame::new(spec, 0.0, &x, h, 64)?;
                let proxy = GaussianProxy::new(spec, &frame, 0.0, h, 16)?;
                let theta = frame.theta(h)?;
                let v = centered_derivative_integrand(spec, &proxy, &theta, &x, &f, l, r, &cub);
                best = best.max(frobenius(&v));
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Degenerate("integrand vanishes on the probe family".into()));
    }
    let lx: Vec<f64> = gaps.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let (fitted, _, residual) = linear_fit(&lx, &ly);
    if residual > max_residual {
        return Err(Error::Quadrature(format!("fit residual {residual:e} exceeds {max_residual:e}")));
    }
    Ok(SingularityFit { l, r, j, beta, predicted: predicted_exponent(l, r, j, beta), fitted, residual, gaps: gaps.to_vec(), values })
}

/// Default log-spaced gap grid for exponent fits.
pub fn default_gaps() -> Vec<f64> {
    logspace(1e-4, 1e-1, 10)
}

const FD_GRAD: f64 = 1e-5;
const FD_HESS: f64 = 1e-4;

/// Gradient and first-block Hessian by central differences.
fn fd_derivatives(phi: &dyn Fn(&[f64]) -> f64, x: &[f64], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let nd = x.len();
    let mut xp = x.to_vec();
    let mut grad = vec![0.0; nd];
    for k in 0..nd {
        let h = FD_GRAD * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let a = phi(&xp);
        xp[k] = x[k] - h;
        let b = phi(&xp);
        xp[k] = x[k];
        grad[k] = (a - b) / (2.0 * h);
    }
    let f0 = phi(x);
    let mut hess = DMatrix::zeros(d, d);
    for a in 0..d {
        let h = FD_HESS * x[a].abs().max(1.0);
        xp[a] = x[a] + h;
        let p = phi(&xp);
        xp[a] = x[a] - h;
        let m = phi(&xp);
        xp[a] = x[a];
        hess[(a, a)] = (p - 2.0 * f0 + m) / (h * h);
        for b in 0..a {
            let hb = FD_HESS * x[b].abs().max(1.0);
            let mut q = |sa: f64, sb: f64| {
                xp[a] = x[a] + sa * h;
                xp[b] = x[b] + sb * hb;
                let v = phi(&xp);
                xp[a] = x[a];
                xp[b] = x[b];
                v
            };
            let v = (q(1.0, 1.0) - q(1.0, -1.0) - q(-1.0, 1.0) + q(-1.0, -1.0)) / (4.0 * h * hb);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    (grad, hess)
}

/// `L_t φ(x) = ⟨F(t,x), Dφ⟩ + ½ Tr(a(t,x) D²_{x_1} φ)` by finite differences.
pub fn apply_generator(spec: &ChainSpec, phi: &dyn Fn(&[f64]) -> f64, t: f64, x: &[f64]) -> f64 {
    let (grad, hess) = fd_derivatives(phi, x, spec.d);
    let mut f = vec![0.0; spec.nd()];
    spec.drift(t, x, &mut f);
    let a = spec.diffusion(t, x);
    generator_value(&f, &a, &grad, &hess)
}

fn generator_value(f: &[f64], a: &DMatrix<f64>, grad: &[f64], hess: &DMatrix<f64>) -> f64 {
    let drift: f64 = f.iter().zip(grad).map(|(u, v)| u * v).sum();
    drift + 0.5 * (a * hess).trace()
}

/// Frozen drift `F(s, θ_s) + DF(s, θ_s)(y − θ_s)` and diffusion `a(s, θ_s)`.
pub struct FrozenCoefficients {
    pub theta: Vec<f64>,
    pub f_theta: Vec<f64>,
    pub jac: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

impl FrozenCoefficients {
    pub fn new(spec: &ChainSpec, frame: &FreezingFrame, s: f64) -> Result<Self> {
        let theta = frame.theta(s)?;
        let mut f_theta = vec![0.0; spec.nd()];
        spec.drift(s, &theta, &mut f_theta);
        let jac = subdiagonal_jacobian(spec, s, &theta)?;
        let a = spec.diffusion(s, &theta);
        Ok(FrozenCoefficients { theta, f_theta, jac, a })
    }

    pub fn drift(&self, y: &[f64]) -> Vec<f64> {
        let dy = DVector::from_iterator(y.len(), y.iter().zip(&self.theta).map(|(a, b)| a - b));
        let lin = &self.jac * dy;
        self.f_theta.iter().zip(lin.iter()).map(|(a, b)| a + b).collect()
    }
}

/// `(L_s − L̃_s) φ(y)` with `L̃` frozen along the frame.
pub fn generator_difference(spec: &ChainSpec, frozen: &FrozenCoefficients, phi: &dyn Fn(&[f64]) -> f64, s: f64, y: &[f64]) -> f64 {
    let (grad, hess) = fd_derivatives(phi, y, spec.d);
    let mut f = vec![0.0; spec.nd()];
    spec.drift(s, y, &mut f);
    let ft = frozen.drift(y);
    let df: Vec<f64> = f.iter().zip(&ft).map(|(a, b)| a - b).collect();
    let da = spec.diffusion(s, y) - &frozen.a;
    generator_value(&df, &da, &grad, &hess)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametrixConfig {
    pub t0: f64,
    pub horizon: f64,
    /// Single freezing point shared by every `(t, x)`.
    pub xi: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
    pub time_levels: usize,
    pub gh_order: usize,
    pub gauss_per_cell: usize,
    pub iterations: usize,
    pub probes: Vec<Vec<f64>>,
    pub fd_step: f64,
}

impl ParametrixConfig {
    pub fn around(xi: &[f64], half_width: f64, t0: f64, horizon: f64, iterations: usize) -> Self {
        let off = |c: f64| xi.iter().enumerate().map(|(a, v)| if a == 0 { v + c * half_width } else { *v }).collect();
        ParametrixConfig {
            t0,
            horizon,
            xi: xi.to_vec(),
            lo: xi.iter().map(|v| v - half_width).collect(),
            hi: xi.iter().map(|v| v + half_width).collect(),
            points_per_axis: 17,
            time_levels: 8,
            gh_order: 10,
            gauss_per_cell: 4,
            iterations,
            probes: vec![xi.to_vec(), off(0.3), off(-0.3)],
            fd_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametrixReport {
    /// `u^{(k)}` at the probes, one row per iterate `k = 0..=K`.
    pub values: Vec<Vec<f64>>,
    /// Max over probes of `|(∂_t + L) u^{(k)} − f|`.
    pub residuals: Vec<f64>,
}

struct GridField {
    lo: Vec<f64>,
    hi: Vec<f64>,
    points: usize,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl GridField {
    fn node(&self, idx: usize) -> Vec<f64> {
        let nd = self.lo.len();
        let mut rem = idx;
        (0..nd)
            .map(|a| {
                let i = rem % self.points;
                rem /= self.points;
                self.lo[a] + (self.hi[a] - self.lo[a]) * i as f64 / (self.points - 1) as f64
            })
            .collect()
    }

    fn spatial(&self, level: usize, y: &[f64]) -> f64 {
        let nd = self.lo.len();
        let p = self.points;
        let mut base = 0usize;
        let mut stride = 1usize;
        let mut frac = vec![0.0; nd];
        let mut strides = vec![0usize; nd];
        for a in 0..nd {
            let u = ((y[a] - self.lo[a]) / (self.hi[a] - self.lo[a]) * (p - 1) as f64).clamp(0.0, (p - 1) as f64);
            let i = (u.floor() as usize).min(p - 2);
            frac[a] = u - i as f64;
            base += i * stride;
            strides[a] = stride;
            stride *= p;
        }
        let vals = &self.values[level];
        let mut acc = 0.0;
        for corner in 0..(1usize << nd) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..nd {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += strides[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * vals[idx];
            }
        }
        acc
    }

    fn eval(&self, s: f64, y: &[f64]) -> f64 {
        let nl = self.times.len();
        let k = self.times.partition_point(|&v| v <= s).clamp(1, nl - 1);
        let (a, b) = (self.times[k - 1], self.times[k]);
        let u = ((s - a) / (b - a)).clamp(0.0, 1.0);
        (1.0 - u) * self.spatial(k - 1, y) + u * self.spatial(k, y)
    }
}

struct Picard<'a> {
    spec: &'a ChainSpec,
    frame: FreezingFrame,
    cfg: &'a ParametrixConfig,
    f: Source,
    cub: GaussianCubature,
    levels: Vec<f64>,
}

impl Picard<'_> {
    fn time_nodes(&self, t: f64) -> Vec<(f64, f64)> {
        let q = self.cfg.gauss_per_cell;
        let mut out = Vec::new();
        let mut a = t;
        for &b in self.levels.iter().filter(|&&b| b > t + 1e-14 * (1.0 + t.abs())) {
            let r = gauss_legendre_on(q, a, b);
            out.extend(r.nodes.into_iter().zip(r.weights));
            a = b;
        }
        out
    }

    fn proxies(&self, t: f64) -> Result<Vec<(f64, f64, GaussianProxy)>> {
        self.time_nodes(t)
            .into_iter()
            .map(|(s, w)| Ok((s, w, GaussianProxy::new(self.spec, &self.frame, t, s, 12)?)))
            .collect()
    }

    /// `−∫ P̃ f + ∫ P̃ g` at `x`.
    fn eval(&self, proxies: &[(f64, f64, GaussianProxy)], x: &[f64], g: Option<&GridField>) -> f64 {
        let mut acc = 0.0;
        for (s, w, p) in proxies {
            let f = &self.f;
            let v = p.semigroup_apply(&self.cub, x, |y| {
                let gv = g.map_or(0.0, |g| g.eval(*s, y));
                gv - f(*s, y)
            });
            acc += w * v;
        }
        acc
    }

    fn eval_at(&self, t: f64, x: &[f64], g: Option<&GridField>) -> Result<f64> {
        Ok(self.eval(&self.proxies(t)?, x, g))
    }

    fn residual(&self, t: f64, x: &[f64], g: Option<&GridField>) -> Result<f64> {
        let ht = self.cfg.fd_step * (self.cfg.horizon - t);
        let u0 = self.eval_at(t, x, g)?;
        let u1 = self.eval_at(t + ht, x, g)?;
        let u2 = self.eval_at(t + 2.0 * ht, x, g)?;
        let dt = (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * ht);
        let proxies = self.proxies(t)?;
        let phi = |y: &[f64]| self.eval(&proxies, y, g);
        let lu = apply_generator(self.spec, &phi, t, x);
        Ok(dt + lu - (self.f)(t, x))
    }

    /// `(L − L̃) u` on every grid node and level.
    fn correction(&self, g: Option<&GridField>) -> Result<GridField> {
        let nd = self.spec.nd();
        let count = self.cfg.points_per_axis.pow(nd as u32);
        let mut field = GridField {
            lo: self.cfg.lo.clone(),
            hi: self.cfg.hi.clone(),
            points: self.cfg.points_per_axis,
            times: self.levels_with_start(),
            values: Vec::new(),
        };
        let times = field.times.clone();
        for (li, &s) in times.iter().enumerate() {
            if li + 1 == times.len() {
                field.values.push(vec![0.0; count]);
                continue;
            }
            let proxies = self.proxies(s)?;
            let frozen = FrozenCoefficients::new(self.spec, &self.frame, s)?;
            let vals: Vec<f64> = (0..count)
                .into_par_iter()
                .map(|idx| {
                    let y = field.node(idx);
                    let phi = |z: &[f64]| self.eval(&proxies, z, g);
                    generator_difference(self.spec, &frozen, &phi, s, &y)
                })
                .collect();
            field.values.push(vals);
        }
        Ok(field)
    }

    fn levels_with_start(&self) -> Vec<f64> {
        let mut v = vec![self.cfg.t0];
        v.extend(self.levels.iter().copied());
        v
    }
}

/// Picard iteration `u⁽⁰⁾ = G f`, `u⁽ᵏ⁺¹⁾ = G f − G[(L − L̃) u⁽ᵏ⁾]` with `G = −∫ P̃`,
/// the correction held on a space-time grid with multilinear interpolation.
pub fn parametrix_iterate(spec: &ChainSpec, f: Source, cfg: &ParametrixConfig) -> Result<ParametrixReport> {
    let nd = spec.nd();
    if nd > 4 {
        return invalid("parametrix iteration is limited to n·d <= 4");
    }
    if cfg.iterations > 3 {
        return invalid("at most 3 iterations");
    }
    if !(cfg.horizon > cfg.t0) || cfg.xi.len() != nd || cfg.lo.len() != nd || cfg.hi.len() != nd {
        return invalid("inconsistent parametrix configuration");
    }
    if cfg.points_per_axis < 2 || cfg.time_levels < 1 || cfg.probes.is_empty() {
        return invalid("grid needs at least two points per axis, one level and one probe");
    }
    let frame = FreezingFrame::new(spec, cfg.t0, &cfg.xi, cfg.horizon, 256)?;
    let levels: Vec<f64> = (1..=cfg.time_levels)
        .map(|i| cfg.t0 + (cfg.horizon - cfg.t0) * i as f64 / cfg.time_levels as f64)
        .collect();
    let pic = Picard { spec, frame, cfg, f, cub: GaussianCubature::new(nd, cfg.gh_order), levels };
    let mut values = Vec::new();
    let mut residuals = Vec::new();
    let mut g: Option<GridField> = None;
    for k in 0..=cfg.iterations {
        let mut vals = Vec::new();
        let mut res = 0.0f64;
        for x in &cfg.probes {
            vals.push(pic.eval_at(cfg.t0, x, g.as_ref())?);
            res = res.max(pic.residual(cfg.t0, x, g.as_ref())?.abs());
        }
        if let Some(&prev) = residuals.last() {
            if res > 2.0 * prev && res > 1e-6 {
                return Err(Error::Divergence(format!("residual grew from {prev:e} to {res:e} at iterate {k}")));
            }
        }
        values.push(vals);
        residuals.push(res);
        if k < cfg.iterations {
            g = Some(pic.correction(g.as_ref())?);
        }
    }
    Ok(ParametrixReport { values, residuals })
}

/// Max over probes and over the sources of `|Dũ| + |D(D_1 ũ)|` (Frobenius over all blocks).
pub fn gradient_envelope(spec: &ChainSpec, sources: &[Source], probes: &[Vec<f64>], horizon: f64, gh_order: usize) -> Result<f64> {
    let n = spec.n;
    let jobs: Vec<(usize, usize)> = (0..sources.len()).flat_map(|a| (0..probes.len()).map(move |b| (a, b))).collect();
    let vals = jobs
        .par_iter()
        .map(|&(si, pi)| -> Result<f64> {
            let mut g1 = 0.0;
            let mut g2 = 0.0;
            for l in 1..=n {
                for r in 0..=1 {
                    let mut job = GreenJob::new(spec, sources[si].clone(), 0.0, horizon, &probes[pi]).with_derivative(l, r);
                    job.gh_order = gh_order;
                    let v = frobenius(&green_cross_derivative(&job)?);
                    if r == 0 {
                        g1 += v * v;
                    } else {
                        g2 += v * v;
                    }
                }
            }
            Ok(g1.sqrt() + g2.sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.into_iter().fold(0.0, f64::max))
}
