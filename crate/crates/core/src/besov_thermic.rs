//! Thermic Besov quasi-norms on uniform 1-D grids, the derivative norm
//! equivalence and the exponent bookkeeping for the Hölder chain.
//!
//! Convolutions are exact for the piecewise-linear interpolant of the samples:
//! writing `f(y) = A + s y + Σ κ_j (y − x_j)_+` with slope jumps `κ_j`,
//! `h_v ⋆ f^{(k+2)} = Σ κ_j ∂^k h_v(· − x_j)` for every `k ≥ −2` (negative orders
//! are antiderivatives of the heat kernel).

use std::collections::BTreeMap;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::fit::{linear_fit, logspace};

/// Samples of a real function on `origin + k·spacing`, `k < values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub origin: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
    /// The function is zero outside the grid; otherwise it is continued linearly.
    pub decays: bool,
}

pub const MIN_GRID_POINTS: usize = 8;

impl GridFunction {
    pub fn new(origin: f64, spacing: f64, values: Vec<f64>, decays: bool) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() || !origin.is_finite() {
            return invalid("grid spacing must be positive and finite");
        }
        if values.len() < MIN_GRID_POINTS {
            return invalid(format!("grid needs at least {MIN_GRID_POINTS} points"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("grid values must be finite");
        }
        Ok(GridFunction { origin, spacing, values, decays })
    }

    /// Samples `f` at `count` equispaced points of `[a, b]`.
    pub fn from_fn(a: f64, b: f64, count: usize, decays: bool, f: impl Fn(f64) -> f64) -> Result<Self> {
        if count < 2 || !(b > a) {
            return invalid("need b > a and at least two points");
        }
        let h = (b - a) / (count - 1) as f64;
        GridFunction::new(a, h, (0..count).map(|k| f(a + k as f64 * h)).collect(), decays)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> f64 {
        self.origin + (self.len() - 1) as f64 * self.spacing
    }

    pub fn abscissae(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.origin + k as f64 * self.spacing).collect()
    }

    /// Slopes of the interpolant, one per cell.
    pub fn slopes(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| (w[1] - w[0]) / self.spacing).collect()
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction { values: self.values.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.len() != other.len() || self.origin != other.origin || self.spacing != other.spacing {
            return invalid("grids differ");
        }
        Ok(GridFunction {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            decays: self.decays && other.decays,
            ..self.clone()
        })
    }

    /// Grid with half the spacing, sampled from `f` on the same interval.
    pub fn doubled(&self, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::from_fn(self.origin, self.end(), 2 * self.len() - 1, self.decays, f)
    }
}

/// `(2πv)^{−d/2} exp(−|z|²/(2v))` with `d = z.len()`; `v` must be positive.
pub fn heat_kernel(v: f64, z: &[f64]) -> f64 {
    if !(v > 0.0) {
        return f64::NAN;
    }
    let r2: f64 = z.iter().map(|c| c * c).sum();
    (2.0 * std::f64::consts::PI * v).powf(-(z.len() as f64) / 2.0) * (-r2 / (2.0 * v)).exp()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `∂^k h_v(u)` for `k ≥ 0`; `k = −1, −2` give the first and second antiderivatives
/// vanishing at `−∞`.
fn kernel_order(k: i32, v: f64, u: f64) -> f64 {
    let sv = v.sqrt();
    let z = u / sv;
    match k {
        -2 => sv * (z * std_normal_cdf(z) + std_normal_pdf(z)),
        -1 => std_normal_cdf(z),
        _ => {
            let (mut he0, mut he1) = (1.0, z);
            let he = if k == 0 {
                1.0
            } else {
                for j in 1..k {
                    let next = z * he1 - j as f64 * he0;
                    he0 = he1;
                    he1 = next;
                }
                he1
            };
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * sv.powi(-k) * he * std_normal_pdf(z) / sv
        }
    }
}

const KERNEL_REACH: f64 = 10.0;
const BIN_FRACTION: f64 = 0.02;
const EVAL_STRIDE: f64 = 0.1;

/// Kink decomposition of the interpolant.
struct Kinks {
    base: f64,
    slope_left: f64,
    pos: Vec<f64>,
    kappa: Vec<f64>,
    lo: f64,
    hi: f64,
    decays: bool,
}

impl Kinks {
    fn new(f: &GridFunction) -> Result<Self> {
        let s = f.slopes();
        let x = f.abscissae();
        let n = f.len();
        let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if f.decays {
            let edge = f.values[0].abs().max(f.values[n - 1].abs());
            if edge > 1e-6 * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
                return invalid(format!("declared decay but boundary value {edge:e}"));
            }
            let mut kappa = Vec::with_capacity(n);
            kappa.push(s[0]);
            for j in 1..n - 1 {
                kappa.push(s[j] - s[j - 1]);
            }
            kappa.push(-s[n - 2]);
            Ok(Kinks { base: 0.0, slope_left: 0.0, pos: x, kappa, lo: f.origin, hi: f.end(), decays: true })
        } else {
            let kappa = (1..n - 1).map(|j| s[j] - s[j - 1]).collect();
            Ok(Kinks {
                base: f.values[0] - s[0] * f.origin,
                slope_left: s[0],
                pos: x[1..n - 1].to_vec(),
                kappa,
                lo: f.origin,
                hi: f.end(),
                decays: false,
            })
        }
    }
}

/// Kinks lumped into bins of comparable width to `√v`, with a first-moment correction.
struct Binned {
    center: Vec<f64>,
    mass: Vec<f64>,
    moment: Vec<f64>,
    prefix_mass: Vec<f64>,
    prefix_first: Vec<f64>,
}

impl Binned {
    fn new(k: &Kinks, width: usize) -> Self {
        let width = width.max(1);
        let nb = k.pos.len().div_ceil(width);
        let mut b = Binned {
            center: Vec::with_capacity(nb),
            mass: Vec::with_capacity(nb),
            moment: Vec::with_capacity(nb),
            prefix_mass: vec![0.0],
            prefix_first: vec![0.0],
        };
        for chunk in k.pos.chunks(width).zip(k.kappa.chunks(width)) {
            let (xs, ks) = chunk;
            let c = 0.5 * (xs[0] + xs[xs.len() - 1]);
            let m: f64 = ks.iter().sum();
            let mo: f64 = xs.iter().zip(ks).map(|(x, q)| q * (x - c)).sum();
            let first: f64 = xs.iter().zip(ks).map(|(x, q)| q * x).sum();
            b.center.push(c);
            b.mass.push(m);
            b.moment.push(mo);
            b.prefix_mass.push(b.prefix_mass.last().unwrap() + m);
            b.prefix_first.push(b.prefix_first.last().unwrap() + first);
        }
        b
    }

    /// `h_v ⋆ f^{(order+2)}` at `x`.
    fn eval(&self, k: &Kinks, order: i32, v: f64, x: f64) -> f64 {
        let reach = KERNEL_REACH * v.sqrt();
        let lo = self.center.partition_point(|c| *c < x - reach);
        let hi = self.center.partition_point(|c| *c <= x + reach);
        let mut acc = match order {
            -2 => k.base + k.slope_left * x + x * self.prefix_mass[lo] - self.prefix_first[lo],
            -1 => k.slope_left + self.prefix_mass[lo],
            _ => 0.0,
        };
        for b in lo..hi {
            let u = x - self.center[b];
            acc += self.mass[b] * kernel_order(order, v, u);
            if self.moment[b] != 0.0 {
                acc -= self.moment[b] * kernel_order(order + 1, v, u);
            }
        }
        acc
    }
}

/// `‖h_v ⋆ f^{(order+2)}‖_p` over the line (decaying input) or the grid interval.
fn conv_norm(k: &Kinks, spacing: f64, order: i32, v: f64, p: Exponent) -> f64 {
    if k.pos.is_empty() && k.slope_left == 0.0 && (order >= -1 || k.base == 0.0) {
        return 0.0;
    }
    let sv = v.sqrt();
    let width = ((BIN_FRACTION * sv / spacing).floor() as usize).max(1);
    let bins = Binned::new(k, width);
    let (a, b) = if k.decays {
        let pad = if order == -2 { 6.0 * sv } else { 0.0 };
        (k.lo - pad, k.hi + pad)
    } else {
        (k.lo, k.hi)
    };
    let stride = (EVAL_STRIDE * sv).max(spacing).min(b - a);
    let npts = ((b - a) / stride).ceil() as usize + 1;
    let step = (b - a) / (npts - 1) as f64;
    let vals: Vec<f64> = (0..npts).map(|i| bins.eval(k, order, v, a + i as f64 * step)).collect();
    match p {
        Exponent::One => {
            let mut s = 0.0;
            for w in vals.windows(2) {
                s += 0.5 * step * (w[0].abs() + w[1].abs());
            }
            s
        }
        Exponent::Infinity => {
            let (imax, vmax) = vals.iter().enumerate().fold((0, 0.0f64), |(bi, bv), (i, x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) });
            let xc = a + imax as f64 * step;
            let mut best = vmax;
            for j in -10i32..=10 {
                let x = (xc + j as f64 * step / 10.0).clamp(a, b);
                best = best.max(bins.eval(k, order, v, x).abs());
            }
            best
        }
    }
}

/// Integrability exponent `p` or aggregation exponent `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exponent {
    One,
    Infinity,
}

impl Exponent {
    pub fn from_f64(p: f64) -> Result<Self> {
        if p == 1.0 {
            Ok(Exponent::One)
        } else if p.is_infinite() && p > 0.0 {
            Ok(Exponent::Infinity)
        } else {
            invalid(format!("exponent {p} not in {{1, ∞}}"))
        }
    }
}

/// Log-spaced `v`-grid on `[v_min, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub nodes: usize,
}

impl Default for VGrid {
    fn default() -> Self {
        VGrid { v_min: 1e-5, v_max: 1.0, nodes: 64 }
    }
}

impl VGrid {
    pub fn refined(&self) -> VGrid {
        VGrid { v_min: self.v_min / 2.0, v_max: self.v_max, nodes: 2 * self.nodes }
    }

    pub fn points(&self) -> Vec<f64> {
        logspace(self.v_min, self.v_max, self.nodes)
    }
}

/// Tail slope of `log w` against `log v` below which the norm counts as divergent.
pub const DIVERGENCE_SLOPE: f64 = -0.005;
/// Relative growth under one refinement above which the norm counts as divergent.
pub const DIVERGENCE_GROWTH: f64 = 0.25;
/// The tail fit uses nodes with `v ≤ TAIL_SPAN · v_min`.
pub const TAIL_SPAN: f64 = 16.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermicNorm {
    pub alpha: f64,
    pub m: usize,
    pub value: f64,
    pub lowpass: f64,
    pub seminorm: f64,
    pub refined_value: f64,
    pub growth: f64,
    pub tail_slope: f64,
    pub diverges: bool,
    /// `(v, v^{m−α/2} ‖∂_v^m h_v ⋆ f‖_p)` on the refined grid.
    pub profile: Vec<(f64, f64)>,
}

/// The `α`-free part of a thermic norm: `2^{−m}‖∂^{2m}h_v ⋆ f‖_p` on a `v`-grid and on
/// its refinement, plus the low-pass term. Norms for any admissible `α` follow by weighting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermicProfile {
    pub m: usize,
    pub p: Exponent,
    pub grid: VGrid,
    pub lowpass: f64,
    pub base: Vec<(f64, f64)>,
    pub fine: Vec<(f64, f64)>,
}

fn raw_profile(k: &Kinks, spacing: f64, m: usize, deriv: i32, p: Exponent, grid: &VGrid) -> Vec<(f64, f64)> {
    let order = 2 * m as i32 + deriv - 2;
    grid.points()
        .into_par_iter()
        .map(|v| (v, 0.5f64.powi(m as i32) * conv_norm(k, spacing, order, v, p)))
        .collect()
}

impl ThermicProfile {
    pub fn new(f: &GridFunction, m: usize, p: Exponent, grid: &VGrid) -> Result<Self> {
        Self::with_derivative(f, m, p, grid, 0, true)
    }

    /// `deriv = 1` profiles `f'` instead of `f`. Without `refine` the fine profile is left
    /// empty and the divergence diagnostics fall back to the base grid.
    fn with_derivative(f: &GridFunction, m: usize, p: Exponent, grid: &VGrid, deriv: i32, refine: bool) -> Result<Self> {
        if grid.nodes < 4 || !(grid.v_min > 0.0) || !(grid.v_max > grid.v_min) {
            return invalid("bad v-grid");
        }
        let k = Kinks::new(f)?;
        Ok(ThermicProfile {
            m,
            p,
            grid: *grid,
            lowpass: conv_norm(&k, f.spacing, deriv - 2, 1.0, p),
            base: raw_profile(&k, f.spacing, m, deriv, p, grid),
            fine: if refine { raw_profile(&k, f.spacing, m, deriv, p, &grid.refined()) } else { Vec::new() },
        })
    }

    pub fn norm(&self, alpha: f64, q: Exponent) -> Result<ThermicNorm> {
        let m = self.m;
        if !((m as f64) > alpha / 2.0) {
            return invalid(format!("need m > α/2, got m = {m}, α = {alpha}"));
        }
        let weigh = |pr: &[(f64, f64)]| -> Vec<(f64, f64)> { pr.iter().map(|(v, s)| (*v, v.powf(m as f64 - alpha / 2.0) * s)).collect() };
        let base = weigh(&self.base);
        let semi = aggregate(&base, q);
        let value = self.lowpass + semi;
        let (fine, refined_value, slope) = if self.fine.is_empty() {
            let slope = tail_slope(&base, self.grid.v_min);
            (base, value, slope)
        } else {
            let fine = weigh(&self.fine);
            let refined_value = self.lowpass + aggregate(&fine, q);
            let slope = tail_slope(&fine, self.grid.refined().v_min);
            (fine, refined_value, slope)
        };
        let growth = if value > 0.0 { refined_value / value - 1.0 } else { 0.0 };
        Ok(ThermicNorm {
            alpha,
            m,
            value,
            lowpass: self.lowpass,
            seminorm: semi,
            refined_value,
            growth,
            tail_slope: slope,
            diverges: slope < DIVERGENCE_SLOPE || growth > DIVERGENCE_GROWTH,
            profile: fine,
        })
    }
}

fn aggregate(profile: &[(f64, f64)], q: Exponent) -> f64 {
    match q {
        Exponent::Infinity => profile.iter().fold(0.0f64, |m, (_, w)| m.max(*w)),
        Exponent::One => profile.windows(2).map(|s| 0.5 * (s[1].0 / s[0].0).ln() * (s[0].1 + s[1].1)).sum(),
    }
}

fn tail_slope(profile: &[(f64, f64)], v_min: f64) -> f64 {
    let tail: Vec<&(f64, f64)> = profile.iter().filter(|(v, w)| *v <= TAIL_SPAN * v_min && *w > 0.0).collect();
    if tail.len() < 3 {
        return 0.0;
    }
    let lx: Vec<f64> = tail.iter().map(|(v, _)| v.ln()).collect();
    let ly: Vec<f64> = tail.iter().map(|(_, w)| w.ln()).collect();
    linear_fit(&lx, &ly).0
}

#[allow(clippy::too_many_arguments)]
fn norm_core(f: &GridFunction, alpha: f64, p: Exponent, q: Exponent, m: usize, deriv: i32, grid: &VGrid, refine: bool) -> Result<ThermicNorm> {
    if !((m as f64) > alpha / 2.0) {
        return invalid(format!("need m > α/2, got m = {m}, α = {alpha}"));
    }
    ThermicProfile::with_derivative(f, m, p, grid, deriv, refine)?.norm(alpha, q)
}

/// Smallest admissible `m`, i.e. `⌊α/2⌋ + 1`.
pub fn default_m(alpha: f64) -> usize {
    ((alpha / 2.0).floor() + 1.0).max(0.0) as usize
}

/// `‖φ(D) f‖_p + ‖v^{m−α/2} ‖∂_v^m h_v ⋆ f‖_p‖_{L^q(dv/v)}` on the default grid,
/// with `φ(D)` the heat semigroup at time 1.
pub fn thermic_norm(f: &GridFunction, alpha: f64, p: f64, q: f64, m: usize) -> Result<ThermicNorm> {
    thermic_norm_on(f, alpha, Exponent::from_f64(p)?, Exponent::from_f64(q)?, m, &VGrid::default())
}

pub fn thermic_norm_on(f: &GridFunction, alpha: f64, p: Exponent, q: Exponent, m: usize, grid: &VGrid) -> Result<ThermicNorm> {
    norm_core(f, alpha, p, q, m, 0, grid, true)
}

/// As [`thermic_norm`] but a divergent profile is an error.
pub fn thermic_norm_checked(f: &GridFunction, alpha: f64, p: f64, q: f64, m: usize) -> Result<f64> {
    let r = thermic_norm(f, alpha, p, q, m)?;
    if r.diverges {
        return Err(Error::Divergence(format!(
            "thermic norm at α = {alpha}: tail slope {:.4}, refinement growth {:.3}",
            r.tail_slope, r.growth
        )));
    }
    Ok(r.value)
}

/// `(α, value, converged)` rows in the `B^α_{∞,∞}` scale.
pub fn thermic_table(f: &GridFunction, alphas: &[f64]) -> Result<Vec<(f64, f64, bool)>> {
    let mut profiles: BTreeMap<usize, ThermicProfile> = BTreeMap::new();
    let mut out = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let m = default_m(a);
        let r = match profiles.entry(m) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(ThermicProfile::new(f, m, Exponent::Infinity, &VGrid::default())?),
        }
        .norm(a, Exponent::Infinity)?;
        out.push((a, r.value, !r.diverges));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceRatio {
    pub alpha: f64,
    pub derivative_norm: f64,
    pub norm: f64,
    pub ratio: f64,
}

/// `‖f'‖_{B^{α−1}_{∞,∞}} / ‖f‖_{B^α_{∞,∞}}`, both with the smallest admissible `m`.
pub fn norm_equivalence_ratio(f: &GridFunction, alpha: f64) -> Result<EquivalenceRatio> {
    norm_equivalence_ratio_on(f, alpha, &VGrid::default())
}

pub fn norm_equivalence_ratio_on(f: &GridFunction, alpha: f64, grid: &VGrid) -> Result<EquivalenceRatio> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return invalid("α must lie in (0, 1)");
    }
    let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if f.slopes().iter().all(|s| s.abs() * f.spacing <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("constant input: derivative norm vanishes".into()));
    }
    let inf = Exponent::Infinity;
    let d = norm_core(f, alpha - 1.0, inf, inf, default_m(alpha - 1.0), 1, grid, false)?;
    let n = norm_core(f, alpha, inf, inf, default_m(alpha), 0, grid, false)?;
    Ok(EquivalenceRatio { alpha, derivative_norm: d.value, norm: n.value, ratio: d.value / n.value })
}

/// Exponent choices for the pair `(i, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovExponents {
    pub i: usize,
    pub k: usize,
    pub eta: f64,
    /// `(1 + η/4)/(2i − 1)`.
    pub alpha: f64,
    /// `2i − 1`.
    pub rho: usize,
    /// `1/2 + η(i − 3/2)`.
    pub gamma: f64,
    pub alpha_exact: Ratio<i64>,
    pub gamma_exact: Ratio<i64>,
    /// `γ > 1/2`, equivalently `−3/2 + γ > −1`.
    pub gamma_strict: bool,
    pub integrable: bool,
    /// `α < (1 − (1 − β_k)(k − 1/2))/(i − 1/2)` when `β_k` is given.
    pub admissible: Option<bool>,
}

pub fn besov_exponents(i: usize, k: usize, eta: f64, beta_k: Option<f64>) -> Result<BesovExponents> {
    if i < 2 || k < i {
        return invalid("need 2 ≤ i ≤ k");
    }
    if !(0.0..1.0).contains(&eta) {
        return invalid("η must lie in [0, 1)");
    }
    let eta_q = Ratio::<i64>::approximate_float(eta).ok_or_else(|| Error::InvalidInput("η not representable".into()))?;
    let ii = i as i64;
    let alpha_exact = (Ratio::from_integer(1) + eta_q / 4) / Ratio::from_integer(2 * ii - 1);
    let gamma_exact = Ratio::new(1, 2) + eta_q * Ratio::new(2 * ii - 3, 2);
    let alpha = (1.0 + eta / 4.0) / (2 * i - 1) as f64;
    let gamma = 0.5 + eta * (i as f64 - 1.5);
    let strict = gamma_exact > Ratio::new(1, 2);
    let admissible = beta_k.map(|b| alpha < (1.0 - (1.0 - b) * (k as f64 - 0.5)) / (i as f64 - 0.5));
    Ok(BesovExponents {
        i,
        k,
        eta,
        alpha,
        rho: 2 * i - 1,
        gamma,
        alpha_exact,
        gamma_exact,
        gamma_strict: strict,
        integrable: strict,
        admissible,
    })
}
