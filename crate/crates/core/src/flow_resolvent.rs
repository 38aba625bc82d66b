//! Deterministic flow, subdiagonal resolvent and affine mean maps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain_model::{norm, subdiagonal_jacobian, ChainSpec};
use crate::error::{invalid, Error, Result};
use crate::fit::loglog_slope;

pub const BLOW_UP_GUARD: f64 = 1e8;

fn rk4_step(
    f: &mut impl FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    t: f64,
    h: f64,
    y: &mut [f64],
    k: &mut [Vec<f64>; 4],
    tmp: &mut [f64],
) -> Result<()> {
    let m = y.len();
    f(t, y, &mut k[0])?;
    for j in 0..m {
        tmp[j] = y[j] + 0.5 * h * k[0][j];
    }
    f(t + 0.5 * h, tmp, &mut k[1])?;
    for j in 0..m {
        tmp[j] = y[j] + 0.5 * h * k[1][j];
    }
    f(t + 0.5 * h, tmp, &mut k[2])?;
    for j in 0..m {
        tmp[j] = y[j] + h * k[2][j];
    }
    f(t + h, tmp, &mut k[3])?;
    for j in 0..m {
        y[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
    Ok(())
}

fn rk4_fixed(
    mut f: impl FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    t: f64,
    s: f64,
    y0: &[f64],
    steps: usize,
    guard_len: usize,
) -> Result<Vec<f64>> {
    let m = y0.len();
    let mut y = y0.to_vec();
    let mut k = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
    let mut tmp = vec![0.0; m];
    let h = (s - t) / steps as f64;
    for j in 0..steps {
        let tj = t + j as f64 * h;
        rk4_step(&mut f, tj, h, &mut y, &mut k, &mut tmp)?;
        let nrm = norm(&y[..guard_len]);
        if !(nrm <= BLOW_UP_GUARD) {
            return Err(Error::BlowUp { t: tj + h, norm: nrm });
        }
    }
    Ok(y)
}

/// Repeats fixed-step RK4 with doubled step counts until two successive results agree.
fn rk4_halving(
    mut f: impl FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    t: f64,
    s: f64,
    y0: &[f64],
    tol: f64,
    guard_len: usize,
) -> Result<Vec<f64>> {
    if s == t {
        return Ok(y0.to_vec());
    }
    let mut steps = 16;
    let mut prev = rk4_fixed(&mut f, t, s, y0, steps, guard_len)?;
    let mut change = f64::INFINITY;
    while steps < 1 << 18 {
        steps *= 2;
        let next = rk4_fixed(&mut f, t, s, y0, steps, guard_len)?;
        change = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = next.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prev = next;
        if change <= tol * scale {
            return Ok(prev);
        }
    }
    Err(Error::NoConvergence { tol, change })
}

/// `θ_{s,t}(ξ)`: solution at `s` of `θ̇ = F(v, θ)` started from `ξ` at `t`.
pub fn flow(spec: &ChainSpec, t: f64, s: f64, xi: &[f64], tol: f64) -> Result<Vec<f64>> {
    if s < t {
        return invalid("flow requires s >= t");
    }
    if xi.len() != spec.nd() {
        return invalid("starting point has wrong dimension");
    }
    let nd = spec.nd();
    rk4_halving(
        |v, y, dy| {
            spec.drift(v, y, dy);
            Ok(())
        },
        t,
        s,
        xi,
        tol,
        nd,
    )
}

fn resolvent_rhs(spec: &ChainSpec, v: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
    let nd = spec.nd();
    let theta = &y[..nd];
    spec.drift(v, theta, &mut dy[..nd]);
    let jac = subdiagonal_jacobian(spec, v, theta)?;
    let r = DMatrix::from_column_slice(nd, nd, &y[nd..nd + nd * nd]);
    let dr = &jac * r;
    dy[nd..nd + nd * nd].copy_from_slice(dr.as_slice());
    Ok(())
}

/// `R̃^{(τ,ξ)}(s, t)`: solves `∂_v R = DF(v, θ_{v,τ}(ξ)) R` with `R(t,t) = I`.
pub fn resolvent(spec: &ChainSpec, tau: f64, xi: &[f64], t: f64, s: f64, tol: f64) -> Result<DMatrix<f64>> {
    if s < t || t < tau {
        return invalid("resolvent requires tau <= t <= s");
    }
    let nd = spec.nd();
    let theta_t = flow(spec, tau, t, xi, tol)?;
    let mut y0 = theta_t;
    y0.extend_from_slice(DMatrix::<f64>::identity(nd, nd).as_slice());
    let y = rk4_halving(|v, y, dy| resolvent_rhs(spec, v, y, dy), t, s, &y0, tol, nd)?;
    Ok(DMatrix::from_column_slice(nd, nd, &y[nd..]))
}

/// Freezing point `(τ, ξ)` with its flow, resolvent `R(·) = R̃(·, τ)` and mean shift `c(·)`
/// stored at RK4 nodes on `[τ, end]`, with cubic Hermite interpolation between nodes.
///
/// The mean map from `τ` is `m_{s,τ}(x) = R(s) x + c(s)`.
#[derive(Clone, Debug)]
pub struct FreezingFrame {
    pub tau: f64,
    pub xi: Vec<f64>,
    pub n: usize,
    pub d: usize,
    times: Vec<f64>,
    state: Vec<Vec<f64>>,
    deriv: Vec<Vec<f64>>,
}

impl FreezingFrame {
    pub fn new(spec: &ChainSpec, tau: f64, xi: &[f64], end: f64, steps: usize) -> Result<Self> {
        if end < tau {
            return invalid("frame span must satisfy end >= tau");
        }
        if xi.len() != spec.nd() {
            return invalid("freezing point has wrong dimension");
        }
        let nd = spec.nd();
        let m = nd + nd * nd + nd;
        let steps = steps.max(1);
        let mut y = vec![0.0; m];
        y[..nd].copy_from_slice(xi);
        for k in 0..nd {
            y[nd + k * nd + k] = 1.0;
        }
        let mut rhs = |v: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
            let theta = &y[..nd];
            let mut f = vec![0.0; nd];
            spec.drift(v, theta, &mut f);
            let jac = subdiagonal_jacobian(spec, v, theta)?;
            dy[..nd].copy_from_slice(&f);
            let r = DMatrix::from_column_slice(nd, nd, &y[nd..nd + nd * nd]);
            dy[nd..nd + nd * nd].copy_from_slice((&jac * r).as_slice());
            let c = DVector::from_column_slice(&y[nd + nd * nd..]);
            let th = DVector::from_column_slice(theta);
            let dc = &jac * (c - th) + DVector::from_vec(f);
            dy[nd + nd * nd..].copy_from_slice(dc.as_slice());
            Ok(())
        };
        let h = (end - tau) / steps as f64;
        let mut times = Vec::with_capacity(steps + 1);
        let mut state = Vec::with_capacity(steps + 1);
        let mut deriv = Vec::with_capacity(steps + 1);
        let mut k = [vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]];
        let mut tmp = vec![0.0; m];
        for j in 0..=steps {
            let tj = if j == steps { end } else { tau + j as f64 * h };
            let mut dy = vec![0.0; m];
            rhs(tj, &y, &mut dy)?;
            times.push(tj);
            state.push(y.clone());
            deriv.push(dy);
            if j < steps && h > 0.0 {
                rk4_step(&mut rhs, tj, h, &mut y, &mut k, &mut tmp)?;
                let nrm = norm(&y[..nd]);
                if !(nrm <= BLOW_UP_GUARD) {
                    return Err(Error::BlowUp { t: tj + h, norm: nrm });
                }
            }
            if h == 0.0 {
                break;
            }
        }
        Ok(FreezingFrame { tau, xi: xi.to_vec(), n: spec.n, d: spec.d, times, state, deriv })
    }

    pub fn nd(&self) -> usize {
        self.n * self.d
    }

    pub fn span(&self) -> (f64, f64) {
        (self.tau, *self.times.last().unwrap())
    }

    fn interp(&self, s: f64) -> Result<Vec<f64>> {
        let (a, b) = self.span();
        let slack = 1e-12 * (1.0 + b.abs());
        if s < a - slack || s > b + slack {
            return invalid(format!("time {s} outside frame span [{a}, {b}]"));
        }
        if self.times.len() == 1 {
            return Ok(self.state[0].clone());
        }
        let s = s.clamp(a, b);
        let mut j = self.times.partition_point(|&v| v <= s).saturating_sub(1);
        j = j.min(self.times.len() - 2);
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let h = t1 - t0;
        let u = (s - t0) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let (y0, y1, d0, d1) = (&self.state[j], &self.state[j + 1], &self.deriv[j], &self.deriv[j + 1]);
        Ok((0..y0.len()).map(|k| h00 * y0[k] + h * h10 * d0[k] + h01 * y1[k] + h * h11 * d1[k]).collect())
    }

    /// `θ_{s,τ}(ξ)`.
    pub fn theta(&self, s: f64) -> Result<Vec<f64>> {
        let nd = self.nd();
        Ok(self.interp(s)?[..nd].to_vec())
    }

    /// `R̃(s, τ)`.
    pub fn r_at(&self, s: f64) -> Result<DMatrix<f64>> {
        let nd = self.nd();
        let y = self.interp(s)?;
        Ok(DMatrix::from_column_slice(nd, nd, &y[nd..nd + nd * nd]))
    }

    /// Shift `c(s)` of the mean map started at `τ`.
    pub fn shift(&self, s: f64) -> Result<DVector<f64>> {
        let nd = self.nd();
        let y = self.interp(s)?;
        Ok(DVector::from_column_slice(&y[nd + nd * nd..]))
    }

    /// `R̃(s, t) = R(s) R(t)^{-1}`.
    pub fn resolvent_between(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let rt = self.r_at(t)?;
        let inv = rt
            .solve_lower_triangular(&DMatrix::identity(self.nd(), self.nd()))
            .ok_or_else(|| Error::InvalidInput("singular resolvent".into()))?;
        Ok(self.r_at(s)? * inv)
    }

    /// Affine pieces `(R̃(s,t), c_{s,t})` of `m_{s,t}(x) = R̃(s,t) x + c_{s,t}`.
    pub fn mean_map(&self, t: f64, s: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let r = self.resolvent_between(t, s)?;
        let c = self.shift(s)? - &r * self.shift(t)?;
        Ok((r, c))
    }

    pub fn mean_between(&self, t: f64, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        let (r, c) = self.mean_map(t, s)?;
        Ok((r * DVector::from_column_slice(x) + c).as_slice().to_vec())
    }

    /// `m^{(τ,ξ)}_{s,τ}(x)`.
    pub fn mean(&self, x: &[f64], s: f64) -> Result<Vec<f64>> {
        if x.len() != self.nd() {
            return invalid("point has wrong dimension");
        }
        let r = self.r_at(s)?;
        let c = self.shift(s)?;
        Ok((r * DVector::from_column_slice(x) + c).as_slice().to_vec())
    }

    pub fn record(&self) -> FrameRecord {
        let nd = self.nd();
        FrameRecord {
            tau: self.tau,
            xi: self.xi.clone(),
            times: self.times.clone(),
            theta: self.state.iter().map(|y| y[..nd].to_vec()).collect(),
            resolvent: self
                .state
                .iter()
                .map(|y| DMatrix::from_column_slice(nd, nd, &y[nd..nd + nd * nd]).transpose().as_slice().to_vec())
                .collect(),
            shift: self.state.iter().map(|y| y[nd + nd * nd..].to_vec()).collect(),
        }
    }
}

/// Plain record of a frame: resolvents are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub tau: f64,
    pub xi: Vec<f64>,
    pub times: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
    pub resolvent: Vec<Vec<f64>>,
    pub shift: Vec<Vec<f64>>,
}

/// `Σ_i |(x−x')_i|^{1/(2i−1)}` with the Euclidean norm on each block.
pub fn homogeneous_distance(x: &[f64], xp: &[f64], n: usize, d: usize) -> Result<f64> {
    if x.len() != n * d || xp.len() != n * d {
        return invalid("dimension mismatch");
    }
    Ok((1..=n)
        .map(|i| {
            let blk: Vec<f64> = (0..d).map(|c| x[(i - 1) * d + c] - xp[(i - 1) * d + c]).collect();
            norm(&blk).powf(1.0 / (2.0 * i as f64 - 1.0))
        })
        .sum())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub level: usize,
    pub gap: f64,
    pub bound: f64,
    pub ratio: f64,
}

/// Per level: `|(θ_{s,t}(x) − θ_{s,t}(x'))_i|` against `(s−t)^{i−1/2} + d^{2i−1}(x,x')`.
pub fn flow_sensitivity_check(spec: &ChainSpec, x: &[f64], xp: &[f64], t: f64, s: f64, tol: f64) -> Result<Vec<SensitivityRow>> {
    let dist = homogeneous_distance(x, xp, spec.n, spec.d)?;
    if dist > 1.0 + 1e-12 {
        return invalid("points must satisfy d(x, x') <= 1");
    }
    if !(s >= t && s - t <= 1.0) {
        return invalid("times must satisfy 0 <= s - t <= 1");
    }
    let a = flow(spec, t, s, x, tol)?;
    let b = flow(spec, t, s, xp, tol)?;
    let d = spec.d;
    Ok((1..=spec.n)
        .map(|i| {
            let blk: Vec<f64> = (0..d).map(|c| a[(i - 1) * d + c] - b[(i - 1) * d + c]).collect();
            let gap = norm(&blk);
            let e = 2.0 * i as f64 - 1.0;
            let bound = (s - t).powf(i as f64 - 0.5) + dist.powf(e);
            SensitivityRow { level: i, gap, bound, ratio: if gap == 0.0 { 0.0 } else { gap / bound } }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanGapRow {
    pub level: usize,
    pub gap: f64,
    /// `|(x−x')_i|^{(2j−1)/(2i−1)}`.
    pub scale: f64,
}

/// Compares the mean map frozen at `(t, x)` with the true flow, both started from `x'`,
/// at `t₀ = t + c0 |(x−x')_i|^{2/(2i−1)}`; `x` and `x'` must differ in block `i` only.
pub fn mean_vs_flow_gap(spec: &ChainSpec, x: &[f64], xp: &[f64], t: f64, c0: f64, tol: f64) -> Result<Vec<MeanGapRow>> {
    if !(c0 > 0.0 && c0 < 1.0) {
        return invalid("c0 must lie in (0, 1)");
    }
    let (n, d) = (spec.n, spec.d);
    if x.len() != n * d || xp.len() != n * d {
        return invalid("dimension mismatch");
    }
    let blocks: Vec<usize> = (1..=n)
        .filter(|&i| (0..d).any(|c| x[(i - 1) * d + c] != xp[(i - 1) * d + c]))
        .collect();
    if blocks.len() > 1 {
        return invalid("points differ in more than one block");
    }
    if blocks.is_empty() {
        return Ok((1..=n).map(|j| MeanGapRow { level: j, gap: 0.0, scale: 0.0 }).collect());
    }
    let i = blocks[0];
    let di = norm(&(0..d).map(|c| x[(i - 1) * d + c] - xp[(i - 1) * d + c]).collect::<Vec<_>>());
    let ei = 2.0 * i as f64 - 1.0;
    let t0 = t + c0 * di.powf(2.0 / ei);
    let frame = FreezingFrame::new(spec, t, x, t0, 256)?;
    let m = frame.mean(xp, t0)?;
    let th = flow(spec, t, t0, xp, tol)?;
    Ok((1..=n)
        .map(|j| {
            let gap = norm(&(0..d).map(|c| m[(j - 1) * d + c] - th[(j - 1) * d + c]).collect::<Vec<_>>());
            MeanGapRow { level: j, gap, scale: di.powf((2.0 * j as f64 - 1.0) / ei) }
        })
        .collect())
}

/// Fits `ϑ` in `max_j gap_j / scale_j ≈ C c0^ϑ` over a ladder of `c0`.
pub fn fit_mean_gap_exponent(spec: &ChainSpec, x: &[f64], xp: &[f64], t: f64, c0s: &[f64], tol: f64) -> Result<f64> {
    let mut ys = Vec::new();
    for &c0 in c0s {
        let rows = mean_vs_flow_gap(spec, x, xp, t, c0, tol)?;
        let v = rows.iter().map(|r| if r.scale > 0.0 { r.gap / r.scale } else { 0.0 }).fold(0.0, f64::max);
        if v <= 0.0 {
            return Err(Error::Degenerate("mean map coincides with the flow".into()));
        }
        ys.push(v);
    }
    Ok(loglog_slope(c0s, &ys).0)
}
