//! Frozen Gaussian proxy: covariance, density, derivatives and semigroup.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::chain_model::ChainSpec;
use crate::error::{invalid, Error, Result};
use crate::flow_resolvent::FreezingFrame;
use crate::quadrature::{gauss_legendre_on, GaussianCubature};

/// Block-diagonal `T_u = diag(u I_d, u² I_d, …, uⁿ I_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingMatrix {
    pub u: f64,
    pub n: usize,
    pub d: usize,
}

pub fn scaling_matrix(u: f64, n: usize, d: usize) -> Result<ScalingMatrix> {
    if !(u > 0.0) {
        return invalid("scale must be positive");
    }
    Ok(ScalingMatrix { u, n, d })
}

impl ScalingMatrix {
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n * self.d).map(|k| self.u.powi((k / self.d + 1) as i32)).collect()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.diagonal()))
    }

    pub fn compose(&self, other: &ScalingMatrix) -> ScalingMatrix {
        ScalingMatrix { u: self.u * other.u, n: self.n, d: self.d }
    }
}

/// `K̃ = ∫_t^s R̃(s,u) B a(u, θ_u) B* R̃(s,u)* du` by Gauss–Legendre along the frame.
pub fn covariance(spec: &ChainSpec, frame: &FreezingFrame, t: f64, s: f64, quad: usize) -> Result<DMatrix<f64>> {
    if !(s > t) {
        return invalid("covariance requires s > t");
    }
    let nd = spec.nd();
    let d = spec.d;
    let rs = frame.r_at(s)?;
    let rule = gauss_legendre_on(quad, t, s);
    let mut k = DMatrix::zeros(nd, nd);
    for (u, w) in rule.nodes.iter().zip(&rule.weights) {
        let ru = frame.r_at(*u)?;
        let inv = ru
            .solve_lower_triangular(&DMatrix::identity(nd, nd))
            .ok_or_else(|| Error::InvalidInput("singular resolvent".into()))?;
        let rsu = &rs * inv;
        let a = spec.diffusion(*u, &frame.theta(*u)?);
        // only the first d columns of R(s,u) meet B
        let cols = rsu.columns(0, d);
        k += (cols * &a * cols.transpose()) * *w;
    }
    Ok(0.5 * (&k + k.transpose()))
}

/// Eigenvalue interval of `dt · T_{dt}^{-1} K T_{dt}^{-1}`.
pub fn gsp_condition(k: &DMatrix<f64>, dt: f64, n: usize, d: usize) -> Result<(f64, f64)> {
    let nd = n * d;
    if k.nrows() != nd || k.ncols() != nd {
        return invalid("matrix has wrong shape");
    }
    let scale = k.abs().max().max(f64::MIN_POSITIVE);
    if (k - k.transpose()).abs().max() > 1e-10 * scale {
        return invalid("matrix is not symmetric");
    }
    let tinv: Vec<f64> = scaling_matrix(dt, n, d)?.diagonal().iter().map(|v| 1.0 / v).collect();
    let m = DMatrix::from_fn(nd, nd, |i, j| dt * tinv[i] * k[(i, j)] * tinv[j]);
    let eig = SymmetricEigen::new(0.5 * (&m + m.transpose())).eigenvalues;
    Ok((eig.min(), eig.max()))
}

pub const JITTER_EPS: f64 = 1e-12;
pub const MAX_JITTER_ESCALATIONS: usize = 3;

/// Gaussian law of the frozen dynamics between `t` and `s`.
#[derive(Debug, Clone)]
pub struct GaussianProxy {
    pub n: usize,
    pub d: usize,
    pub t: f64,
    pub s: f64,
    /// `R̃(s, t)`; the mean is `m(x) = R̃ x + c`.
    pub r: DMatrix<f64>,
    pub c: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub log_norm: f64,
    pub jitter: f64,
    kinv: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxySummary {
    pub t: f64,
    pub s: f64,
    pub covariance: Vec<Vec<f64>>,
    pub gsp_interval: (f64, f64),
    pub jitter: f64,
}

impl GaussianProxy {
    pub fn new(spec: &ChainSpec, frame: &FreezingFrame, t: f64, s: f64, quad: usize) -> Result<Self> {
        let cov = covariance(spec, frame, t, s, quad)?;
        let (r, c) = frame.mean_map(t, s)?;
        Self::from_parts(spec.n, spec.d, t, s, r, c, cov)
    }

    /// Proxy from explicit mean map and covariance (used for closed forms and control cases).
    pub fn from_parts(n: usize, d: usize, t: f64, s: f64, r: DMatrix<f64>, c: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let nd = n * d;
        if r.shape() != (nd, nd) || cov.shape() != (nd, nd) || c.len() != nd {
            return invalid("proxy parts have inconsistent shapes");
        }
        let mut jitter = 0.0;
        let base = JITTER_EPS * cov.trace().abs() / nd as f64;
        let mut attempt = cov.clone();
        let mut factor = None;
        for esc in 0..=MAX_JITTER_ESCALATIONS {
            if let Some(ch) = attempt.clone().cholesky() {
                factor = Some(ch.l());
                break;
            }
            if esc == MAX_JITTER_ESCALATIONS {
                break;
            }
            jitter = if jitter == 0.0 { base.max(f64::MIN_POSITIVE) } else { jitter * 10.0 };
            attempt = &cov + DMatrix::identity(nd, nd) * jitter;
        }
        let factor = factor.ok_or(Error::NotPositiveDefinite)?;
        let log_norm = -0.5 * nd as f64 * (2.0 * std::f64::consts::PI).ln() - factor.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let linv = factor
            .solve_lower_triangular(&DMatrix::identity(nd, nd))
            .ok_or(Error::NotPositiveDefinite)?;
        let kinv = linv.transpose() * &linv;
        Ok(GaussianProxy { n, d, t, s, r, c, cov: attempt, factor, log_norm, jitter, kinv })
    }

    pub fn nd(&self) -> usize {
        self.n * self.d
    }

    pub fn mean(&self, x: &[f64]) -> DVector<f64> {
        &self.r * DVector::from_column_slice(x) + &self.c
    }

    /// Same mean map, covariance multiplied by `factor`.
    pub fn inflated(&self, factor: f64) -> Result<Self> {
        Self::from_parts(self.n, self.d, self.t, self.s, self.r.clone(), self.c.clone(), &self.cov * factor)
    }

    pub fn summary(&self) -> Result<ProxySummary> {
        let nd = self.nd();
        Ok(ProxySummary {
            t: self.t,
            s: self.s,
            covariance: (0..nd).map(|i| (0..nd).map(|j| self.cov[(i, j)]).collect()).collect(),
            gsp_interval: gsp_condition(&self.cov, self.s - self.t, self.n, self.d)?,
            jitter: self.jitter,
        })
    }

    fn whitened(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        let z = DVector::from_column_slice(y) - self.mean(x);
        self.factor.solve_lower_triangular(&z).expect("factor is nonsingular")
    }

    /// `y = m(x) + L z`.
    pub fn push(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        (self.mean(x) + &self.factor * DVector::from_column_slice(z)).as_slice().to_vec()
    }

    pub fn push_from_mean(&self, m: &DVector<f64>, z: &[f64], out: &mut [f64]) {
        let nd = self.nd();
        for i in 0..nd {
            let mut v = m[i];
            for j in 0..=i {
                v += self.factor[(i, j)] * z[j];
            }
            out[i] = v;
        }
    }

    pub fn log_density(&self, x: &[f64], y: &[f64]) -> f64 {
        let w = self.whitened(x, y);
        self.log_norm - 0.5 * w.norm_squared()
    }

    pub fn density(&self, x: &[f64], y: &[f64]) -> f64 {
        self.log_density(x, y).exp()
    }

    /// `g = R̃* K̃^{-1} (m(x) − y)`, so that `D_x p = −g p`.
    pub fn score(&self, x: &[f64], y: &[f64]) -> DVector<f64> {
        let diff = self.mean(x) - DVector::from_column_slice(y);
        self.r.transpose() * (&self.kinv * diff)
    }

    /// `D_{x_l} p` (a `d×1` matrix) for `r = 0`; `D_{x_l} D_{x_1} p` (`d×d`, rows in block `l`) for `r = 1`.
    pub fn density_gradient(&self, x: &[f64], y: &[f64], l: usize, r: usize) -> Result<DMatrix<f64>> {
        if l < 1 || l > self.n || r > 1 {
            return invalid("need l in [1, n] and r in {0, 1}");
        }
        let p = self.density(x, y);
        let g = self.score(x, y);
        Ok(self.gradient_from(&g, p, l, r))
    }

    pub(crate) fn gradient_from(&self, g: &DVector<f64>, p: f64, l: usize, r: usize) -> DMatrix<f64> {
        let d = self.d;
        let lo = (l - 1) * d;
        if r == 0 {
            DMatrix::from_fn(d, 1, |a, _| -g[lo + a] * p)
        } else {
            let h = self.hessian_factor();
            DMatrix::from_fn(d, d, |a, b| (-h[(lo + a, b)] + g[lo + a] * g[b]) * p)
        }
    }

    /// `R̃* K̃^{-1} R̃`, the constant part of the second derivative.
    pub fn hessian_factor(&self) -> DMatrix<f64> {
        self.r.transpose() * &self.kinv * &self.r
    }

    /// `P̃ g(x) = E[g(m(x) + L Z)]`.
    pub fn semigroup_apply(&self, cub: &GaussianCubature, x: &[f64], mut g: impl FnMut(&[f64]) -> f64) -> f64 {
        let m = self.mean(x);
        let mut y = vec![0.0; self.nd()];
        cub.expect(|z| {
            self.push_from_mean(&m, z, &mut y);
            g(&y)
        })
    }

    /// As `semigroup_apply`, but compares two cubature orders and rejects unstable integrals.
    pub fn semigroup_apply_checked(&self, order: usize, x: &[f64], g: impl Fn(&[f64]) -> f64, tol: f64) -> Result<f64> {
        let a = self.semigroup_apply(&GaussianCubature::new(self.nd(), order), x, &g);
        let b = self.semigroup_apply(&GaussianCubature::new(self.nd(), order + 8), x, &g);
        if (a - b).abs() > tol * (1.0 + b.abs()) {
            return Err(Error::Quadrature(format!("semigroup integral unstable: {a} vs {b}")));
        }
        Ok(b)
    }

    /// Sup over probes of `y_{1:l−1}` of the change, under `x → x + h e_l`, of
    /// `∫ p(x, y_{1:l−1}, y_{l:n}) dy_{l:n}`. The inner integral uses Gauss–Hermite
    /// under the marginal law of `y_{l:n}` as proposal.
    pub fn centering_defect(&self, l: usize, x: &[f64], h: f64, order: usize) -> Result<f64> {
        if l < 1 || l > self.n {
            return invalid("block index out of range");
        }
        if l == 1 {
            let a = self.mass_on_tail(x, &[], order);
            let mut xp = x.to_vec();
            for c in 0..self.d {
                xp[c] += h;
            }
            let b = self.mass_on_tail(&xp, &[], order);
            return Ok((a - b).abs());
        }
        let d = self.d;
        let na = (l - 1) * d;
        let m = self.mean(x);
        let mut xp = x.to_vec();
        for c in 0..d {
            xp[na + c] += h;
        }
        let probes = [-1.5, -0.5, 0.0, 0.7, 1.6];
        let mut worst = 0.0f64;
        for (pi, &a) in probes.iter().enumerate() {
            let ya: Vec<f64> = (0..na)
                .map(|k| m[k] + self.cov[(k, k)].sqrt() * (a + 0.3 * ((k + pi) % 3) as f64))
                .collect();
            let v0 = self.mass_on_tail(x, &ya, order);
            let v1 = self.mass_on_tail(&xp, &ya, order);
            worst = worst.max((v0 - v1).abs());
        }
        Ok(worst)
    }

    fn mass_on_tail(&self, x: &[f64], ya: &[f64], order: usize) -> f64 {
        let nd = self.nd();
        let na = ya.len();
        let nb = nd - na;
        let m = self.mean(x);
        let kbb = self.cov.view((na, na), (nb, nb)).into_owned();
        let lb = kbb.clone().cholesky().expect("marginal covariance is positive definite").l();
        let log_q_norm = -0.5 * nb as f64 * (2.0 * std::f64::consts::PI).ln() - lb.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let cub = GaussianCubature::new(nb, order);
        let mut y = vec![0.0; nd];
        y[..na].copy_from_slice(ya);
        cub.expect(|z| {
            for i in 0..nb {
                let mut v = m[na + i];
                for j in 0..=i {
                    v += lb[(i, j)] * z[j];
                }
                y[na + i] = v;
            }
            let log_q = log_q_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
            (self.log_density(x, &y) - log_q).exp()
        })
    }

    /// `|Σ_a M_a ∫ ∂_{x_{k,a}} p (y − m)_{k,a} dy − ⟨M, 1_d⟩|`.
    pub fn moment_identity_defect(&self, k: usize, mvec: &[f64], x: &[f64], order: usize) -> Result<f64> {
        if k < 1 || k > self.n || mvec.len() != self.d {
            return invalid("need k in [1, n] and M in R^d");
        }
        let d = self.d;
        let lo = (k - 1) * d;
        let m = self.mean(x);
        let cub = GaussianCubature::new(self.nd(), order);
        let mut y = vec![0.0; self.nd()];
        let mut acc = 0.0;
        cub.for_each(|z, w| {
            self.push_from_mean(&m, z, &mut y);
            let diff = &m - DVector::from_column_slice(&y);
            let g = self.r.transpose() * (&self.kinv * &diff);
            // the density is the quadrature weight, so D_x p / p = −g
            let mut v = 0.0;
            for a in 0..d {
                v += mvec[a] * (-g[lo + a]) * (y[lo + a] - m[lo + a]);
            }
            acc += w * v;
        });
        Ok((acc - mvec.iter().sum::<f64>()).abs())
    }
}

/// Frobenius norm, used for the derivative tensors.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Closed-form proxy for the linear chain with `σ = I` (`n = 2`, `d = 1`).
pub fn kolmogorov_proxy(t: f64, s: f64) -> Result<GaussianProxy> {
    let h = s - t;
    let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, h, 1.0]);
    let k = DMatrix::from_row_slice(2, 2, &[h, h * h / 2.0, h * h / 2.0, h * h * h / 3.0]);
    GaussianProxy::from_parts(2, 1, t, s, r, DVector::zeros(2), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_composes() {
        let a = scaling_matrix(2.0, 2, 1).unwrap();
        assert_eq!(a.diagonal(), vec![2.0, 4.0]);
        let b = scaling_matrix(3.0, 2, 1).unwrap();
        assert_eq!(a.compose(&b).matrix(), scaling_matrix(6.0, 2, 1).unwrap().matrix());
        assert_eq!(a.matrix() * b.matrix(), scaling_matrix(6.0, 2, 1).unwrap().matrix());
    }

    #[test]
    fn kolmogorov_density_at_origin() {
        let p = kolmogorov_proxy(0.0, 1.0).unwrap();
        let v = p.density(&[0.0, 0.0], &[0.0, 0.0]);
        assert!((v - 12f64.sqrt() / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }
}
