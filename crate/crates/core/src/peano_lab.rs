//! Peano-type ODEs `Ẏ = sgn(Z)|Z|^α` perturbed by self-similar noise, and the
//! scan for the α at which the noise takes over.

use num_rational::Ratio;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::chain_model::sgn;
use crate::error::{invalid, Error, Result};
use crate::fit::median;
use crate::flow_resolvent::BLOW_UP_GUARD;

/// `((1−α)t)^{1/(1−α)}`, the maximal solution of `ẏ = |y|^α` leaving 0 at time 0.
pub fn peano_extremal(alpha: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((1.0 - alpha) * t).powf(1.0 / (1.0 - alpha))
}

/// Growth exponent `p = (1+αl)/(1−α)` of the extremal when the drift reads the
/// `l`-fold integral of the solution.
pub fn extremal_exponent(alpha: f64, l: usize) -> f64 {
    (1.0 + alpha * l as f64) / (1.0 - alpha)
}

/// Maximal solution `c t^p` of `Ẏ = |Z|^α`, `Z` the `l`-fold integral of `Y`.
pub fn peano_extremal_iterated(alpha: f64, l: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let p = extremal_exponent(alpha, l);
    let pi: f64 = (1..=l).map(|k| p + k as f64).product();
    let c = (p * pi.powf(alpha)).powf(-1.0 / (1.0 - alpha));
    c * t.powf(p)
}

/// `(2i−3)/(2j−1)`.
pub fn weak_threshold(i: usize, j: usize) -> Result<Ratio<i64>> {
    if i < 2 || j < i {
        return invalid("weak threshold needs 2 ≤ i ≤ j");
    }
    Ok(Ratio::new(2 * i as i64 - 3, 2 * j as i64 - 1))
}

/// `(2j−2)/(2j−1)`.
pub fn strong_threshold(j: usize) -> Result<Ratio<i64>> {
    if j < 1 {
        return invalid("strong threshold needs j ≥ 1");
    }
    Ok(Ratio::new(2 * j as i64 - 2, 2 * j as i64 - 1))
}

/// `(γ−1)/(l+γ)`: above it the noise dominates the drift in small time.
pub fn noise_threshold(gamma: f64, l: usize) -> f64 {
    (gamma - 1.0) / (l as f64 + gamma)
}

fn brownian(times: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let mut w = Vec::with_capacity(times.len());
    w.push(0.0);
    for k in 1..times.len() {
        let z: f64 = rng.sample(StandardNormal);
        w.push(w[k - 1] + z * (times[k] - times[k - 1]).sqrt());
    }
    w
}

fn cumulative_trapezoid(times: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    out.push(0.0);
    for k in 1..f.len() {
        out.push(out[k - 1] + 0.5 * (times[k] - times[k - 1]) * (f[k] + f[k - 1]));
    }
    out
}

/// Brownian motion on `times` (starting at `times[0]` with value 0), integrated
/// `level − 1` times; self-similar with index `level − 1/2`.
pub fn iterated_bm_noise(level: usize, times: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    if level < 1 {
        return invalid("level must be at least 1");
    }
    if times.len() < 2 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("times must be strictly increasing");
    }
    let mut w = brownian(times, rng);
    for _ in 1..level {
        w = cumulative_trapezoid(times, &w);
    }
    Ok(w)
}

/// Riemann–Liouville process `Γ(γ+1/2)^{-1} ∫_0^t (t−s)^{γ−1/2} dB_s` on a uniform grid
/// of `steps` cells over `[0, horizon]`. Each cell's weight carries the exact variance
/// of its kernel slice.
pub fn riemann_liouville_noise(gamma: f64, horizon: f64, steps: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return invalid("γ must be positive");
    }
    if steps < 1 || !(horizon > 0.0) {
        return invalid("need a positive horizon and at least one step");
    }
    let dt = horizon / steps as f64;
    let xi: Vec<f64> = (0..steps).map(|_| rng.sample(StandardNormal)).collect();
    let g = gamma_fn(gamma + 0.5);
    // weights depend on k − m only
    let weights: Vec<f64> = (1..=steps)
        .map(|lag| {
            let a = (lag as f64 * dt).powf(2.0 * gamma);
            let b = ((lag - 1) as f64 * dt).powf(2.0 * gamma);
            ((a - b) / (2.0 * gamma * dt)).sqrt() / g
        })
        .collect();
    let mut out = vec![0.0; steps + 1];
    for k in 1..=steps {
        let mut s = 0.0;
        for m in 0..k {
            s += weights[k - m - 1] * xi[m];
        }
        out[k] = s * dt.sqrt();
    }
    Ok(out)
}

/// Noise path of index `γ`: iterated Brownian motion for half-integer `γ`, the
/// Riemann–Liouville process otherwise.
pub fn self_similar_noise(gamma: f64, horizon: f64, steps: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let level = gamma + 0.5;
    if (level - level.round()).abs() < 1e-12 && level >= 1.0 {
        let times: Vec<f64> = (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect();
        iterated_bm_noise(level.round() as usize, &times, rng)
    } else {
        riemann_liouville_noise(gamma, horizon, steps, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeanoConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub l: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub start: f64,
}

impl PeanoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return invalid("α must lie in [0, 1)");
        }
        if !(self.gamma > 0.0) {
            return invalid("γ must be positive");
        }
        if !(self.epsilon >= 0.0) || !(self.horizon > 0.0) || self.steps < 1 || self.paths < 1 {
            return invalid("need ε ≥ 0, a positive horizon, steps and paths");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeanoEnsemble {
    pub times: Vec<f64>,
    /// Row-major `paths × (steps+1)`.
    pub y: Vec<f64>,
    /// Terminal accumulated drift `Y_T − Y_0 − εW_T`.
    pub drift: Vec<f64>,
    /// Terminal noise `εW_T`.
    pub noise: Vec<f64>,
}

impl PeanoEnsemble {
    pub fn path(&self, p: usize) -> &[f64] {
        let len = self.times.len();
        &self.y[p * len..(p + 1) * len]
    }

    pub fn terminal(&self) -> Vec<f64> {
        let len = self.times.len();
        (0..self.drift.len()).map(|p| self.y[(p + 1) * len - 1]).collect()
    }
}

/// Euler scheme for `Y_t = Y_0 + ∫ sgn(Z)|Z|^α ds + εW_t`, `Z` the `l`-fold integral of `Y`.
fn integrate(alpha: f64, l: usize, start: f64, dt: f64, noise: &[f64], eps: f64, keep: Option<&mut Vec<f64>>) -> Result<(f64, f64)> {
    let steps = noise.len() - 1;
    let mut y = start;
    let mut ints = vec![0.0; l];
    let mut drift = 0.0;
    let mut keep = keep;
    if let Some(k) = keep.as_deref_mut() {
        k.push(y);
    }
    for k in 0..steps {
        let z = if l == 0 { y } else { ints[l - 1] };
        let inc = sgn(z) * z.abs().powf(alpha) * dt;
        // integrals use the left value of the level below
        for j in (0..l).rev() {
            let below = if j == 0 { y } else { ints[j - 1] };
            ints[j] += below * dt;
        }
        drift += inc;
        y += inc + eps * (noise[k + 1] - noise[k]);
        if !(y.abs() <= BLOW_UP_GUARD) {
            return Err(Error::BlowUp { t: (k + 1) as f64 * dt, norm: y.abs() });
        }
        if let Some(kp) = keep.as_deref_mut() {
            kp.push(y);
        }
    }
    Ok((drift, eps * noise[steps]))
}

fn noise_bank(gamma: f64, horizon: f64, steps: usize, paths: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            self_similar_noise(gamma, horizon, steps, &mut rng)
        })
        .collect()
}

pub fn perturbed_peano(cfg: &PeanoConfig) -> Result<PeanoEnsemble> {
    cfg.validate()?;
    let dt = cfg.horizon / cfg.steps as f64;
    let times: Vec<f64> = (0..=cfg.steps).map(|k| if k == cfg.steps { cfg.horizon } else { k as f64 * dt }).collect();
    let bank = noise_bank(cfg.gamma, cfg.horizon, cfg.steps, cfg.paths, cfg.seed)?;
    let runs = bank
        .par_iter()
        .map(|w| {
            let mut keep = Vec::with_capacity(cfg.steps + 1);
            let (d, n) = integrate(cfg.alpha, cfg.l, cfg.start, dt, w, cfg.epsilon, Some(&mut keep))?;
            Ok((keep, d, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = Vec::with_capacity(cfg.paths * (cfg.steps + 1));
    let mut drift = Vec::with_capacity(cfg.paths);
    let mut noise = Vec::with_capacity(cfg.paths);
    for (k, d, n) in runs {
        y.extend(k);
        drift.push(d);
        noise.push(n);
    }
    Ok(PeanoEnsemble { times, y, drift, noise })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Crossing {
    /// The statistic falls through 1/2 at this α.
    At(f64),
    /// Below 1/2 on the whole grid: the noise dominates everywhere.
    AlwaysBelow,
    /// Above 1/2 on the whole grid.
    AlwaysAbove,
}

impl Crossing {
    pub fn value(&self) -> Option<f64> {
        match self {
            Crossing::At(a) => Some(*a),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRow {
    pub epsilon: f64,
    pub alpha: f64,
    /// Median drift share `|D_T| / (|D_T| + |εW_T|)`.
    pub share: f64,
    pub share_lo: f64,
    pub share_hi: f64,
    /// Median `|Y_T|` over the extremal at `T`.
    pub excursion_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSettings {
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings { horizon: 1e-6, steps: 200, seed: 11 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanReport {
    pub gamma: f64,
    pub l: usize,
    pub threshold: f64,
    pub paths: usize,
    pub settings: ScanSettings,
    pub rows: Vec<ScanRow>,
    /// Crossing for each ε of the ladder, in ladder order.
    pub crossings: Vec<(f64, Crossing)>,
    /// Crossing at the smallest ε.
    pub crossing: Crossing,
}

pub const MIN_SCAN_PATHS: usize = 20;

/// First downward passage of `s` through 1/2, linearly interpolated.
pub fn locate_crossing(alphas: &[f64], s: &[f64]) -> Crossing {
    if s.iter().all(|v| *v < 0.5) {
        return Crossing::AlwaysBelow;
    }
    for k in 0..s.len().saturating_sub(1) {
        if s[k] >= 0.5 && s[k + 1] < 0.5 {
            let w = (s[k] - 0.5) / (s[k] - s[k + 1]);
            return Crossing::At(alphas[k] + w * (alphas[k + 1] - alphas[k]));
        }
    }
    if s.first().is_some_and(|v| *v < 0.5) {
        Crossing::AlwaysBelow
    } else {
        Crossing::AlwaysAbove
    }
}

/// Median drift share over paths for each `(ε, α)`, sharing one noise bank across
/// the whole grid.
pub fn threshold_scan(alphas: &[f64], gamma: f64, l: usize, epsilons: &[f64], paths: usize, settings: &ScanSettings) -> Result<ScanReport> {
    if alphas.is_empty() || epsilons.is_empty() {
        return invalid("α grid and ε ladder must be nonempty");
    }
    if paths < MIN_SCAN_PATHS {
        return invalid(format!("need at least {MIN_SCAN_PATHS} paths, got {paths}"));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || alphas.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("α grid must be increasing inside (0, 1)");
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return invalid("ε must be positive");
    }
    let dt = settings.horizon / settings.steps as f64;
    let bank = noise_bank(gamma, settings.horizon, settings.steps, paths, settings.seed)?;
    let mut rows = Vec::new();
    let mut crossings = Vec::new();
    for &eps in epsilons {
        let mut shares = Vec::with_capacity(alphas.len());
        for &alpha in alphas {
            let ext = peano_extremal_iterated(alpha, l, settings.horizon);
            let stats = bank
                .par_iter()
                .map(|w| {
                    let (d, n) = integrate(alpha, l, 0.0, dt, w, eps, None)?;
                    let tot = d.abs() + n.abs();
                    let share = if tot > 0.0 { d.abs() / tot } else { 0.0 };
                    Ok((share, (d + n).abs() / ext))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut sh: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let mut ex: Vec<f64> = stats.iter().map(|s| s.1).collect();
            let med = median(&mut sh);
            // order-statistic band for the median
            let half = 0.98 * (paths as f64).sqrt();
            let lo_i = ((paths as f64 / 2.0 - half).floor().max(0.0)) as usize;
            let hi_i = ((paths as f64 / 2.0 + half).ceil() as usize).min(paths - 1);
            rows.push(ScanRow { epsilon: eps, alpha, share: med, share_lo: sh[lo_i], share_hi: sh[hi_i], excursion_ratio: median(&mut ex) });
            shares.push(med);
        }
        crossings.push((eps, locate_crossing(alphas, &shares)));
    }
    let smallest = epsilons.iter().enumerate().fold(0, |b, (i, e)| if *e < epsilons[b] { i } else { b });
    let crossing = crossings[smallest].1;
    Ok(ScanReport { gamma, l, threshold: noise_threshold(gamma, l), paths, settings: settings.clone(), rows, crossings, crossing })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremal_values() {
        assert_eq!(peano_extremal(0.3, 0.0), 0.0);
        assert!((peano_extremal(0.5, 1.0) - 0.25).abs() < 1e-15);
        assert!((peano_extremal(0.0, 0.7) - 0.7).abs() < 1e-15);
        assert!((peano_extremal_iterated(0.5, 0, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn thresholds() {
        assert_eq!(weak_threshold(2, 2).unwrap(), Ratio::new(1, 3));
        assert_eq!(weak_threshold(2, 3).unwrap(), Ratio::new(1, 5));
        assert_eq!(strong_threshold(2).unwrap(), Ratio::new(2, 3));
        assert!(weak_threshold(3, 2).is_err());
        assert!((noise_threshold(1.5, 1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn crossing_location() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(locate_crossing(&a, &[0.9, 0.6, 0.4]), Crossing::At(0.25));
        assert_eq!(locate_crossing(&a, &[0.4, 0.3, 0.1]), Crossing::AlwaysBelow);
        assert_eq!(locate_crossing(&a, &[0.9, 0.8, 0.7]), Crossing::AlwaysAbove);
    }
}
