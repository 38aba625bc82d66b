//! Euler–Maruyama simulation, shared-noise coupling, strong-uniqueness probes,
//! fluctuation scalings and the Zvonkin remainder.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::chain_model::{mollify_drift, ChainSpec, MollifierSchedule};
use crate::error::{invalid, Error, Result};
use crate::fit::{linear_fit, mean_and_se};
use crate::flow_resolvent::BLOW_UP_GUARD;
use crate::green_estimator::{green_cross_derivative, GreenJob, Source, TimeMesh};

/// Brownian increments for one path: same `(seed, substream)` gives the same numbers.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    pub seed: u64,
    pub substream: u64,
    pub steps: usize,
    pub d: usize,
    pub dt: f64,
    increments: Vec<f64>,
}

impl NoiseStream {
    pub fn new(seed: u64, substream: u64, steps: usize, d: usize, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(substream);
        let sd = dt.sqrt();
        let increments = (0..steps * d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sd
            })
            .collect();
        NoiseStream { seed, substream, steps, d, dt, increments }
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.d..(k + 1) * self.d]
    }

    /// Sums consecutive groups of `factor` increments.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseStream> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return invalid("coarsening factor must divide the step count");
        }
        let steps = self.steps / factor;
        let d = self.d;
        let mut inc = vec![0.0; steps * d];
        for k in 0..self.steps {
            for c in 0..d {
                inc[(k / factor) * d + c] += self.increments[k * d + c];
            }
        }
        Ok(NoiseStream { seed: self.seed, substream: self.substream, steps, d, dt: self.dt * factor as f64, increments: inc })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nd: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl Path {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.nd..(k + 1) * self.nd]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Explicit Euler–Maruyama; the noise enters block 1 through `σ`.
pub fn euler_maruyama(spec: &ChainSpec, x0: &[f64], horizon: f64, steps: usize, noise: &NoiseStream) -> Result<Path> {
    if steps < 1 {
        return invalid("at least one step required");
    }
    if x0.len() != spec.nd() {
        return invalid("initial point has wrong dimension");
    }
    let dt = horizon / steps as f64;
    if noise.steps != steps || noise.d != spec.d || (noise.dt - dt).abs() > 1e-12 * dt {
        return invalid("noise stream does not match the time grid");
    }
    let nd = spec.nd();
    let d = spec.d;
    let mut states = Vec::with_capacity((steps + 1) * nd);
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut f = vec![0.0; nd];
    let mut times = Vec::with_capacity(steps + 1);
    times.push(0.0);
    for k in 0..steps {
        let t = k as f64 * dt;
        spec.drift(t, &x, &mut f);
        let sig = spec.sigma(t, &x);
        let dw = noise.increment(k);
        for i in 0..nd {
            x[i] += f[i] * dt;
        }
        for r in 0..d {
            let mut v = 0.0;
            for c in 0..d {
                v += sig[(r, c)] * dw[c];
            }
            x[r] += v;
        }
        let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(nrm <= BLOW_UP_GUARD) {
            return Err(Error::BlowUp { t: t + dt, norm: nrm });
        }
        states.extend_from_slice(&x);
        times.push(if k + 1 == steps { horizon } else { (k + 1) as f64 * dt });
    }
    Ok(Path { nd, times, states })
}

/// Two paths driven by one increment stream.
pub fn coupled_paths(
    spec_a: &ChainSpec,
    spec_b: &ChainSpec,
    x0: &[f64],
    horizon: f64,
    steps: usize,
    noise_a: &NoiseStream,
    noise_b: &NoiseStream,
) -> Result<(Path, Path)> {
    if spec_a.n != spec_b.n || spec_a.d != spec_b.d {
        return invalid("coupled specs must share (n, d)");
    }
    if noise_a.seed != noise_b.seed || noise_a.substream != noise_b.substream || noise_a.steps != noise_b.steps {
        return invalid("coupled paths must share one noise stream");
    }
    Ok((euler_maruyama(spec_a, x0, horizon, steps, noise_a)?, euler_maruyama(spec_b, x0, horizon, steps, noise_b)?))
}

/// `sup_k |a_k − b_k|²` over the common grid.
pub fn sup_squared_gap(a: &Path, b: &Path) -> f64 {
    a.states
        .chunks(a.nd)
        .zip(b.states.chunks(b.nd))
        .map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub m: usize,
    pub steps: usize,
    pub nd: usize,
    pub times: Vec<f64>,
    pub data: Vec<f64>,
    pub seed: u64,
    pub fingerprint: String,
}

impl PathEnsemble {
    pub fn path(&self, p: usize) -> &[f64] {
        let len = (self.steps + 1) * self.nd;
        &self.data[p * len..(p + 1) * len]
    }

    /// Columnar CSV: path id, time, then one column per state coordinate.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["path".to_string(), "time".to_string()];
        header.extend((0..self.nd).map(|k| format!("x{k}")));
        wr.write_record(&header).map_err(csv_err)?;
        for p in 0..self.m {
            let path = self.path(p);
            for (k, t) in self.times.iter().enumerate() {
                let mut rec = vec![p.to_string(), format!("{t:.17e}")];
                rec.extend(path[k * self.nd..(k + 1) * self.nd].iter().map(|v| format!("{v:.17e}")));
                wr.write_record(&rec).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn spec_fingerprint(spec: &ChainSpec) -> String {
    let digest = Sha256::digest(spec.fingerprint().as_bytes());
    hex::encode(&digest[..8])
}

/// `M` paths with substream `p` for path `p`, collected in path order.
pub fn simulate_ensemble(spec: &ChainSpec, x0: &[f64], horizon: f64, steps: usize, m: usize, seed: u64) -> Result<PathEnsemble> {
    let dt = horizon / steps as f64;
    let paths = (0..m)
        .into_par_iter()
        .map(|p| {
            let noise = NoiseStream::new(seed, p as u64, steps, spec.d, dt);
            euler_maruyama(spec, x0, horizon, steps, &noise)
        })
        .collect::<Result<Vec<_>>>()?;
    let times = paths.first().map(|p| p.times.clone()).unwrap_or_default();
    let data = paths.into_iter().flat_map(|p| p.states).collect();
    Ok(PathEnsemble { m, steps, nd: spec.nd(), times, data, seed, fingerprint: spec_fingerprint(spec) })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeCurve {
    pub deltas: Vec<f64>,
    /// `E[sup_t |X^{δ_k} − X^{δ_{k+1}}|²]`, one entry per consecutive pair.
    pub means: Vec<f64>,
    /// Half-width of the 95% band from batch means.
    pub ci95: Vec<f64>,
    /// Paired batch estimate of `mean_{k+1} − mean_k` and its standard error.
    pub step_diff: Vec<f64>,
    pub step_se: Vec<f64>,
    pub non_increasing: bool,
    pub batches: usize,
    pub paths: usize,
}

impl ProbeCurve {
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.means.windows(2).map(|w| w[0] / w[1]).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub paths: usize,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub quad_nodes: usize,
    pub batches: usize,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { paths: 10_000, horizon: 1.0, steps: 200, seed: 7, quad_nodes: 16, batches: 20 }
    }
}

/// Shared-noise Cauchy diagnostic for the mollified family `δ_1 > … > δ_K`
/// (every level `i ≥ 2` mollified at the same scale).
pub fn strong_uniqueness_probe(spec: &ChainSpec, deltas: &[f64], x0: &[f64], opts: &ProbeOptions) -> Result<ProbeCurve> {
    if deltas.len() < 2 {
        return invalid("need at least two mollification levels");
    }
    if opts.paths < opts.batches || opts.batches < 2 {
        return invalid("need at least two batches and one path per batch");
    }
    let specs = deltas
        .iter()
        .map(|&dl| mollify_drift(spec, &MollifierSchedule::uniform(spec.n, dl)?, opts.quad_nodes))
        .collect::<Result<Vec<_>>>()?;
    let dt = opts.horizon / opts.steps as f64;
    let kk = deltas.len() - 1;
    let gaps: Vec<Vec<f64>> = (0..opts.paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let noise = NoiseStream::new(opts.seed, p as u64, opts.steps, spec.d, dt);
            let mut prev = euler_maruyama(&specs[0], x0, opts.horizon, opts.steps, &noise)?;
            let mut out = Vec::with_capacity(kk);
            for sp in &specs[1..] {
                let next = euler_maruyama(sp, x0, opts.horizon, opts.steps, &noise)?;
                out.push(sup_squared_gap(&prev, &next));
                prev = next;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::InvalidInput(format!("sampling failure: {e}")))?;
    let nb = opts.batches;
    let batch_means: Vec<Vec<f64>> = (0..nb)
        .map(|b| {
            let lo = b * opts.paths / nb;
            let hi = (b + 1) * opts.paths / nb;
            (0..kk).map(|k| gaps[lo..hi].iter().map(|g| g[k]).sum::<f64>() / (hi - lo) as f64).collect()
        })
        .collect();
    let tq = StudentsT::new(0.0, 1.0, (nb - 1) as f64).map_err(|e| Error::InvalidInput(e.to_string()))?.inverse_cdf(0.975);
    let mut means = Vec::new();
    let mut ci95 = Vec::new();
    for k in 0..kk {
        let col: Vec<f64> = batch_means.iter().map(|b| b[k]).collect();
        let (_, se) = mean_and_se(&col);
        means.push(gaps.iter().map(|g| g[k]).sum::<f64>() / opts.paths as f64);
        ci95.push(tq * se);
    }
    let mut step_diff = Vec::new();
    let mut step_se = Vec::new();
    for k in 0..kk.saturating_sub(1) {
        let diffs: Vec<f64> = batch_means.iter().map(|b| b[k + 1] - b[k]).collect();
        let (m, se) = mean_and_se(&diffs);
        step_diff.push(m);
        step_se.push(se);
    }
    let non_increasing = step_diff.iter().zip(&step_se).all(|(m, se)| *m <= 1.96 * se);
    Ok(ProbeCurve { deltas: deltas.to_vec(), means, ci95, step_diff, step_se, non_increasing, batches: nb, paths: opts.paths })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FluctuationFit {
    pub level: usize,
    pub exponent: f64,
    pub residual: f64,
    pub times: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Fits the log-log slope of the standard deviation of block `i` (first coordinate)
/// against time, for paths started at the origin.
pub fn fluctuation_scaling(spec: &ChainSpec, i: usize, times: &[f64], paths: usize, steps: usize, seed: u64) -> Result<FluctuationFit> {
    if i < 1 || i > spec.n {
        return invalid("level out of range");
    }
    if times.len() < 2 || times.iter().any(|t| !(*t > 0.0)) {
        return invalid("need at least two positive times");
    }
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let dt = horizon / steps as f64;
    let idx: Vec<usize> = times.iter().map(|t| ((t / dt).round() as usize).min(steps)).collect();
    let x0 = vec![0.0; spec.nd()];
    let col = (i - 1) * spec.d;
    let samples: Vec<Vec<f64>> = (0..paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let noise = NoiseStream::new(seed, p as u64, steps, spec.d, dt);
            let path = euler_maruyama(spec, &x0, horizon, steps, &noise)?;
            Ok(idx.iter().map(|&k| path.state(k)[col]).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stds = Vec::new();
    for k in 0..times.len() {
        let v: Vec<f64> = samples.iter().map(|s| s[k]).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        if !(var > 0.0) {
            return Err(Error::Degenerate(format!("zero variance at t = {}", times[k])));
        }
        stds.push(var.sqrt());
    }
    let tt: Vec<f64> = idx.iter().map(|&k| k as f64 * dt).collect();
    let lx: Vec<f64> = tt.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = stds.iter().map(|v| v.ln()).collect();
    let (exponent, _, residual) = linear_fit(&lx, &ly);
    Ok(FluctuationFit { level: i, exponent, residual, times: tt, stds })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZvonkinOptions {
    pub gh_order: usize,
    pub mesh: TimeMesh,
    /// Every `stride`-th path node enters the time quadrature.
    pub stride: usize,
}

impl Default for ZvonkinOptions {
    fn default() -> Self {
        ZvonkinOptions { gh_order: 12, mesh: TimeMesh::Geometric { levels: 24, ratio: 2.0 }, stride: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZvonkinRemainder {
    /// `R_T`, one entry per state coordinate.
    pub remainder: Vec<f64>,
    pub norm: f64,
}

/// `R_T = ∫(F − F^δ)(s, X_s) ds − ∫(L − L^δ) U^δ(s, X_s) ds` along a path, with `U^δ` the
/// proxy Green solution for the sources `F_i^δ` on `[0, T]` and `(L − L^δ)U = ⟨F − F^δ, DU⟩`.
pub fn zvonkin_remainder(spec: &ChainSpec, mollified: &ChainSpec, path: &Path, horizon: f64, opts: &ZvonkinOptions) -> Result<ZvonkinRemainder> {
    if spec.n != mollified.n || spec.d != mollified.d || path.nd != spec.nd() {
        return invalid("specs and path must share dimensions");
    }
    let last = *path.times.last().ok_or_else(|| Error::InvalidInput("empty path".into()))?;
    if last > horizon * (1.0 + 1e-12) {
        return invalid(format!("path reaches t = {last} beyond the u_δ horizon {horizon}"));
    }
    let (n, d, nd) = (spec.n, spec.d, spec.nd());
    let stride = opts.stride.max(1);
    let nodes: Vec<usize> = (0..path.len()).step_by(stride).chain(std::iter::once(path.len() - 1)).collect::<BTreeSet<_>>().into_iter().collect();
    let sources: Vec<Source> = (0..nd)
        .map(|k| -> Source {
            let m = mollified.clone();
            let (blk, c) = (k / d + 1, k % d);
            Arc::new(move |s: f64, y: &[f64]| {
                let mut out = vec![0.0; d];
                m.drift_component(blk, s, y, &mut out);
                out[c]
            })
        })
        .collect();
    let integrands: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&k| -> Result<Vec<f64>> {
            let s = path.times[k];
            let x = path.state(k);
            let mut f = vec![0.0; nd];
            let mut fd = vec![0.0; nd];
            spec.drift(s, x, &mut f);
            mollified.drift(s, x, &mut fd);
            let diff: Vec<f64> = f.iter().zip(&fd).map(|(a, b)| a - b).collect();
            let mut out = diff.clone();
            if s < horizon * (1.0 - 1e-12) && diff.iter().any(|v| *v != 0.0) {
                for (k2, src) in sources.iter().enumerate() {
                    let mut corr = 0.0;
                    for l in 1..=n {
                        let mut job = GreenJob::new(mollified, src.clone(), s, horizon, x).with_derivative(l, 0);
                        job.gh_order = opts.gh_order;
                        job.mesh = opts.mesh;
                        let g = green_cross_derivative(&job)?;
                        for c in 0..d {
                            corr += diff[(l - 1) * d + c] * g[(c, 0)];
                        }
                    }
                    out[k2] -= corr;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rem = vec![0.0; nd];
    for w in 0..nodes.len() - 1 {
        let h = path.times[nodes[w + 1]] - path.times[nodes[w]];
        for k in 0..nd {
            rem[k] += 0.5 * h * (integrands[w][k] + integrands[w + 1][k]);
        }
    }
    let norm = rem.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ZvonkinRemainder { remainder: rem, norm })
}
