//! Weighted-sample EM for the Gaussian-ridge mixture and order selection.
//!
//! The spectrogram `S(t, f)` is the squared STFT magnitude. Every cell above
//! 1% of the peak of `S` is a sample whose weight is proportional to `S`,
//! normalised so the weights sum to the number of samples. The trajectory M-step is a weighted least-squares fit on
//! per-frame frequency centroids, and `omega_r` is refined by golden-section
//! search on the expected complete-data log-likelihood; a new `omega_r` is only
//! accepted when it improves that objective, which keeps the likelihood
//! non-decreasing.

use std::f64::consts::PI;

use nalgebra::{Matrix6, Vector6};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mixture::{
    log_gaussian_ridge, mbic, MixtureParams, TrajectoryCoeffs, DEFAULT_ALPHA,
    DEFAULT_SIGMA, MAX_COMPONENTS,
};
use super::stft::Spectrogram;
use crate::error::{Error, Result};

const GOLDEN: f64 = 0.618_033_988_749_894_8;
/// First-to-second harmonic energy ratio below which `omega_r` is doubled.
const SUBHARMONIC_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Search interval for `omega_r`, rad/s.
    pub omega_min: f64,
    pub omega_max: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Cells below this fraction of the spectrogram peak are not samples.
    pub sample_floor: f64,
    /// Respiratory harmonics in each Doppler trajectory, 1 or 2.
    pub harmonics: usize,
}


impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.harmonics) {
            return Err(Error::Config(format!("harmonics must be 1 or 2, got {}", self.harmonics)));
        }
        if !(self.omega_min > 0.0 && self.omega_max > self.omega_min) {
            return Err(Error::Config("need 0 < omega_min < omega_max".into()));
        }
        Ok(())
    }

    /// Free parameters of an `m`-component fit: offset, slope and two per
    /// harmonic for each trajectory, `m - 1` weights, and the shared omega.
    pub fn num_free_params(&self, m: usize) -> usize {
        (2 + 2 * self.harmonics) * m + (m - 1) + 1
    }
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-6,
            omega_min: 2.0 * PI * 0.05,
            omega_max: 2.0 * PI * 1.0,
            restarts: 5,
            seed: 0,
            sample_floor: 0.01,
            harmonics: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: MixtureParams,
    pub log_likelihood: f64,
    /// Log-likelihood after initialisation and after every accepted iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Weighted samples grouped by frame.
#[derive(Debug, Clone)]
pub struct Samples {
    pub times: Vec<f64>,
    /// `(frequency, weight)` per frame.
    pub frames: Vec<Vec<(f64, f64)>>,
    pub count: usize,
}

impl Samples {
    pub fn from_spectrogram(spec: &Spectrogram, floor: f64) -> Result<Samples> {
        let peak = spec.values.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        if !(peak > 0.0) || !peak.is_finite() {
            return Err(Error::Fit("spectrogram has no energy".into()));
        }
        let th = floor * peak;
        let mut frames = Vec::with_capacity(spec.num_frames());
        let mut count = 0;
        let mut total = 0.0;
        for i in 0..spec.num_frames() {
            let cells: Vec<(f64, f64)> = (0..spec.num_freqs())
                .filter_map(|k| {
                    let m = spec.get(i, k).norm_sqr();
                    (m > th).then_some((spec.freqs[k], m))
                })
                .collect();
            count += cells.len();
            total += cells.iter().map(|c| c.1).sum::<f64>();
            frames.push(cells);
        }
        let scale = count as f64 / total;
        for cells in &mut frames {
            cells.iter_mut().for_each(|c| c.1 *= scale);
        }
        Ok(Samples {
            times: spec.frame_times.clone(),
            frames,
            count,
        })
    }

    fn mid_time(&self) -> f64 {
        0.5 * (self.times[0] + self.times[self.times.len() - 1])
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Weighted log pseudo-likelihood `sum w ln sum_m pi_m G_m`.
pub fn log_likelihood(samples: &Samples, params: &MixtureParams) -> f64 {
    e_step(samples, params).0
}

/// Per-frame responsibility-weighted mass and first moment, per component.
struct FrameStats {
    mass: Vec<Vec<f64>>,
    moment: Vec<Vec<f64>>,
}

fn e_step(samples: &Samples, params: &MixtureParams) -> (f64, FrameStats) {
    let m = params.num_components;
    let nf = samples.times.len();
    let mut stats = FrameStats {
        mass: vec![vec![0.0; nf]; m],
        moment: vec![vec![0.0; nf]; m],
    };
    let log_pi: Vec<f64> = params.pi.iter().map(|p| p.ln()).collect();
    let mut logs = vec![0.0; m];
    let mut ll = 0.0;
    for (i, cells) in samples.frames.iter().enumerate() {
        let t = samples.times[i];
        for &(f, w) in cells {
            for k in 0..m {
                logs[k] = log_pi[k]
                    + log_gaussian_ridge(t, f, params.omega_r, &params.coeffs[k], params.sigma);
            }
            let lse = log_sum_exp(&logs);
            ll += w * lse;
            for k in 0..m {
                let r = if lse.is_finite() {
                    (logs[k] - lse).exp()
                } else {
                    1.0 / m as f64
                };
                stats.mass[k][i] += w * r;
                stats.moment[k][i] += w * r * f;
            }
        }
    }
    (ll, stats)
}

fn basis(omega: f64, t: f64, t_mid: f64) -> Vector6<f64> {
    let (s1, c1) = (omega * t).sin_cos();
    let (s2, c2) = (2.0 * omega * t).sin_cos();
    Vector6::new(1.0, c1, -s1, c2, -s2, t - t_mid)
}

/// Weighted least squares of one component's centroids at fixed `omega`.
/// Returns coefficients (in absolute time) and the omega-dependent part of
/// the residual, `sum_i W_i f_D(t_i)^2 - 2 f_D(t_i) F_i`.
fn fit_trajectory(
    times: &[f64],
    mass: &[f64],
    moment: &[f64],
    omega: f64,
    t_mid: f64,
    harmonics: usize,
) -> (TrajectoryCoeffs, f64) {
    let mut a = Matrix6::<f64>::zeros();
    let mut b = Vector6::<f64>::zeros();
    for ((&t, &w), &mom) in times.iter().zip(mass).zip(moment) {
        if w <= 0.0 {
            continue;
        }
        let phi = basis(omega, t, t_mid);
        a += phi * phi.transpose() * w;
        b += phi * mom;
    }
    let mut scale: Vector6<f64> = a.diagonal().map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 });
    if harmonics < 2 {
        scale[3] = 0.0;
        scale[4] = 0.0;
    }
    let d = Matrix6::from_diagonal(&scale);
    let mut an = d * a * d;
    let bn = d * b;
    // pin dropped or unobserved columns to zero
    for i in 0..6 {
        if scale[i] == 0.0 {
            an[(i, i)] = 1.0;
        }
    }
    let x = match an.cholesky() {
        Some(ch) => ch.solve(&bn),
        None => an
            .svd(true, true)
            .solve(&bn, 1e-12)
            .unwrap_or_else(|_| Vector6::zeros()),
    };
    let beta = d * x;
    // sum W f^2 - 2 f F with f = phi.beta: beta' A beta - 2 beta' b
    let cost = (beta.transpose() * a * beta)[0] - 2.0 * beta.dot(&b);
    let c = [
        beta[0] - beta[5] * t_mid,
        beta[1],
        beta[2],
        beta[3],
        beta[4],
        beta[5],
    ];
    (c, cost)
}

fn profile_cost(
    samples: &Samples,
    stats: &FrameStats,
    omega: f64,
    harmonics: usize,
) -> (f64, Vec<TrajectoryCoeffs>) {
    let t_mid = samples.mid_time();
    let mut total = 0.0;
    let mut coeffs = Vec::with_capacity(stats.mass.len());
    for k in 0..stats.mass.len() {
        let (c, cost) =
            fit_trajectory(&samples.times, &stats.mass[k], &stats.moment[k], omega, t_mid, harmonics);
        total += cost;
        coeffs.push(c);
    }
    (total, coeffs)
}

fn golden_min(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Best `omega` by a coarse grid over the whole interval refined by golden
/// section around the best grid point.
fn global_omega(samples: &Samples, stats: &FrameStats, opts: &EmOptions) -> f64 {
    let n = 64;
    let step = (opts.omega_max - opts.omega_min) / (n - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let w = opts.omega_min + k as f64 * step;
            (w, profile_cost(samples, stats, w, opts.harmonics).0)
        })
        .collect();
    let best = grid
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|g| g.0)
        .unwrap_or(opts.omega_min);
    let lo = (best - step).max(opts.omega_min);
    let hi = (best + step).min(opts.omega_max);
    let (w, c) = golden_min(lo, hi, 1e-4, |w| profile_cost(samples, stats, w, opts.harmonics).0);
    let grid_cost = profile_cost(samples, stats, best, opts.harmonics).0;
    let w = if c <= grid_cost { w } else { best };
    unfold_subharmonic(samples, stats, w, step, opts)
}

/// Harmonic energy `(first, second)` of the fitted trajectories, weighted by
/// component mass.
fn harmonic_energy(stats: &FrameStats, coeffs: &[TrajectoryCoeffs]) -> (f64, f64) {
    let mut e = (0.0, 0.0);
    for (mass, c) in stats.mass.iter().zip(coeffs) {
        let w: f64 = mass.iter().sum();
        e.0 += w * (c[1] * c[1] + c[2] * c[2]);
        e.1 += w * (c[3] * c[3] + c[4] * c[4]);
    }
    e
}

/// A ridge at `w` is fitted equally well at `w / 2` using the second harmonic,
/// and the spare slow harmonic then soaks up noise. When the first harmonic
/// carries little of the energy the fundamental is moved up an octave.
fn unfold_subharmonic(samples: &Samples, stats: &FrameStats, w: f64, step: f64, opts: &EmOptions) -> f64 {
    let (_, coeffs) = profile_cost(samples, stats, w, opts.harmonics);
    let (first, second) = harmonic_energy(stats, &coeffs);
    if !(first < SUBHARMONIC_RATIO * second) || 2.0 * w > opts.omega_max {
        return w;
    }
    let lo = (2.0 * w - step).max(opts.omega_min);
    let hi = (2.0 * w + step).min(opts.omega_max);
    golden_min(lo, hi, 1e-4, |x| profile_cost(samples, stats, x, opts.harmonics).0).0
}

fn m_step(
    samples: &Samples,
    stats: &FrameStats,
    current: &MixtureParams,
    opts: &EmOptions,
    global: bool,
) -> MixtureParams {
    let total: f64 = stats.mass.iter().map(|m| m.iter().sum::<f64>()).sum();
    let pi: Vec<f64> = stats
        .mass
        .iter()
        .map(|m| m.iter().sum::<f64>() / total)
        .collect();
    let omega = if global {
        global_omega(samples, stats, opts)
    } else {
        let w0 = current.omega_r;
        let lo = (w0 * 0.9).max(opts.omega_min);
        let hi = (w0 * 1.1).min(opts.omega_max);
        let (w, c) = golden_min(lo, hi, 1e-4 * w0, |w| profile_cost(samples, stats, w, opts.harmonics).0);
        if c < profile_cost(samples, stats, w0, opts.harmonics).0 {
            w
        } else {
            w0
        }
    };
    let (_, coeffs) = profile_cost(samples, stats, omega, opts.harmonics);
    MixtureParams {
        num_components: current.num_components,
        pi,
        omega_r: omega,
        coeffs,
        sigma: current.sigma,
    }
}

/// EM iterations from `init` until the relative likelihood change drops below
/// the tolerance. An iteration that would lower the likelihood is rejected and
/// ends the fit.
fn run_em(samples: &Samples, init: MixtureParams, opts: &EmOptions) -> EmFit {
    let mut params = init;
    let (mut ll, mut stats) = e_step(samples, &params);
    let mut history = vec![ll];
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let next = m_step(samples, &stats, &params, opts, false);
        let (next_ll, next_stats) = e_step(samples, &next);
        if !(next_ll >= ll) {
            converged = true;
            break;
        }
        let delta = next_ll - ll;
        params = next;
        ll = next_ll;
        stats = next_stats;
        history.push(ll);
        if delta <= opts.rel_tol * ll.abs() {
            converged = true;
            break;
        }
    }
    EmFit {
        params,
        log_likelihood: ll,
        history,
        converged,
    }
}

fn single_component_start(samples: &Samples, sigma: f64, opts: &EmOptions) -> MixtureParams {
    let nf = samples.times.len();
    let mut stats = FrameStats {
        mass: vec![vec![0.0; nf]],
        moment: vec![vec![0.0; nf]],
    };
    for (i, cells) in samples.frames.iter().enumerate() {
        for &(f, w) in cells {
            stats.mass[0][i] += w;
            stats.moment[0][i] += w * f;
        }
    }
    let seed = MixtureParams {
        num_components: 1,
        pi: vec![1.0],
        omega_r: opts.omega_min,
        coeffs: vec![[0.0; 6]],
        sigma,
    };
    m_step(samples, &stats, &seed, opts, true)
}

fn rotate(c: &TrajectoryCoeffs, n: usize, angle: f64, gain: f64) -> (f64, f64) {
    let z = Complex64::new(c[2 * n - 1], c[2 * n]) * Complex64::from_polar(gain, angle);
    (z.re, z.im)
}

fn split_start(base: &MixtureParams, offsets: [f64; 2], angles: [f64; 2], gains: [f64; 2]) -> MixtureParams {
    let c = base.coeffs[0];
    let coeffs = (0..2)
        .map(|k| {
            let (r1, i1) = rotate(&c, 1, angles[k], gains[k]);
            let (r2, i2) = rotate(&c, 2, angles[k], gains[k]);
            [c[0] + offsets[k], r1, i1, r2, i2, c[5]]
        })
        .collect();
    MixtureParams {
        num_components: 2,
        pi: vec![0.5, 0.5],
        omega_r: base.omega_r,
        coeffs,
        sigma: base.sigma,
    }
}

fn sort_components(mut fit: EmFit) -> EmFit {
    let p = &mut fit.params;
    let mut order: Vec<usize> = (0..p.num_components).collect();
    order.sort_by(|&a, &b| p.pi[b].total_cmp(&p.pi[a]));
    p.pi = order.iter().map(|&k| p.pi[k]).collect();
    p.coeffs = order.iter().map(|&k| p.coeffs[k]).collect();
    fit
}

/// Fits an `m`-component mixture. Without `init`, one component starts from
/// the global centroid regression; two components start from a split of that
/// fit plus `opts.restarts` randomised starts, keeping the best likelihood.
pub fn em_fit(
    spec: &Spectrogram,
    m: usize,
    sigma: f64,
    init: Option<&MixtureParams>,
    opts: &EmOptions,
) -> Result<EmFit> {
    if m == 0 || m > MAX_COMPONENTS {
        return Err(Error::Config(format!("component count {m} outside 1..={MAX_COMPONENTS}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::OutOfRange(format!("sigma must be positive, got {sigma}")));
    }
    opts.validate()?;
    let samples = Samples::from_spectrogram(spec, opts.sample_floor)?;
    fit_samples(&samples, m, sigma, init, opts)
}

fn fit_samples(
    samples: &Samples,
    m: usize,
    sigma: f64,
    init: Option<&MixtureParams>,
    opts: &EmOptions,
) -> Result<EmFit> {
    if let Some(p) = init {
        p.validate()?;
        if p.num_components != m {
            return Err(Error::Config(format!(
                "initial guess has {} components, asked for {m}",
                p.num_components
            )));
        }
        return Ok(sort_components(run_em(samples, p.clone(), opts)));
    }
    let base = single_component_start(samples, sigma, opts);
    if m == 1 {
        return Ok(run_em(samples, base, opts));
    }
    let mut starts = vec![split_start(&base, [sigma, -sigma], [0.3, -0.3], [1.0, 1.0])];
    for r in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64 + 1));
        let offsets = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let angles = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let gains = [rng.random_range(0.5..1.5), rng.random_range(0.5..1.5)];
        starts.push(split_start(&base, offsets, angles, gains));
    }
    let best = starts
        .into_iter()
        .map(|s| run_em(samples, s, opts))
        .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
        .ok_or_else(|| Error::Fit("no starting point".into()))?;
    Ok(sort_components(best))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    #[serde(flatten)]
    pub params: MixtureParams,
    pub mbic: f64,
    pub loglik: f64,
    pub converged: bool,
    /// `(M, log-likelihood, mbic)` for every order tried.
    pub candidates: Vec<(usize, f64, f64)>,
}

/// Fits `M = 1..=m_max` and returns the fit with the smallest criterion.
pub fn select_model(
    spec: &Spectrogram,
    sigma: f64,
    m_max: usize,
    alpha: f64,
    opts: &EmOptions,
) -> Result<ModelSelection> {
    if m_max == 0 || m_max > MAX_COMPONENTS {
        return Err(Error::Config(format!("m_max {m_max} outside 1..={MAX_COMPONENTS}")));
    }
    opts.validate()?;
    let samples = Samples::from_spectrogram(spec, opts.sample_floor)?;
    let n_s = samples.count as f64;
    let mut best: Option<(EmFit, f64)> = None;
    let mut candidates = Vec::new();
    for m in 1..=m_max {
        let fit = fit_samples(&samples, m, sigma, None, opts)?;
        let score = mbic(fit.log_likelihood, opts.num_free_params(m), n_s, alpha);
        candidates.push((m, fit.log_likelihood, score));
        if best.as_ref().is_none_or(|(_, s)| score < *s) {
            best = Some((fit, score));
        }
    }
    let (fit, score) = best.ok_or_else(|| Error::Fit("no model order fitted".into()))?;
    Ok(ModelSelection {
        params: fit.params,
        mbic: score,
        loglik: fit.log_likelihood,
        converged: fit.converged,
        candidates,
    })
}

/// [`select_model`] with the default ridge width, order cap, and penalty.
pub fn select_model_default(spec: &Spectrogram, opts: &EmOptions) -> Result<ModelSelection> {
    select_model(spec, DEFAULT_SIGMA, MAX_COMPONENTS, DEFAULT_ALPHA, opts)
}
