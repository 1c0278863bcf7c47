//! Image sharpness, harmonic phase-error estimation, and incoherent fusion.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FocusKernel, ImageGrid, PhaseFunction, SarImage, TimeWindow, Volume};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::scene::{azimuth_from, RadarConfig, ScanTrajectory};
use crate::simulator::SignalCube;
use crate::tf::MixtureParams;

/// Muller–Buffington sharpness of complex voxel values, `m^-3`.
pub fn sharpness_of(values: &[Complex64], voxel_volume: f64) -> Result<f64> {
    let (mut s2, mut s4) = (0.0, 0.0);
    for v in values {
        let p = v.norm_sqr();
        s2 += p;
        s4 += p * p;
    }
    ratio(s2, s4, voxel_volume)
}

fn ratio(s2: f64, s4: f64, dv: f64) -> Result<f64> {
    if !(s2 > 0.0) || !s2.is_finite() {
        return Err(Error::UndefinedMetric("sharpness of an all-zero image".into()));
    }
    Ok(s4 * dv / (s2 * dv).powi(2))
}

pub fn mb_sharpness(img: &SarImage) -> Result<f64> {
    sharpness_of(&img.values, img.grid.voxel_volume())
}

/// The same ratio for an intensity volume `P = |I|^2`.
pub fn volume_sharpness(vol: &Volume) -> Result<f64> {
    let s2: f64 = vol.values.iter().sum();
    let s4: f64 = vol.values.iter().map(|p| p * p).sum();
    ratio(s2, s4, vol.grid.voxel_volume())
}

/// Harmonic phase-error coefficients, radians:
/// `phi(t) = Re[b1 e^{j omega t}] + Re[b2 e^{j 2 omega t}]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseCoeffs {
    pub b1: Complex64,
    pub b2: Complex64,
}

impl PhaseCoeffs {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            b1: Complex64::new(x[0], x[1]),
            b2: Complex64::new(x[2], x[3]),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.b1.re, self.b1.im, self.b2.re, self.b2.im]
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    pub fn phase_at(&self, omega: f64, t: f64) -> f64 {
        (self.b1 * Complex64::cis(omega * t)).re + (self.b2 * Complex64::cis(2.0 * omega * t)).re
    }

    pub fn sample(&self, omega: f64, times: &[f64]) -> PhaseFunction {
        PhaseFunction {
            samples: times.iter().map(|&t| self.phase_at(omega, t)).collect(),
        }
    }
}

impl std::ops::Mul<f64> for PhaseCoeffs {
    type Output = PhaseCoeffs;

    fn mul(self, k: f64) -> PhaseCoeffs {
        PhaseCoeffs {
            b1: self.b1 * k,
            b2: self.b2 * k,
        }
    }
}

/// Phase coefficients matching the periodic part of component `m`'s Doppler
/// trajectory: `b_n = 2 pi c_n / (j n omega)`.
pub fn phase_from_trajectory(params: &MixtureParams, m: usize) -> Result<PhaseCoeffs> {
    let c = params
        .coeffs
        .get(m)
        .ok_or_else(|| Error::OutOfRange(format!("component {m} of {}", params.num_components)))?;
    let w = params.omega_r;
    if w == 0.0 {
        return Ok(PhaseCoeffs::zero());
    }
    let j = Complex64::i();
    Ok(PhaseCoeffs {
        b1: 2.0 * PI * Complex64::new(c[1], c[2]) / (j * w),
        b2: 2.0 * PI * Complex64::new(c[3], c[4]) / (j * 2.0 * w),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutofocusOptions {
    pub nelder_mead_step: f64,
    pub diameter_tol: f64,
    pub max_evals: usize,
    /// Half-width in range of the voxel subset used for the sharpness
    /// objective, meters.
    pub range_margin: f64,
    /// Half-width in azimuth of that subset, radians.
    pub angle_margin: f64,
}

impl Default for AutofocusOptions {
    fn default() -> Self {
        let res = RadarConfig::default().range_resolution();
        Self {
            nelder_mead_step: 0.5,
            diameter_tol: 1e-3,
            max_evals: 300,
            range_margin: 5.0 * res,
            angle_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusResult {
    pub image: SarImage,
    pub phase: PhaseFunction,
    pub coeffs: PhaseCoeffs,
    pub sharpness_before: f64,
    pub sharpness_after: f64,
    pub evaluations: usize,
}

/// Voxels whose range and azimuth, seen from the antenna at the window
/// centre, lie within the margins around `(r, theta)`.
pub fn footprint_voxels(
    grid: &ImageGrid,
    radar: &RadarConfig,
    traj: &ScanTrajectory,
    window: &TimeWindow,
    r: f64,
    theta: f64,
    opts: &AutofocusOptions,
) -> Vec<usize> {
    let a = traj.position_unchecked(window.center);
    (0..grid.len())
        .filter(|&i| {
            let x = grid.position(i);
            let rv = (x - a).norm();
            let tv = azimuth_from(a, radar.array_axis, x).unwrap_or(f64::NAN);
            (rv - r).abs() <= opts.range_margin && (tv - theta).abs() <= opts.angle_margin
        })
        .collect()
}

fn rotors(coeffs: PhaseCoeffs, omega: f64, times: &[f64]) -> Vec<Complex64> {
    times
        .iter()
        .map(|&t| Complex64::cis(-coeffs.phase_at(omega, t)))
        .collect()
}

/// Maximises image sharpness over the harmonic phase coefficients with a
/// simplex search started from `init` and from zero. When `footprint` is
/// given the objective only looks at voxels around that `(r, theta)`; the
/// returned image covers the whole grid and is never less sharp than the
/// uncompensated one.
#[allow(clippy::too_many_arguments)]
pub fn optimize_phase(
    cube: &SignalCube,
    radar: &RadarConfig,
    traj: &ScanTrajectory,
    grid: &ImageGrid,
    window: &TimeWindow,
    init: PhaseCoeffs,
    omega_r: f64,
    footprint: Option<(f64, f64)>,
    opts: &AutofocusOptions,
) -> Result<FocusResult> {
    let kernel = FocusKernel::build(cube, radar, traj, grid, window)?;
    let crop = footprint.map(|(r, theta)| footprint_voxels(grid, radar, traj, window, r, theta, opts));
    optimize_kernel_phase(&kernel, init, omega_r, crop.as_deref(), opts)
}

/// [`optimize_phase`] on a prebuilt full-grid kernel; `crop` lists the grid
/// voxels the objective looks at (all voxels when `None` or empty).
pub fn optimize_kernel_phase(
    kernel: &FocusKernel,
    init: PhaseCoeffs,
    omega_r: f64,
    crop: Option<&[usize]>,
    opts: &AutofocusOptions,
) -> Result<FocusResult> {
    if !init.is_finite() || !omega_r.is_finite() {
        return Err(Error::OutOfRange("non-finite phase initialisation".into()));
    }
    if kernel.is_zero() {
        return Err(Error::Focus("echo cube is zero over the window's footprint".into()));
    }
    let times = &kernel.times;
    let dv = kernel.grid.voxel_volume();
    let cropped = match crop.filter(|v| !v.is_empty()) {
        Some(v) => kernel.restrict(v)?,
        None => kernel.clone(),
    };

    let nm = NelderMeadOptions {
        step: opts.nelder_mead_step,
        diameter_tol: opts.diameter_tol,
        max_evals: opts.max_evals,
    };
    let objective = |x: &[f64]| {
        let rot = rotors(PhaseCoeffs::from_slice(x), omega_r, times);
        sharpness_of(&cropped.focus_with_rotors(&rot), dv)
            .map(|s| -s)
            .unwrap_or(f64::INFINITY)
    };
    let from_init = nelder_mead(objective, &init.to_vec(), &nm);
    let from_zero = nelder_mead(objective, &[0.0; 4], &nm);
    let evaluations = from_init.evals + from_zero.evals;

    let full = |c: PhaseCoeffs| -> Result<(Vec<Complex64>, f64)> {
        let values = kernel.focus_with_rotors(&rotors(c, omega_r, times));
        let s = sharpness_of(&values, dv)?;
        Ok((values, s))
    };
    let (zero_values, before) = full(PhaseCoeffs::zero())?;
    let mut best = (PhaseCoeffs::zero(), zero_values, before);
    for x in [&from_init.x, &from_zero.x] {
        let c = PhaseCoeffs::from_slice(x);
        let (values, s) = full(c)?;
        if s > best.2 {
            best = (c, values, s);
        }
    }
    let (coeffs, values, after) = best;
    Ok(FocusResult {
        image: kernel.to_image(&values),
        phase: coeffs.sample(omega_r, times),
        coeffs,
        sharpness_before: before,
        sharpness_after: after,
        evaluations,
    })
}

/// Incoherent sum `sum |I|^2` of images on one grid.
pub fn integrate_images(images: &[SarImage]) -> Result<Volume> {
    let first = images
        .first()
        .ok_or_else(|| Error::EmptySet("no images to integrate".into()))?;
    let mut vol = Volume::zeros(first.grid);
    for img in images {
        if img.grid != first.grid || img.values.len() != vol.values.len() {
            return Err(Error::Shape("images are on different grids".into()));
        }
        for (acc, v) in vol.values.iter_mut().zip(&img.values) {
            *acc += v.norm_sqr();
        }
    }
    Ok(vol)
}
