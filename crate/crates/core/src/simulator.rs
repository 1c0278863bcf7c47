//! Synthetic range–angle–slow-time echo cubes for a scene of point scatterers.
//!
//! The cube is synthesized after range compression and array beamforming:
//! each scatterer contributes a truncated sinc along range, and its element
//! signals are steered onto the angle grid by an exact spatial DFT.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::TimeWindow;
use crate::scene::{azimuth_from, RadarConfig, ScanTrajectory, Scene};

/// Range sidelobes beyond this many nulls are dropped.
const SINC_NULLS: f64 = 4.0;

/// Complex baseband signal `s(r, theta, t)`, stored range-major, then angle,
/// with slow time as the fastest axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalCube {
    pub values: Vec<Complex64>,
    pub num_range: usize,
    pub num_time: usize,
    pub range_bin_size: f64,
    pub range_offset: f64,
    /// Bin-centre angles in radians, strictly increasing.
    pub angle_grid: Vec<f64>,
    pub sample_rate: f64,
    pub t_start: f64,
}

/// Range/angle sampling of a cube. The slow-time axis comes from the radar
/// and the scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeAxes {
    pub range_bin_size: f64,
    pub range_offset: f64,
    pub num_range: usize,
    pub angle_grid: Vec<f64>,
}

impl CubeAxes {
    /// Range bins at half the range resolution spanning `[r_min, r_max]`, and
    /// the angles of the array's DFT beams.
    pub fn for_radar(radar: &RadarConfig, r_min: f64, r_max: f64) -> Result<CubeAxes> {
        if !(r_max > r_min) || !(r_min >= 0.0) {
            return Err(Error::Config(format!("bad range span [{r_min}, {r_max}]")));
        }
        let dr = radar.range_resolution() / 2.0;
        let num_range = ((r_max - r_min) / dr).ceil() as usize + 1;
        Ok(CubeAxes {
            range_bin_size: dr,
            range_offset: r_min,
            num_range,
            angle_grid: dft_angle_grid(radar)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_bin_size > 0.0) || self.num_range == 0 || self.angle_grid.is_empty() {
            return Err(Error::Config("cube axes must be non-empty with positive bin size".into()));
        }
        if self.angle_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("angle grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Beam angles `arccos(k lambda / (N d))` for the `N` DFT bins, ascending.
pub fn dft_angle_grid(radar: &RadarConfig) -> Result<Vec<f64>> {
    let n = radar.num_elements as i64;
    let lo = -(n / 2);
    let mut grid = Vec::with_capacity(n as usize);
    for k in lo..lo + n {
        let c = k as f64 * radar.wavelength / (n as f64 * radar.element_spacing);
        if c.abs() > 1.0 {
            return Err(Error::Config(format!(
                "element spacing {} m undersamples the aperture: DFT bin {k} is invisible",
                radar.element_spacing
            )));
        }
        grid.push(c.acos());
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    Ok(grid)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

impl SignalCube {
    pub fn zeros(axes: &CubeAxes, num_time: usize, sample_rate: f64, t_start: f64) -> SignalCube {
        SignalCube {
            values: vec![Complex64::default(); axes.num_range * axes.angle_grid.len() * num_time],
            num_range: axes.num_range,
            num_time,
            range_bin_size: axes.range_bin_size,
            range_offset: axes.range_offset,
            angle_grid: axes.angle_grid.clone(),
            sample_rate,
            t_start,
        }
    }

    pub fn zeros_like(&self) -> SignalCube {
        SignalCube {
            values: vec![Complex64::default(); self.values.len()],
            angle_grid: self.angle_grid.clone(),
            ..*self
        }
    }

    pub fn axes(&self) -> CubeAxes {
        CubeAxes {
            range_bin_size: self.range_bin_size,
            range_offset: self.range_offset,
            num_range: self.num_range,
            angle_grid: self.angle_grid.clone(),
        }
    }

    pub fn num_angle(&self) -> usize {
        self.angle_grid.len()
    }

    pub fn num_cells(&self) -> usize {
        self.num_range * self.num_angle()
    }

    pub fn validate(&self) -> Result<()> {
        self.axes().validate()?;
        if self.values.len() != self.num_cells() * self.num_time {
            return Err(Error::Shape(format!(
                "cube holds {} values, metadata implies {}",
                self.values.len(),
                self.num_cells() * self.num_time
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, r: usize, a: usize, t: usize) -> usize {
        (r * self.num_angle() + a) * self.num_time + t
    }

    #[inline]
    pub fn get(&self, r: usize, a: usize, t: usize) -> Complex64 {
        self.values[self.index(r, a, t)]
    }

    /// Slow-time series of one range–angle cell.
    pub fn series(&self, r: usize, a: usize) -> &[Complex64] {
        let i = self.index(r, a, 0);
        &self.values[i..i + self.num_time]
    }

    pub fn series_mut(&mut self, r: usize, a: usize) -> &mut [Complex64] {
        let i = self.index(r, a, 0);
        let n = self.num_time;
        &mut self.values[i..i + n]
    }

    pub fn range_of(&self, r: usize) -> f64 {
        self.range_offset + r as f64 * self.range_bin_size
    }

    pub fn time_of(&self, k: usize) -> f64 {
        self.t_start + k as f64 / self.sample_rate
    }

    /// Length of the covered slow-time span, `num_time / f_s`.
    pub fn span(&self) -> f64 {
        self.num_time as f64 / self.sample_rate
    }

    /// Sample index range `[k0, k0 + n)` covered by `window`.
    pub fn window_indices(&self, window: &TimeWindow) -> Result<(usize, usize)> {
        let start = (window.start() - self.t_start) * self.sample_rate;
        let k0 = start.round();
        let n = (window.length * self.sample_rate).round();
        if k0 < 0.0 || n < 1.0 || k0 + n > self.num_time as f64 {
            return Err(Error::OutOfRange(format!(
                "window [{}, {}) s outside cube span [{}, {}) s",
                window.start(),
                window.end(),
                self.t_start,
                self.t_start + self.span()
            )));
        }
        Ok((k0 as usize, n as usize))
    }

    pub fn scale(&mut self, a: Complex64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn add_assign(&mut self, other: &SignalCube) -> Result<()> {
        self.check_same_shape(other)?;
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn check_same_shape(&self, other: &SignalCube) -> Result<()> {
        if self.num_range != other.num_range
            || self.num_time != other.num_time
            || self.angle_grid.len() != other.angle_grid.len()
        {
            return Err(Error::Shape("cube dimensions differ".into()));
        }
        Ok(())
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Sub-cube with slow time restricted to `window`.
pub fn cube_slice(cube: &SignalCube, window: &TimeWindow) -> Result<SignalCube> {
    let (k0, n) = cube.window_indices(window)?;
    let mut values = Vec::with_capacity(cube.num_cells() * n);
    for r in 0..cube.num_range {
        for a in 0..cube.num_angle() {
            values.extend_from_slice(&cube.series(r, a)[k0..k0 + n]);
        }
    }
    Ok(SignalCube {
        values,
        num_time: n,
        t_start: cube.time_of(k0),
        angle_grid: cube.angle_grid.clone(),
        ..*cube
    })
}

/// Number of slow-time samples in a scan of duration `T` at `f_s`.
pub fn scan_sample_count(radar: &RadarConfig, traj: &ScanTrajectory) -> usize {
    (traj.duration * radar.slow_time_rate + 1e-9).floor() as usize + 1
}

/// Synthesize `s(r, theta, t)` for every slow-time sample of the scan.
///
/// Each element sees the carrier phase `2 pi (R_tx + R_e) / lambda`, with the
/// transmitter at the array centre, so after steering the peak cell carries
/// `exp(+j 4 pi R / lambda)`. Noise is drawn from a ChaCha stream per
/// slow-time sample, which keeps the output independent of thread count.
pub fn simulate_cube(
    scene: &Scene,
    radar: &RadarConfig,
    traj: &ScanTrajectory,
    axes: &CubeAxes,
) -> Result<SignalCube> {
    scene.validate()?;
    radar.validate()?;
    traj.validate()?;
    axes.validate()?;

    let num_time = scan_sample_count(radar, traj);
    let fs = radar.slow_time_rate;
    let n_range = axes.num_range;
    let n_angle = axes.angle_grid.len();
    let r_max = axes.range_offset + (n_range - 1) as f64 * axes.range_bin_size;
    let (th_min, th_max) = (axes.angle_grid[0], axes.angle_grid[n_angle - 1]);
    let res = radar.range_resolution();
    let k = 2.0 * PI / radar.wavelength;
    let cos_grid: Vec<f64> = axes.angle_grid.iter().map(|a| a.cos()).collect();
    let offsets: Vec<f64> = (0..radar.num_elements).map(|e| radar.element_offset(e)).collect();
    let inv_ne = 1.0 / radar.num_elements as f64;

    let slabs: Vec<Vec<Complex64>> = (0..num_time)
        .into_par_iter()
        .map(|ti| -> Result<Vec<Complex64>> {
            let t = ti as f64 / fs;
            let antenna = traj.position_unchecked(t);
            let mut slab = vec![Complex64::default(); n_range * n_angle];
            let mut beams = vec![Complex64::default(); n_angle];
            for s in &scene.scatterers {
                let d = s.motion.displacement(t);
                let r0 = (antenna - s.position).norm() + d;
                let theta = azimuth_from(antenna, radar.array_axis, s.position)?;
                if r0 < axes.range_offset || r0 > r_max || theta < th_min || theta > th_max {
                    return Err(Error::Coverage(format!(
                        "scatterer at {:?} seen at r = {r0:.4} m, theta = {theta:.4} rad at t = {t:.3} s",
                        s.position
                    )));
                }
                beams.iter_mut().for_each(|b| *b = Complex64::default());
                for &u in &offsets {
                    let re = (antenna + radar.array_axis * u - s.position).norm() + d;
                    let elem = Complex64::cis(k * (r0 + re));
                    for (b, c) in beams.iter_mut().zip(&cos_grid) {
                        *b += elem * Complex64::cis(k * u * c);
                    }
                }
                let lo = ((r0 - SINC_NULLS * res - axes.range_offset) / axes.range_bin_size)
                    .ceil()
                    .max(0.0) as usize;
                let hi = (((r0 + SINC_NULLS * res - axes.range_offset) / axes.range_bin_size)
                    .floor() as usize)
                    .min(n_range - 1);
                for ri in lo..=hi {
                    let rr = axes.range_offset + ri as f64 * axes.range_bin_size;
                    let g = s.reflectivity * inv_ne * sinc((rr - r0) / res);
                    for (ai, b) in beams.iter().enumerate() {
                        slab[ri * n_angle + ai] += b * g;
                    }
                }
            }
            if scene.noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed);
                rng.set_stream(ti as u64);
                let sd = scene.noise_sigma / 2f64.sqrt();
                for v in slab.iter_mut() {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *v += Complex64::new(re * sd, im * sd);
                }
            }
            Ok(slab)
        })
        .collect::<Result<_>>()?;

    let mut cube = SignalCube::zeros(axes, num_time, fs, 0.0);
    for (ti, slab) in slabs.iter().enumerate() {
        for (cell, v) in slab.iter().enumerate() {
            cube.values[cell * num_time + ti] = *v;
        }
    }
    Ok(cube)
}
