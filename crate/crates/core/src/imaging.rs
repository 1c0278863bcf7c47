//! Time-domain backprojection with optional motion phase compensation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{RadarConfig, ScanTrajectory, Vec3};
use crate::simulator::{CubeAxes, SignalCube};

/// Regular voxel lattice. Voxel `(ix, iy, iz)` sits at
/// `origin + (ix dx, iy dy, iz dz)`; values are stored with `z` fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: [usize; 3],
}

impl ImageGrid {
    pub fn new(origin: Vec3, spacing: Vec3, dims: [usize; 3]) -> Result<ImageGrid> {
        let g = ImageGrid {
            origin,
            spacing,
            dims,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing.x > 0.0 && self.spacing.y > 0.0 && self.spacing.z > 0.0) {
            return Err(Error::Config("voxel spacing must be positive".into()));
        }
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("grid dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + iz
    }

    #[inline]
    pub fn unravel(&self, i: usize) -> [usize; 3] {
        let iz = i % self.dims[2];
        let rest = i / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], iz]
    }

    pub fn position(&self, i: usize) -> Vec3 {
        let [ix, iy, iz] = self.unravel(i);
        self.origin
            + Vec3::new(
                ix as f64 * self.spacing.x,
                iy as f64 * self.spacing.y,
                iz as f64 * self.spacing.z,
            )
    }

    /// Grid with the same spacing and dims whose z-extent is centred on
    /// `z_center`, snapped to the lattice `z = k dz`.
    pub fn recentered_z(&self, z_center: f64) -> ImageGrid {
        let half = (self.dims[2] as f64 - 1.0) / 2.0 * self.spacing.z;
        let z0 = ((z_center - half) / self.spacing.z).round() * self.spacing.z;
        ImageGrid {
            origin: Vec3::new(self.origin.x, self.origin.y, z0),
            ..*self
        }
    }
}

/// Complex voxel image `I(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SarImage {
    pub grid: ImageGrid,
    pub values: Vec<Complex64>,
    /// Number of (voxel, sample) pairs that fell outside the cube's
    /// range/angle coverage and contributed nothing.
    pub coverage_misses: usize,
}

impl SarImage {
    pub fn zeros(grid: ImageGrid) -> SarImage {
        SarImage {
            grid,
            values: vec![Complex64::default(); grid.len()],
            coverage_misses: 0,
        }
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            grid: self.grid,
            values: self.intensity(),
        }
    }
}

/// Real-valued voxel volume, such as a fused intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: ImageGrid,
    pub values: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: ImageGrid) -> Volume {
        Volume {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Integration interval centred at `center` with length `length`, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub center: f64,
    pub length: f64,
}

impl TimeWindow {
    pub fn new(center: f64, length: f64) -> Result<TimeWindow> {
        if !(length > 0.0) || !center.is_finite() {
            return Err(Error::Config(format!("invalid window length {length}")));
        }
        Ok(TimeWindow { center, length })
    }

    pub fn start(&self) -> f64 {
        self.center - self.length / 2.0
    }

    pub fn end(&self) -> f64 {
        self.center + self.length / 2.0
    }
}

/// Phase error samples `phi(t)` on a window's slow-time grid, radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFunction {
    pub samples: Vec<f64>,
}

impl PhaseFunction {
    pub fn zeros(n: usize) -> PhaseFunction {
        PhaseFunction {
            samples: vec![0.0; n],
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.samples.len() != n {
            return Err(Error::Size(format!(
                "phase has {} samples, window has {n}",
                self.samples.len()
            )));
        }
        if self.samples.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("phase samples must be finite".into()));
        }
        Ok(())
    }
}

/// Two-way carrier phase `4 pi r / lambda`.
pub fn psi(r: f64, wavelength: f64) -> f64 {
    4.0 * PI * r / wavelength
}

/// Bilinear lookup position in a cube's (range, angle) plane.
#[derive(Debug, Clone, Copy)]
struct CellWeights {
    r0: usize,
    a0: usize,
    fr: f64,
    fa: f64,
}

fn locate(cube: &SignalCube, r: f64, theta: f64) -> Option<CellWeights> {
    let x = (r - cube.range_offset) / cube.range_bin_size;
    let nr = cube.num_range;
    if !(x >= 0.0) || x > (nr - 1) as f64 {
        return None;
    }
    let grid = &cube.angle_grid;
    let na = grid.len();
    if !(theta >= grid[0]) || theta > grid[na - 1] {
        return None;
    }
    let (r0, fr) = if nr == 1 {
        (0, 0.0)
    } else {
        let r0 = (x.floor() as usize).min(nr - 2);
        (r0, x - r0 as f64)
    };
    let (a0, fa) = if na == 1 {
        (0, 0.0)
    } else {
        let a0 = grid.partition_point(|&g| g <= theta).clamp(1, na - 1) - 1;
        (a0, (theta - grid[a0]) / (grid[a0 + 1] - grid[a0]))
    };
    Some(CellWeights { r0, a0, fr, fa })
}

#[inline]
fn sample_bilinear(cube: &SignalCube, w: CellWeights, t: usize) -> Complex64 {
    let r1 = (w.r0 + 1).min(cube.num_range - 1);
    let a1 = (w.a0 + 1).min(cube.num_angle() - 1);
    let v00 = cube.get(w.r0, w.a0, t);
    let v01 = cube.get(w.r0, a1, t);
    let v10 = cube.get(r1, w.a0, t);
    let v11 = cube.get(r1, a1, t);
    let top = v00 * (1.0 - w.fa) + v01 * w.fa;
    let bottom = v10 * (1.0 - w.fa) + v11 * w.fa;
    top * (1.0 - w.fr) + bottom * w.fr
}

/// Per-(voxel, sample) lookup positions and `exp(-j psi) / f_s` for one
/// window. Every cube sharing the range/angle axes and slow-time sampling can
/// reuse it, which makes building kernels for many echo cubes cheap.
#[derive(Debug, Clone)]
pub struct BackprojectionGeometry {
    pub grid: ImageGrid,
    pub voxels: Vec<usize>,
    pub window: TimeWindow,
    pub num_time: usize,
    axes: CubeAxes,
    sample_rate: f64,
    cells: Vec<Option<(CellWeights, Complex64)>>,
    pub coverage_misses: usize,
}

impl BackprojectionGeometry {
    pub fn new(
        cube: &SignalCube,
        radar: &RadarConfig,
        traj: &ScanTrajectory,
        grid: &ImageGrid,
        window: &TimeWindow,
        voxels: Vec<usize>,
    ) -> Result<BackprojectionGeometry> {
        cube.validate()?;
        grid.validate()?;
        if let Some(&bad) = voxels.iter().find(|&&v| v >= grid.len()) {
            return Err(Error::OutOfRange(format!("voxel {bad} outside a grid of {}", grid.len())));
        }
        let (k0, n) = cube.window_indices(window)?;
        if cube.time_of(k0) < -1e-9 || cube.time_of(k0 + n - 1) > traj.duration + 1e-9 {
            return Err(Error::OutOfRange("window extends beyond the scan".into()));
        }
        let antennas: Vec<Vec3> = (k0..k0 + n)
            .map(|k| traj.position_unchecked(cube.time_of(k)))
            .collect();
        let dt = 1.0 / cube.sample_rate;
        let axis = radar.array_axis;
        let lambda = radar.wavelength;

        let mut cells = vec![None; voxels.len() * n];
        let misses: usize = cells
            .par_chunks_mut(n)
            .zip(voxels.par_iter())
            .map(|(row, &vi)| {
                let x = grid.position(vi);
                let mut miss = 0;
                for (out, a) in row.iter_mut().zip(&antennas) {
                    let los = x - *a;
                    let r = los.norm();
                    let theta = if r > 0.0 {
                        (los.dot(axis) / r).clamp(-1.0, 1.0).acos()
                    } else {
                        f64::NAN
                    };
                    *out = locate(cube, r, theta).map(|w| (w, Complex64::cis(-psi(r, lambda)) * dt));
                    if out.is_none() {
                        miss += 1;
                    }
                }
                miss
            })
            .sum();
        Ok(BackprojectionGeometry {
            grid: *grid,
            voxels,
            window: *window,
            num_time: n,
            axes: cube.axes(),
            sample_rate: cube.sample_rate,
            cells,
            coverage_misses: misses,
        })
    }

    /// Kernel of `cube`, which must share the geometry's axes and sampling.
    pub fn kernel(&self, cube: &SignalCube) -> Result<FocusKernel> {
        if cube.axes() != self.axes || cube.sample_rate != self.sample_rate {
            return Err(Error::Shape("cube axes differ from the backprojection geometry".into()));
        }
        let (k0, n) = cube.window_indices(&self.window)?;
        if n != self.num_time {
            return Err(Error::Shape("window sample count differs from the geometry".into()));
        }
        let mut data = vec![Complex64::default(); self.cells.len()];
        data.par_chunks_mut(n)
            .zip(self.cells.par_chunks(n))
            .for_each(|(row, cells)| {
                for (j, (out, cell)) in row.iter_mut().zip(cells).enumerate() {
                    if let Some((w, rot)) = cell {
                        *out = sample_bilinear(cube, *w, k0 + j) * rot;
                    }
                }
            });
        Ok(FocusKernel {
            grid: self.grid,
            voxels: self.voxels.clone(),
            num_time: n,
            times: (k0..k0 + n).map(|k| cube.time_of(k)).collect(),
            data,
            coverage_misses: self.coverage_misses,
        })
    }
}

/// Range-compensated samples `s(r(x,t), theta(x,t), t) exp(-j psi(x,t)) / f_s`
/// for a set of voxels over one window.
///
/// Forming an image with a phase function is then a weighted sum over time,
/// which is what the autofocus loop evaluates repeatedly.
#[derive(Debug, Clone)]
pub struct FocusKernel {
    pub grid: ImageGrid,
    /// Grid indices of the voxels held by the kernel.
    pub voxels: Vec<usize>,
    pub num_time: usize,
    /// Slow-time instant of every kernel sample, seconds.
    pub times: Vec<f64>,
    data: Vec<Complex64>,
    pub coverage_misses: usize,
}

impl FocusKernel {
    pub fn build(
        cube: &SignalCube,
        radar: &RadarConfig,
        traj: &ScanTrajectory,
        grid: &ImageGrid,
        window: &TimeWindow,
    ) -> Result<FocusKernel> {
        let all: Vec<usize> = (0..grid.len()).collect();
        Self::build_subset(cube, radar, traj, grid, window, all)
    }

    pub fn build_subset(
        cube: &SignalCube,
        radar: &RadarConfig,
        traj: &ScanTrajectory,
        grid: &ImageGrid,
        window: &TimeWindow,
        voxels: Vec<usize>,
    ) -> Result<FocusKernel> {
        BackprojectionGeometry::new(cube, radar, traj, grid, window, voxels)?.kernel(cube)
    }

    /// Voxel values `sum_t K(x, t) exp(-j phi(t))`; `None` means `phi = 0`.
    pub fn focus(&self, phase: Option<&[f64]>) -> Vec<Complex64> {
        match phase {
            None => self
                .data
                .par_chunks(self.num_time)
                .map(|row| row.iter().sum())
                .collect(),
            Some(p) => {
                let rot: Vec<Complex64> = p.iter().map(|&ph| Complex64::cis(-ph)).collect();
                self.focus_with_rotors(&rot)
            }
        }
    }

    /// Same as [`focus`](Self::focus) with precomputed `exp(-j phi(t))`.
    pub fn focus_with_rotors(&self, rot: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(rot.len(), self.num_time);
        self.data
            .par_chunks(self.num_time)
            .map(|row| row.iter().zip(rot).map(|(k, r)| k * r).sum())
            .collect()
    }

    /// Kernel restricted to `voxels`, which must all be held by `self`.
    pub fn restrict(&self, voxels: &[usize]) -> Result<FocusKernel> {
        let mut row_of = vec![usize::MAX; self.grid.len()];
        for (row, &vi) in self.voxels.iter().enumerate() {
            row_of[vi] = row;
        }
        let mut data = Vec::with_capacity(voxels.len() * self.num_time);
        for &vi in voxels {
            let row = *row_of
                .get(vi)
                .filter(|r| **r != usize::MAX)
                .ok_or_else(|| Error::OutOfRange(format!("voxel {vi} is not in the kernel")))?;
            data.extend_from_slice(&self.data[row * self.num_time..(row + 1) * self.num_time]);
        }
        Ok(FocusKernel {
            grid: self.grid,
            voxels: voxels.to_vec(),
            num_time: self.num_time,
            times: self.times.clone(),
            data,
            coverage_misses: self.coverage_misses,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.norm_sqr() == 0.0)
    }

    /// Scatter kernel voxel values back onto the full grid.
    pub fn to_image(&self, values: &[Complex64]) -> SarImage {
        let mut img = SarImage::zeros(self.grid);
        for (&vi, v) in self.voxels.iter().zip(values) {
            img.values[vi] = *v;
        }
        img.coverage_misses = self.coverage_misses;
        img
    }
}

/// Backprojection image of `cube` over `window`, optionally compensating the
/// phase error `phase` sampled on the window's slow-time grid.
pub fn backproject(
    cube: &SignalCube,
    radar: &RadarConfig,
    traj: &ScanTrajectory,
    grid: &ImageGrid,
    window: &TimeWindow,
    phase: Option<&PhaseFunction>,
) -> Result<SarImage> {
    let kernel = FocusKernel::build(cube, radar, traj, grid, window)?;
    if let Some(p) = phase {
        p.validate(kernel.num_time)?;
    }
    let values = kernel.focus(phase.map(|p| p.samples.as_slice()));
    Ok(kernel.to_image(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_cube, CubeAxes};
    use crate::scene::{RespiratoryMotion, Scatterer, Scene};

    fn setup() -> (RadarConfig, ScanTrajectory, CubeAxes, ImageGrid, TimeWindow) {
        let radar = RadarConfig::default();
        let traj = ScanTrajectory {
            origin: Vec3::new(0.0, 0.0, -0.04),
            velocity: Vec3::new(0.0, 0.0, 9.9e-3),
            duration: 8.0,
        };
        let axes = CubeAxes::for_radar(&radar, 0.7, 1.1).unwrap();
        let grid = ImageGrid::new(
            Vec3::new(-0.01, 0.85, -0.06),
            Vec3::new(0.01, 0.01, 0.01),
            [3, 11, 13],
        )
        .unwrap();
        (radar, traj, axes, grid, TimeWindow::new(4.0, 8.0).unwrap())
    }

    fn argmax(img: &SarImage) -> usize {
        img.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0
    }

    #[test]
    fn psi_values() {
        let l = 3.794e-3;
        assert!((psi(l / 2.0, l) - 2.0 * PI).abs() < 1e-12);
        assert!((psi(l / 4.0, l) - PI).abs() < 1e-12);
        let v = psi(1.0, l);
        assert!((v - 3312.1693764784).abs() < 1e-6, "{v}");
    }

    #[test]
    fn stationary_point_focuses_at_its_voxel() {
        let (radar, traj, axes, grid, win) = setup();
        let pos = Vec3::new(0.0, 0.9, 0.0);
        let scene = Scene {
            scatterers: vec![Scatterer::stationary(pos, 1.0)],
            noise_sigma: 0.0,
            rng_seed: 0,
        };
        let cube = simulate_cube(&scene, &radar, &traj, &axes).unwrap();
        let img = backproject(&cube, &radar, &traj, &grid, &win, None).unwrap();
        let p = grid.position(argmax(&img));
        assert!((p - pos).norm() < 0.0101, "{p:?}");
        assert_eq!(img.coverage_misses, 0);
    }

    #[test]
    fn constant_phase_keeps_magnitudes() {
        let (radar, traj, axes, grid, win) = setup();
        let scene = Scene {
            scatterers: vec![Scatterer::stationary(Vec3::new(0.0, 0.9, 0.01), 1.0)],
            noise_sigma: 0.05,
            rng_seed: 3,
        };
        let cube = simulate_cube(&scene, &radar, &traj, &axes).unwrap();
        let a = backproject(&cube, &radar, &traj, &grid, &win, None).unwrap();
        let phi = PhaseFunction {
            samples: vec![1.234; 200],
        };
        let b = backproject(&cube, &radar, &traj, &grid, &win, Some(&phi)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x.norm() - y.norm()).abs() <= 1e-12 * x.norm().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn known_motion_compensation_restores_focus() {
        let (radar, traj, axes, grid, win) = setup();
        let pos = Vec3::new(0.0, 0.9, 0.0);
        let motion = RespiratoryMotion::sinusoidal(0.25, 2e-3, 0.7);
        let breathing = Scene {
            scatterers: vec![Scatterer {
                position: pos,
                reflectivity: 1.0,
                motion: motion.clone(),
            }],
            noise_sigma: 0.0,
            rng_seed: 0,
        };
        let still = Scene {
            scatterers: vec![Scatterer::stationary(pos, 1.0)],
            ..breathing.clone()
        };
        let cb = simulate_cube(&breathing, &radar, &traj, &axes).unwrap();
        let cs = simulate_cube(&still, &radar, &traj, &axes).unwrap();
        let phi = PhaseFunction {
            samples: (0..200)
                .map(|k| psi(motion.displacement(cb.time_of(k)), radar.wavelength))
                .collect(),
        };
        let ib = backproject(&cb, &radar, &traj, &grid, &win, Some(&phi)).unwrap();
        let is = backproject(&cs, &radar, &traj, &grid, &win, None).unwrap();
        let peak = is.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let rms = (ib
            .values
            .iter()
            .zip(&is.values)
            .map(|(a, b)| (a.norm() - b.norm()).powi(2))
            .sum::<f64>()
            / grid.len() as f64)
            .sqrt();
        assert!(rms / peak < 0.01, "{}", rms / peak);
        let uncompensated = backproject(&cb, &radar, &traj, &grid, &win, None).unwrap();
        let peak_u = uncompensated.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(peak_u < 0.7 * peak);
    }

    #[test]
    fn phase_then_negated_phase_cancels() {
        let (radar, traj, axes, grid, win) = setup();
        let scene = Scene {
            scatterers: vec![Scatterer::stationary(Vec3::new(0.0, 0.92, 0.02), 1.0)],
            noise_sigma: 0.1,
            rng_seed: 1,
        };
        let cube = simulate_cube(&scene, &radar, &traj, &axes).unwrap();
        let kernel = FocusKernel::build(&cube, &radar, &traj, &grid, &win).unwrap();
        let phi: Vec<f64> = (0..200).map(|k| (k as f64 * 0.05).sin() * 2.0).collect();
        let neg: Vec<f64> = phi.iter().map(|p| -p).collect();
        // apply phi to the data, then compensate with -phi on top
        let rot: Vec<Complex64> = phi
            .iter()
            .zip(&neg)
            .map(|(a, b)| Complex64::cis(-a) * Complex64::cis(-b))
            .collect();
        let both = kernel.focus_with_rotors(&rot);
        let plain = kernel.focus(None);
        for (a, b) in both.iter().zip(&plain) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1e-12));
        }
    }

    #[test]
    fn out_of_coverage_voxels_count_misses() {
        let (radar, traj, axes, _, win) = setup();
        let cube = simulate_cube(
            &Scene {
                scatterers: vec![],
                noise_sigma: 0.0,
                rng_seed: 0,
            },
            &radar,
            &traj,
            &axes,
        )
        .unwrap();
        let far = ImageGrid::new(Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.01, 0.01, 0.01), [1, 1, 2])
            .unwrap();
        let img = backproject(&cube, &radar, &traj, &far, &win, None).unwrap();
        assert_eq!(img.coverage_misses, 2 * 200);
        assert!(img.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn recentered_grid_snaps_to_lattice() {
        let g = ImageGrid::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.01, 0.01, 0.01), [1, 1, 21])
            .unwrap();
        let r = g.recentered_z(0.1234);
        assert!((r.origin.z - 0.02).abs() < 1e-12);
        assert!((r.origin.z / 0.01 - (r.origin.z / 0.01).round()).abs() < 1e-9);
    }
}
