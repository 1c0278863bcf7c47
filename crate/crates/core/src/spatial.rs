//! Range–angle echo separation: accumulated power map, local maxima, and
//! normalized Gaussian weights centred on each maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::TimeWindow;
use crate::simulator::SignalCube;

/// Default range weighting width, meters.
pub const DEFAULT_SIGMA_RANGE: f64 = 0.02;
/// Default angular weighting width, 6.4 degrees in radians.
pub const DEFAULT_SIGMA_ANGLE: f64 = 6.4 * std::f64::consts::PI / 180.0;

/// Accumulated power `s_p(r, theta)` over a window, range-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    pub values: Vec<f64>,
    pub num_range: usize,
    pub range_bin_size: f64,
    pub range_offset: f64,
    pub angle_grid: Vec<f64>,
}

impl PowerMap {
    pub fn num_angle(&self) -> usize {
        self.angle_grid.len()
    }

    pub fn get(&self, r: usize, a: usize) -> f64 {
        self.values[r * self.num_angle() + a]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        if n == 0 {
            0.0
        } else if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMaximum {
    pub range_bin: usize,
    pub angle_bin: usize,
    /// Range of the bin centre, meters.
    pub r: f64,
    /// Angle of the bin centre, radians.
    pub theta: f64,
    pub power: f64,
}

pub fn power_map(cube: &SignalCube, window: &TimeWindow) -> Result<PowerMap> {
    let (k0, n) = cube.window_indices(window)?;
    let dt = 1.0 / cube.sample_rate;
    let mut values = Vec::with_capacity(cube.num_cells());
    for r in 0..cube.num_range {
        for a in 0..cube.num_angle() {
            let p: f64 = cube.series(r, a)[k0..k0 + n].iter().map(|v| v.norm_sqr()).sum();
            values.push(p * dt);
        }
    }
    Ok(PowerMap {
        values,
        num_range: cube.num_range,
        range_bin_size: cube.range_bin_size,
        range_offset: cube.range_offset,
        angle_grid: cube.angle_grid.clone(),
    })
}

/// How the detection threshold `s_th` is derived from a power map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    /// Fraction of the map maximum.
    pub relative_to_max: f64,
    /// Multiple of the map median (the noise floor for sparse scenes);
    /// zero disables the floor.
    #[serde(default)]
    pub over_median: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            relative_to_max: 0.1,
            over_median: 10.0,
        }
    }
}

impl ThresholdPolicy {
    pub fn threshold(&self, map: &PowerMap) -> f64 {
        let floor = if self.over_median > 0.0 {
            self.over_median * map.median()
        } else {
            0.0
        };
        (self.relative_to_max * map.max()).max(floor)
    }
}

/// Interior bins that strictly dominate their 8 neighbours with power at
/// least `s_th`, strongest first.
pub fn find_local_maxima(map: &PowerMap, s_th: f64) -> Vec<LocalMaximum> {
    let (nr, na) = (map.num_range, map.num_angle());
    let mut out = Vec::new();
    if nr < 3 || na < 3 {
        return out;
    }
    for r in 1..nr - 1 {
        for a in 1..na - 1 {
            let p = map.get(r, a);
            if !(p >= s_th) {
                continue;
            }
            let dominant = (-1i64..=1)
                .flat_map(|dr| (-1i64..=1).map(move |da| (dr, da)))
                .filter(|&d| d != (0, 0))
                .all(|(dr, da)| p > map.get((r as i64 + dr) as usize, (a as i64 + da) as usize));
            if dominant {
                out.push(LocalMaximum {
                    range_bin: r,
                    angle_bin: a,
                    r: map.range_offset + r as f64 * map.range_bin_size,
                    theta: map.angle_grid[a],
                    power: p,
                });
            }
        }
    }
    out.sort_by(|x, y| y.power.total_cmp(&x.power));
    out
}

/// Normalized weights `w_n(r, theta)` for every maximum. Computed in the log
/// domain so far-away points do not underflow to 0/0.
pub fn spatial_weights(
    maxima: &[LocalMaximum],
    r: f64,
    theta: f64,
    sigma_r: f64,
    sigma_a: f64,
) -> Result<Vec<f64>> {
    if maxima.is_empty() {
        return Err(Error::EmptySet("no local maxima to weight against".into()));
    }
    let logs: Vec<f64> = maxima
        .iter()
        .map(|m| {
            -(r - m.r).powi(2) / (2.0 * sigma_r * sigma_r)
                - (theta - m.theta).powi(2) / (2.0 * sigma_a * sigma_a)
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Split `cube` into one weighted cube per maximum.
///
/// The last component is formed as the remainder `s - sum(earlier)`, so the
/// components add back to the input exactly when summed in order.
pub fn apply_spatial_separation(
    cube: &SignalCube,
    maxima: &[LocalMaximum],
    sigma_r: f64,
    sigma_a: f64,
) -> Result<Vec<SignalCube>> {
    if maxima.is_empty() {
        return Err(Error::EmptySet("no local maxima to separate".into()));
    }
    let n = maxima.len();
    let mut out: Vec<SignalCube> = (0..n).map(|_| cube.zeros_like()).collect();
    for r in 0..cube.num_range {
        for a in 0..cube.num_angle() {
            let w = spatial_weights(maxima, cube.range_of(r), cube.angle_grid[a], sigma_r, sigma_a)?;
            let src = cube.series(r, a);
            for t in 0..cube.num_time {
                let mut acc = num_complex::Complex64::default();
                for (m, wm) in w.iter().enumerate().take(n - 1) {
                    let v = src[t] * *wm;
                    out[m].series_mut(r, a)[t] = v;
                    acc += v;
                }
                out[n - 1].series_mut(r, a)[t] = src[t] - acc;
            }
        }
    }
    Ok(out)
}
