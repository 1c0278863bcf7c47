//! Scattering-point extraction and image-quality metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autofocus::volume_sharpness;
use crate::error::{Error, Result};
use crate::imaging::{ImageGrid, SarImage, Volume};
use crate::scene::Vec3;

/// Default point-extraction threshold as a fraction of the global maximum.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(Error::OutOfRange("non-finite point coordinate".into()))
        }
    }

    pub fn translated(&self, by: Vec3) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| *p + by).collect())
    }
}

/// Voxels that are at least `i_th` and strictly greater than every existing
/// neighbour among the 26 around them, at voxel-centre coordinates. Voxels
/// closer than `border` to a face of the grid are skipped.
pub fn extract_scattering_points(vol: &Volume, i_th: f64, border: usize) -> Result<PointCloud> {
    if !(i_th > 0.0) {
        return Err(Error::OutOfRange(format!("threshold must be positive, got {i_th}")));
    }
    let g = &vol.grid;
    let [nx, ny, nz] = g.dims;
    let inside = |i: usize, n: usize| i >= border && i + border < n;
    let mut points = Vec::new();
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                if !(inside(ix, nx) && inside(iy, ny) && inside(iz, nz)) {
                    continue;
                }
                let v = vol.values[g.index(ix, iy, iz)];
                if !(v >= i_th) || !is_strict_max(vol, [ix, iy, iz], v) {
                    continue;
                }
                points.push(g.position(g.index(ix, iy, iz)));
            }
        }
    }
    Ok(PointCloud::new(points))
}

fn is_strict_max(vol: &Volume, at: [usize; 3], v: f64) -> bool {
    let g = &vol.grid;
    for dx in -1i64..=1 {
        for dy in -1i64..=1 {
            for dz in -1i64..=1 {
                if (dx, dy, dz) == (0, 0, 0) {
                    continue;
                }
                let n = [at[0] as i64 + dx, at[1] as i64 + dy, at[2] as i64 + dz];
                if n.iter().zip(g.dims).any(|(&c, d)| c < 0 || c >= d as i64) {
                    continue;
                }
                if vol.values[g.index(n[0] as usize, n[1] as usize, n[2] as usize)] >= v {
                    return false;
                }
            }
        }
    }
    true
}

/// Merges points that lie within half a voxel pitch (per axis) of an existing
/// cluster's centroid; each cluster is replaced by its centroid.
pub fn merge_points(clouds: &[PointCloud], pitch: Vec3) -> PointCloud {
    let half = pitch * 0.5;
    let close = |a: Vec3, b: Vec3| {
        (a.x - b.x).abs() <= half.x + 1e-12
            && (a.y - b.y).abs() <= half.y + 1e-12
            && (a.z - b.z).abs() <= half.z + 1e-12
    };
    let mut clusters: Vec<(Vec3, usize)> = Vec::new();
    for p in clouds.iter().flat_map(|c| &c.points) {
        match clusters.iter_mut().find(|(sum, n)| close(*sum * (1.0 / *n as f64), *p)) {
            Some((sum, n)) => {
                *sum = *sum + *p;
                *n += 1;
            }
            None => clusters.push((*p, 1)),
        }
    }
    PointCloud::new(clusters.into_iter().map(|(s, n)| s * (1.0 / n as f64)).collect())
}

/// Root mean squared nearest-neighbour distance from `est` to `reference`.
pub fn rmse(est: &PointCloud, reference: &PointCloud) -> Result<f64> {
    if est.is_empty() || reference.is_empty() {
        return Err(Error::UndefinedMetric("RMSE needs non-empty clouds".into()));
    }
    let sum: f64 = est
        .points
        .par_iter()
        .map(|p| {
            reference
                .points
                .iter()
                .map(|q| (*p - *q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// Pearson correlation of two equally sized real arrays.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("cannot correlate {} with {} values", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::UndefinedMetric("correlation of a constant image".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation of voxel magnitudes `|I|` of two complex images.
pub fn image_correlation(a: &SarImage, b: &SarImage) -> Result<f64> {
    check_grids(&a.grid, &b.grid)?;
    let ma: Vec<f64> = a.values.iter().map(|v| v.norm()).collect();
    let mb: Vec<f64> = b.values.iter().map(|v| v.norm()).collect();
    correlation(&ma, &mb)
}

/// Correlation of two real volumes on one grid.
pub fn volume_correlation(a: &Volume, b: &Volume) -> Result<f64> {
    check_grids(&a.grid, &b.grid)?;
    let ma: Vec<f64> = a.values.iter().map(|v| v.abs()).collect();
    let mb: Vec<f64> = b.values.iter().map(|v| v.abs()).collect();
    correlation(&ma, &mb)
}

fn check_grids(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape("images are on different grids".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mb_sharpness_conventional: Option<f64>,
    pub mb_sharpness_proposed: Option<f64>,
    pub sharpness_ratio: Option<f64>,
    pub rmse_conventional: Option<f64>,
    pub rmse_proposed: Option<f64>,
    /// Correlation of the proposed images with the motion-free reference.
    pub correlation: Option<f64>,
    pub correlation_conventional: Option<f64>,
    pub window_count: usize,
}

/// Window-averaged sharpness of paired conventional and proposed intensity
/// volumes. Point and correlation metrics are left unset.
pub fn sharpness_report(conventional: &[Volume], proposed: &[Volume]) -> Result<MetricsReport> {
    if conventional.len() != proposed.len() || conventional.is_empty() {
        return Err(Error::Size(format!(
            "{} conventional and {} proposed volumes",
            conventional.len(),
            proposed.len()
        )));
    }
    let mut sc = 0.0;
    let mut sp = 0.0;
    for (c, p) in conventional.iter().zip(proposed) {
        check_grids(&c.grid, &p.grid)?;
        sc += volume_sharpness(c)?;
        sp += volume_sharpness(p)?;
    }
    let n = conventional.len() as f64;
    Ok(MetricsReport {
        mb_sharpness_conventional: Some(sc / n),
        mb_sharpness_proposed: Some(sp / n),
        sharpness_ratio: Some(sp / sc),
        rmse_conventional: None,
        rmse_proposed: None,
        correlation: None,
        correlation_conventional: None,
        window_count: conventional.len(),
    })
}
