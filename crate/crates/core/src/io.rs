//! File formats: binary cubes and volumes with JSON sidecars, CSV point and
//! maxima lists, PGM projections, and JSON documents.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::PointCloud;
use crate::imaging::{ImageGrid, SarImage, Volume};
use crate::scene::Vec3;
use crate::simulator::SignalCube;
use crate::spatial::LocalMaximum;

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn write_f32(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 4 {
        return Err(Error::Size(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub format: String,
    pub layout: String,
    pub num_range: usize,
    pub num_angle: usize,
    pub num_time: usize,
    pub range_bin_size: f64,
    pub range_offset: f64,
    pub angle_grid: Vec<f64>,
    pub sample_rate: f64,
    pub t_start: f64,
}

/// Writes `<stem>.bin` (float32 LE, interleaved re/im) and `<stem>.json`.
pub fn write_cube(stem: &Path, cube: &SignalCube) -> Result<()> {
    cube.validate()?;
    let header = CubeHeader {
        format: "complex-f32-le".into(),
        layout: "range,angle,time".into(),
        num_range: cube.num_range,
        num_angle: cube.num_angle(),
        num_time: cube.num_time,
        range_bin_size: cube.range_bin_size,
        range_offset: cube.range_offset,
        angle_grid: cube.angle_grid.clone(),
        sample_rate: cube.sample_rate,
        t_start: cube.t_start,
    };
    write_json(&with_ext(stem, ".json"), &header)?;
    write_f32(&with_ext(stem, ".bin"), cube.values.iter().flat_map(|v| [v.re, v.im]))
}

pub fn read_cube(stem: &Path) -> Result<SignalCube> {
    let h: CubeHeader = read_json(&with_ext(stem, ".json"))?;
    if h.angle_grid.len() != h.num_angle {
        return Err(Error::Size("angle grid length differs from num_angle".into()));
    }
    let n = h.num_range * h.num_angle * h.num_time;
    let raw = read_f32(&with_ext(stem, ".bin"), 2 * n)?;
    let cube = SignalCube {
        values: raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
        num_range: h.num_range,
        num_time: h.num_time,
        range_bin_size: h.range_bin_size,
        range_offset: h.range_offset,
        angle_grid: h.angle_grid,
        sample_rate: h.sample_rate,
        t_start: h.t_start,
    };
    cube.validate()?;
    Ok(cube)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub format: String,
    pub layout: String,
    pub grid: ImageGrid,
}

/// Writes a real volume as `<stem>.bin` (float32 LE) and `<stem>.json`.
pub fn write_volume(stem: &Path, vol: &Volume) -> Result<()> {
    let header = VolumeHeader {
        format: "real-f32-le".into(),
        layout: "x,y,z".into(),
        grid: vol.grid,
    };
    write_json(&with_ext(stem, ".json"), &header)?;
    write_f32(&with_ext(stem, ".bin"), vol.values.iter().copied())
}

pub fn read_volume(stem: &Path) -> Result<Volume> {
    let h: VolumeHeader = read_json(&with_ext(stem, ".json"))?;
    h.grid.validate()?;
    if h.format != "real-f32-le" {
        return Err(Error::Config(format!("{} is not a real volume", stem.display())));
    }
    let values = read_f32(&with_ext(stem, ".bin"), h.grid.len())?;
    Ok(Volume {
        grid: h.grid,
        values,
    })
}

/// Writes a complex image with the cube convention (interleaved re/im).
pub fn write_image(stem: &Path, img: &SarImage) -> Result<()> {
    let header = VolumeHeader {
        format: "complex-f32-le".into(),
        layout: "x,y,z".into(),
        grid: img.grid,
    };
    write_json(&with_ext(stem, ".json"), &header)?;
    write_f32(&with_ext(stem, ".bin"), img.values.iter().flat_map(|v| [v.re, v.im]))
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    x_m: f64,
    y_m: f64,
    z_m: f64,
}

pub fn write_points_csv(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if cloud.is_empty() {
        w.write_record(["x_m", "y_m", "z_m"]).map_err(csv_err)?;
    }
    for p in &cloud.points {
        w.serialize(PointRow {
            x_m: p.x,
            y_m: p.y,
            z_m: p.z,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv(path: &Path) -> Result<PointCloud> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut points = Vec::new();
    for row in r.deserialize() {
        let row: PointRow = row.map_err(csv_err)?;
        points.push(Vec3::new(row.x_m, row.y_m, row.z_m));
    }
    Ok(PointCloud::new(points))
}

#[derive(Debug, Serialize)]
struct MaximumRow {
    r_m: f64,
    theta_rad: f64,
    power: f64,
}

pub fn write_maxima_csv(path: &Path, maxima: &[LocalMaximum]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if maxima.is_empty() {
        w.write_record(["r_m", "theta_rad", "power"]).map_err(csv_err)?;
    }
    for m in maxima {
        w.serialize(MaximumRow {
            r_m: m.r,
            theta_rad: m.theta,
            power: m.power,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Axis along which a maximum-intensity projection collapses the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Maximum-intensity projection as a row-major image `(rows, cols, values)`.
/// Rows and columns are the two remaining axes in x, y, z order.
pub fn mip(vol: &Volume, axis: Axis) -> (usize, usize, Vec<f64>) {
    let [nx, ny, nz] = vol.grid.dims;
    let (rows, cols) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut out = vec![f64::NEG_INFINITY; rows * cols];
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                let (r, c) = match axis {
                    Axis::X => (iy, iz),
                    Axis::Y => (ix, iz),
                    Axis::Z => (ix, iy),
                };
                let v = vol.values[vol.grid.index(ix, iy, iz)];
                let slot = &mut out[r * cols + c];
                *slot = slot.max(v);
            }
        }
    }
    (rows, cols, out)
}

/// Writes a projection as binary 8-bit PGM scaled to its own maximum.
pub fn write_pgm_mip(path: &Path, vol: &Volume, axis: Axis) -> Result<()> {
    let (rows, cols, values) = mip(vol, axis);
    let top = values.iter().copied().fold(0.0, f64::max);
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{cols} {rows}\n255\n")?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| {
            if top > 0.0 {
                (v.max(0.0) / top * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::CubeAxes;

    #[test]
    fn cube_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let axes = CubeAxes {
            range_bin_size: 0.02,
            range_offset: 0.5,
            num_range: 3,
            angle_grid: vec![1.0, 1.5],
        };
        let mut cube = SignalCube::zeros(&axes, 5, 25.0, 1.5);
        for (i, v) in cube.values.iter_mut().enumerate() {
            *v = Complex64::new(i as f64 * 0.25, -(i as f64));
        }
        let stem = dir.path().join("cube");
        write_cube(&stem, &cube).unwrap();
        assert_eq!(fs::metadata(dir.path().join("cube.bin")).unwrap().len(), 30 * 8);
        assert_eq!(read_cube(&stem).unwrap(), cube);
    }

    #[test]
    fn volume_and_points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::new(Vec3::new(0.0, 0.8, -0.1), Vec3::new(0.1, 0.01, 0.01), [3, 4, 5]).unwrap();
        let mut vol = Volume::zeros(grid);
        vol.values[7] = 2.5;
        let stem = dir.path().join("vol");
        write_volume(&stem, &vol).unwrap();
        assert_eq!(read_volume(&stem).unwrap(), vol);

        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.9, 0.125), Vec3::new(-0.1, 1.0, 0.0)]);
        let path = dir.path().join("p.csv");
        write_points_csv(&path, &cloud).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x_m,y_m,z_m\n"));
        assert_eq!(read_points_csv(&path).unwrap(), cloud);
        write_points_csv(&path, &PointCloud::default()).unwrap();
        assert!(read_points_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn projection_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ImageGrid::new(Vec3::zero(), Vec3::new(1.0, 1.0, 1.0), [2, 3, 4]).unwrap();
        let mut vol = Volume::zeros(grid);
        vol.values[grid.index(1, 2, 3)] = 4.0;
        vol.values[grid.index(0, 2, 3)] = 1.0;
        let (r, c, v) = mip(&vol, Axis::X);
        assert_eq!((r, c), (3, 4));
        assert_eq!(v[2 * 4 + 3], 4.0);
        let path = dir.path().join("m.pgm");
        write_pgm_mip(&path, &vol, Axis::X).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 12);
        assert_eq!(*bytes.last().unwrap(), 255);
    }

    #[test]
    fn maxima_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = LocalMaximum {
            range_bin: 1,
            angle_bin: 2,
            r: 0.9,
            theta: 1.5,
            power: 3.0,
        };
        write_maxima_csv(&path, &[m]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "r_m,theta_rad,power\n0.9,1.5,3.0\n");
    }
}
