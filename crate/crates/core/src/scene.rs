//! Scene geometry, radar/scan configuration and the respiratory motion model.
//!
//! Everything here is shared by the echo simulator and by the Doppler
//! trajectory model fitted on spectrograms, so the two stay consistent.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Slack allowed on the scan-interval bounds for accumulated rounding in `t`.
const TIME_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// FMCW array radar parameters. Defaults are a 79 GHz, 3.634 GHz-bandwidth
/// radar with an 8-element receive line at 1.9 mm pitch, sampled at 25 Hz in
/// slow time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Sweep bandwidth in Hz.
    pub bandwidth: f64,
    /// Slow-time sampling rate in Hz.
    pub slow_time_rate: f64,
    pub num_elements: usize,
    /// Element pitch in meters.
    pub element_spacing: f64,
    /// Unit vector along the array baseline.
    #[serde(default = "default_array_axis")]
    pub array_axis: Vec3,
}

fn default_array_axis() -> Vec3 {
    Vec3::new(1.0, 0.0, 0.0)
}

impl Default for RadarConfig {
    fn default() -> Self {
        Self {
            wavelength: SPEED_OF_LIGHT / 79.0e9,
            bandwidth: 3.634e9,
            slow_time_rate: 25.0,
            num_elements: 8,
            element_spacing: 1.9e-3,
            array_axis: default_array_axis(),
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.wavelength > 0.0
            && self.bandwidth > 0.0
            && self.slow_time_rate > 0.0
            && self.num_elements >= 1
            && self.element_spacing > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid radar parameters: {self:?}")));
        }
        if (self.array_axis.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("array_axis must be a unit vector".into()));
        }
        Ok(())
    }

    /// Range resolution c/(2B).
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth)
    }

    /// Offset of element `e` from the array centre along the baseline.
    pub fn element_offset(&self, e: usize) -> f64 {
        (e as f64 - (self.num_elements as f64 - 1.0) / 2.0) * self.element_spacing
    }
}

/// Straight-line antenna scan `x_a(t) = x0 + t v` for `t` in `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTrajectory {
    pub origin: Vec3,
    pub velocity: Vec3,
    pub duration: f64,
}

impl Default for ScanTrajectory {
    fn default() -> Self {
        Self {
            origin: Vec3::new(0.0, 0.0, -0.45),
            velocity: Vec3::new(0.0, 0.0, 9.9e-3),
            duration: 85.0,
        }
    }
}

impl ScanTrajectory {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !(self.velocity.norm() > 0.0) {
            return Err(Error::Config(
                "scan needs positive duration and non-zero velocity".into(),
            ));
        }
        if !self.origin.is_finite() || !self.velocity.is_finite() {
            return Err(Error::Config("scan origin/velocity must be finite".into()));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = TIME_SLACK * self.duration.max(1.0);
        if !(t >= -slack && t <= self.duration + slack) {
            return Err(Error::OutOfRange(format!(
                "t = {t} s outside scan interval [0, {}]",
                self.duration
            )));
        }
        Ok(())
    }

    /// Position without the interval check, for callers that already validated `t`.
    pub fn position_unchecked(&self, t: f64) -> Vec3 {
        self.origin + self.velocity * t
    }
}

pub fn antenna_position(traj: &ScanTrajectory, t: f64) -> Result<Vec3> {
    traj.check_time(t)?;
    Ok(traj.position_unchecked(t))
}

/// Truncated Fourier-series displacement `d(t) = sum_n Re[c_n exp(j n w t)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespiratoryMotion {
    /// Fundamental angular frequency in rad/s.
    pub omega_r: f64,
    /// Harmonic coefficients `c_0..c_K` in meters, serialized as `[re, im]`.
    pub coeffs: Vec<Complex64>,
}

impl RespiratoryMotion {
    pub fn stationary() -> Self {
        Self {
            omega_r: 0.0,
            coeffs: Vec::new(),
        }
    }

    /// Single-harmonic breathing at `f_r` Hz with peak amplitude `amplitude`
    /// meters and phase `phase` radians.
    pub fn sinusoidal(f_r: f64, amplitude: f64, phase: f64) -> Self {
        Self {
            omega_r: 2.0 * std::f64::consts::PI * f_r,
            coeffs: vec![Complex64::new(0.0, 0.0), Complex64::from_polar(amplitude, phase)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_r >= 0.0) || !self.omega_r.is_finite() {
            return Err(Error::Config("omega_r must be finite and >= 0".into()));
        }
        if self.coeffs.iter().any(|c| !c.norm().is_finite()) {
            return Err(Error::Config("motion coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn displacement(&self, t: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| (c * Complex64::cis(self.omega_r * n as f64 * t)).re)
            .sum()
    }

    /// Time derivative of [`displacement`](Self::displacement), m/s.
    pub fn velocity(&self, t: f64) -> f64 {
        self.omega_r
            * self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, c)| {
                    n as f64 * (Complex64::i() * c * Complex64::cis(self.omega_r * n as f64 * t)).re
                })
                .sum::<f64>()
    }
}

pub fn respiratory_displacement(m: &RespiratoryMotion, t: f64) -> f64 {
    m.displacement(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Vec3,
    pub reflectivity: f64,
    #[serde(default = "RespiratoryMotion::stationary")]
    pub motion: RespiratoryMotion,
}

impl Scatterer {
    pub fn stationary(position: Vec3, reflectivity: f64) -> Self {
        Self {
            position,
            reflectivity,
            motion: RespiratoryMotion::stationary(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
    /// Standard deviation of the circular complex noise added per cube sample.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !(s.reflectivity >= 0.0) || !s.position.is_finite() {
                return Err(Error::Config(format!("scatterer {i} is invalid")));
            }
            s.motion.validate()?;
        }
        Ok(())
    }

    /// Copy of the scene with all motion removed except the static offset `c_0`.
    pub fn frozen(&self) -> Scene {
        let mut out = self.clone();
        for s in &mut out.scatterers {
            let c0 = s.motion.coeffs.first().copied().unwrap_or_default();
            s.motion = RespiratoryMotion {
                omega_r: 0.0,
                coeffs: vec![c0],
            };
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `R(t) = |x_a(t) - x_t| + d(t)`.
pub fn range_to(traj: &ScanTrajectory, s: &Scatterer, t: f64) -> Result<f64> {
    traj.check_time(t)?;
    let r = (traj.position_unchecked(t) - s.position).norm() + s.motion.displacement(t);
    if !(r > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "non-positive range {r} m at t = {t} s"
        )));
    }
    Ok(r)
}

/// Angle in `[0, pi]` between the array baseline and the line of sight from
/// the antenna to `x`; broadside is `pi/2`.
pub fn azimuth_to(traj: &ScanTrajectory, array_axis: Vec3, x: Vec3, t: f64) -> Result<f64> {
    traj.check_time(t)?;
    azimuth_from(traj.position_unchecked(t), array_axis, x)
}

pub(crate) fn azimuth_from(antenna: Vec3, array_axis: Vec3, x: Vec3) -> Result<f64> {
    let los = x - antenna;
    let n = los.norm();
    if !(n > 0.0) {
        return Err(Error::DegenerateGeometry("zero-length line of sight".into()));
    }
    Ok((los.dot(array_axis) / n).clamp(-1.0, 1.0).acos())
}

/// Doppler frequency `(2/lambda) dR/dt`, the sum of the scan-induced and the
/// respiration-induced terms.
pub fn instantaneous_doppler(
    traj: &ScanTrajectory,
    s: &Scatterer,
    t: f64,
    wavelength: f64,
) -> Result<f64> {
    traj.check_time(t)?;
    let rel = traj.position_unchecked(t) - s.position;
    let dist = rel.norm();
    if !(dist > 0.0) {
        return Err(Error::DegenerateGeometry(
            "antenna coincides with scatterer".into(),
        ));
    }
    let scan = traj.velocity.dot(rel) / dist;
    Ok(2.0 / wavelength * (scan + s.motion.velocity(t)))
}
