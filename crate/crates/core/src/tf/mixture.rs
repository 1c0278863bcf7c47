//! Gaussian-ridge mixture model over the time–frequency plane.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ridge width, Hz.
pub const DEFAULT_SIGMA: f64 = 0.3;
/// Default information-criterion penalty weight.
pub const DEFAULT_ALPHA: f64 = 32.0;
pub const MAX_COMPONENTS: usize = 2;

/// Doppler trajectory coefficients in Hz:
/// `[Re c0, Re c1, Im c1, Re c2, Im c2, c_lin]` (the last in Hz/s).
pub type TrajectoryCoeffs = [f64; 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    #[serde(rename = "M")]
    pub num_components: usize,
    pub pi: Vec<f64>,
    #[serde(rename = "omega_r_rad_s")]
    pub omega_r: f64,
    #[serde(rename = "C")]
    pub coeffs: Vec<TrajectoryCoeffs>,
    #[serde(rename = "sigma_hz")]
    pub sigma: f64,
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        let m = self.num_components;
        if m == 0 || m > MAX_COMPONENTS {
            return Err(Error::Config(format!("component count {m} outside 1..={MAX_COMPONENTS}")));
        }
        if self.pi.len() != m || self.coeffs.len() != m {
            return Err(Error::Size(format!(
                "{m} components but {} weights and {} trajectories",
                self.pi.len(),
                self.coeffs.len()
            )));
        }
        if self.pi.iter().any(|p| !(*p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::OutOfRange(format!("mixture weights {:?} do not sum to 1", self.pi)));
        }
        if !(self.sigma > 0.0) || !self.omega_r.is_finite() {
            return Err(Error::OutOfRange(format!(
                "sigma {} and omega_r {} must be positive and finite",
                self.sigma, self.omega_r
            )));
        }
        if self.coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::OutOfRange("non-finite trajectory coefficient".into()));
        }
        Ok(())
    }

    pub fn trajectory(&self, m: usize, t: f64) -> f64 {
        doppler_trajectory(self.omega_r, &self.coeffs[m], t)
    }

    /// Free parameter count: six per trajectory, M-1 weights, shared omega_r.
    pub fn num_free_params(&self) -> usize {
        num_free_params(self.num_components)
    }
}

pub fn num_free_params(m: usize) -> usize {
    6 * m + (m - 1) + 1
}

/// `f_D(t) = sum_{n=0..2} Re[c_n e^{j n omega t}] + c_lin t`.
pub fn doppler_trajectory(omega_r: f64, c: &TrajectoryCoeffs, t: f64) -> f64 {
    let (s1, c1) = (omega_r * t).sin_cos();
    let (s2, c2) = (2.0 * omega_r * t).sin_cos();
    c[0] + c[1] * c1 - c[2] * s1 + c[3] * c2 - c[4] * s2 + c[5] * t
}

/// Unit-area Gaussian in `f` centred on the trajectory.
pub fn gaussian_ridge(t: f64, f: f64, omega_r: f64, c: &TrajectoryCoeffs, sigma: f64) -> f64 {
    log_gaussian_ridge(t, f, omega_r, c, sigma).exp()
}

pub(crate) fn log_gaussian_ridge(
    t: f64,
    f: f64,
    omega_r: f64,
    c: &TrajectoryCoeffs,
    sigma: f64,
) -> f64 {
    let d = f - doppler_trajectory(omega_r, c, t);
    -d * d / (2.0 * sigma * sigma) - ((2.0 * PI).sqrt() * sigma).ln()
}

/// `-2L + alpha * N_p * ln(N_s)`.
pub fn mbic(log_likelihood: f64, num_params: usize, num_samples: f64, alpha: f64) -> f64 {
    -2.0 * log_likelihood + alpha * num_params as f64 * num_samples.ln()
}

/// Posterior component weights at `(t, f)`; they sum to one.
pub fn tf_weights(params: &MixtureParams, t: f64, f: f64) -> Vec<f64> {
    let m = params.num_components;
    if m == 1 {
        return vec![1.0];
    }
    let logs: Vec<f64> = (0..m)
        .map(|k| params.pi[k].ln() + log_gaussian_ridge(t, f, params.omega_r, &params.coeffs[k], params.sigma))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        // every weight is zero: assign to the nearest trajectory
        let nearest = (0..m)
            .min_by(|&a, &b| {
                let da = (f - params.trajectory(a, t)).abs();
                let db = (f - params.trajectory(b, t)).abs();
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        return (0..m).map(|k| if k == nearest { 1.0 } else { 0.0 }).collect();
    }
    let mut w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(pi: [f64; 2], c0: [f64; 2]) -> MixtureParams {
        MixtureParams {
            num_components: 2,
            pi: pi.to_vec(),
            omega_r: 1.5,
            coeffs: vec![[c0[0], 0.0, 0.0, 0.0, 0.0, 0.0], [c0[1], 0.0, 0.0, 0.0, 0.0, 0.0]],
            sigma: DEFAULT_SIGMA,
        }
    }

    #[test]
    fn trajectory_basics() {
        assert_eq!(doppler_trajectory(1.3, &[0.0; 6], 4.2), 0.0);
        let lin = [0.0, 0.0, 0.0, 0.0, 0.0, 0.05];
        assert!((doppler_trajectory(1.0, &lin, 10.0) - 0.5).abs() < 1e-15);
        let c = [0.1, 0.4, -0.2, 0.05, 0.3, -0.01];
        let (w, t) = (1.7, 3.3);
        let direct = 0.1
            + (num_complex::Complex64::new(0.4, -0.2) * num_complex::Complex64::cis(w * t)).re
            + (num_complex::Complex64::new(0.05, 0.3) * num_complex::Complex64::cis(2.0 * w * t)).re
            - 0.01 * t;
        assert!((doppler_trajectory(w, &c, t) - direct).abs() < 1e-14);
    }

    #[test]
    fn ridge_peak_and_width() {
        let c = [0.7, 0.2, 0.1, 0.0, 0.0, 0.0];
        let (w, t, s) = (1.2, 2.0, 0.3);
        let fd = doppler_trajectory(w, &c, t);
        let peak = 1.0 / ((2.0 * PI).sqrt() * s);
        assert!((gaussian_ridge(t, fd, w, &c, s) - peak).abs() < 1e-12);
        let side = gaussian_ridge(t, fd + s, w, &c, s);
        assert!((side - peak * (-0.5f64).exp()).abs() < 1e-12);
        assert!((gaussian_ridge(t, fd - s, w, &c, s) - side).abs() < 1e-14);
    }

    #[test]
    fn ridge_integrates_to_one() {
        let c = [0.4, -0.3, 0.2, 0.0, 0.1, 0.02];
        let (lo, hi, n) = (-10.0, 10.0, 200_000);
        let h = (hi - lo) / n as f64;
        // composite Simpson
        let mut acc = 0.0;
        for k in 0..=n {
            let f = lo + k as f64 * h;
            let wgt = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += wgt * gaussian_ridge(1.1, f, 1.4, &c, 0.3);
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mbic_arithmetic() {
        assert!((mbic(0.0, 8, std::f64::consts::E, 32.0) - 256.0).abs() < 1e-12);
        assert_eq!(mbic(-12.5, 8, 100.0, 0.0), 25.0);
        assert!(mbic(-3.0, 9, 50.0, DEFAULT_ALPHA) > mbic(-3.0, 8, 50.0, DEFAULT_ALPHA));
        assert_eq!(num_free_params(1), 7);
        assert_eq!(num_free_params(2), 14);
    }

    #[test]
    fn weights_single_and_symmetric() {
        let one = MixtureParams {
            num_components: 1,
            pi: vec![1.0],
            omega_r: 1.0,
            coeffs: vec![[0.0; 6]],
            sigma: 0.3,
        };
        assert_eq!(tf_weights(&one, 1.0, 5.0), vec![1.0]);
        let w = tf_weights(&two([0.5, 0.5], [-1.0, 1.0]), 0.7, 0.0);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weights_far_from_both_ridges_stay_normalized() {
        let w = tf_weights(&two([0.3, 0.7], [-1.0, 1.0]), 0.0, 400.0);
        assert_eq!(w, vec![0.0, 1.0]);
        let w = tf_weights(&two([0.3, 0.7], [-1.0, 1.0]), 0.0, -400.0);
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn validate_rejects_bad_params() {
        assert!(two([0.5, 0.5], [0.0, 1.0]).validate().is_ok());
        assert!(two([0.5, 0.6], [0.0, 1.0]).validate().is_err());
        let mut p = two([0.5, 0.5], [0.0, 1.0]);
        p.sigma = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn json_field_names() {
        let v = serde_json::to_value(two([0.5, 0.5], [0.0, 1.0])).unwrap();
        for key in ["M", "pi", "omega_r_rad_s", "C", "sigma_hz"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
