//! Time–frequency separation of echoes that share a range–angle bin.

pub mod em;
pub mod mixture;
pub mod stft;

pub use em::{em_fit, select_model, select_model_default, EmFit, EmOptions, ModelSelection};
pub use mixture::{
    doppler_trajectory, gaussian_ridge, mbic, tf_weights, MixtureParams, TrajectoryCoeffs,
    DEFAULT_ALPHA, DEFAULT_SIGMA, MAX_COMPONENTS,
};
pub use stft::{istft, stft, Spectrogram, StftParams};

use crate::error::{Error, Result};
use crate::imaging::TimeWindow;
use crate::simulator::{cube_slice, SignalCube};
use crate::spatial::LocalMaximum;

/// STFT of the maximum's own bin over `window`.
pub fn peak_spectrogram(
    cube: &SignalCube,
    maximum: &LocalMaximum,
    window: &TimeWindow,
    params: StftParams,
) -> Result<Spectrogram> {
    if maximum.range_bin >= cube.num_range || maximum.angle_bin >= cube.num_angle() {
        return Err(Error::OutOfRange(format!(
            "maximum at bin ({}, {}) outside a {}x{} cube",
            maximum.range_bin,
            maximum.angle_bin,
            cube.num_range,
            cube.num_angle()
        )));
    }
    let (k0, n) = cube.window_indices(window)?;
    let series = &cube.series(maximum.range_bin, maximum.angle_bin)[k0..k0 + n];
    stft(series, params, cube.sample_rate, cube.time_of(k0))
}

/// Masks for every component on the spectrogram layout, component-major.
pub fn component_masks(spec: &Spectrogram, params: &MixtureParams) -> Vec<Vec<f64>> {
    let m = params.num_components;
    let mut masks = vec![Vec::with_capacity(spec.values.len()); m];
    for &t in &spec.frame_times {
        for &f in &spec.freqs {
            let w = tf_weights(params, t, f);
            for (mask, wk) in masks.iter_mut().zip(w) {
                mask.push(wk);
            }
        }
    }
    masks
}

/// Splits `cube_n` over `window` into one cube per mixture component by
/// masking every bin's STFT with the component weights fitted at the peak.
/// The returned cubes cover the window only.
pub fn apply_tf_separation(
    cube_n: &SignalCube,
    window: &TimeWindow,
    params: &MixtureParams,
    stft_params: StftParams,
) -> Result<Vec<SignalCube>> {
    params.validate()?;
    stft_params.validate()?;
    let base = cube_slice(cube_n, window)?;
    if params.num_components == 1 {
        return Ok(vec![base]);
    }
    let mut out: Vec<SignalCube> = (0..params.num_components).map(|_| base.zeros_like()).collect();
    let mut masks: Option<Vec<Vec<f64>>> = None;
    for r in 0..base.num_range {
        for a in 0..base.num_angle() {
            let series = base.series(r, a);
            if series.iter().all(|v| v.norm_sqr() == 0.0) {
                continue;
            }
            let spec = stft(series, stft_params, base.sample_rate, base.t_start)?;
            let masks = masks.get_or_insert_with(|| component_masks(&spec, params));
            for (cube, mask) in out.iter_mut().zip(masks.iter()) {
                let part = istft(&spec.masked(mask)?)?;
                cube.series_mut(r, a).copy_from_slice(&part);
            }
        }
    }
    Ok(out)
}
