//! Short-time Fourier transform with a periodic Hann window and exact
//! overlap-add inversion.
//!
//! Frames are laid out so that every input sample is covered by the same
//! number of frames: the first frame starts `window_len - hop` samples before
//! the series and the last one starts at or before its final sample. Samples
//! outside the series are treated as zero. The inverse therefore reconstructs
//! the whole series, not just an interior.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub fft_len: usize,
}

impl Default for StftParams {
    /// 0.96 s Hann window, 0.16 s hop, 64-point transform at 25 Hz.
    fn default() -> Self {
        Self {
            window_len: 24,
            hop: 4,
            fft_len: 64,
        }
    }
}

impl StftParams {
    /// Checks sizes and the constant-overlap-add property of the Hann window.
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "need 0 < hop <= window_len and window_len >= 2, got {self:?}"
            )));
        }
        if self.fft_len < self.window_len {
            return Err(Error::Config(format!(
                "fft_len {} shorter than window {}",
                self.fft_len, self.window_len
            )));
        }
        let w = hann(self.window_len);
        let sums: Vec<f64> = (0..self.hop)
            .map(|k| w.iter().skip(k).step_by(self.hop).sum())
            .collect();
        let reference = sums[0];
        if sums.iter().any(|s| (s - reference).abs() > 1e-9 * reference) {
            return Err(Error::Config(format!(
                "Hann window of {} samples is not constant-overlap-add at hop {}",
                self.window_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn num_frames(&self, len: usize) -> usize {
        // starts at -(N - R), -(N - R) + R, ... while start <= len - 1
        (len + self.window_len - self.hop - 1) / self.hop + 1
    }

    fn frame_start(&self, i: usize) -> i64 {
        i as i64 * self.hop as i64 - (self.window_len - self.hop) as i64
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Frame-major, frequency bins in ascending order (zero at the centre).
    pub values: Vec<Complex64>,
    pub params: StftParams,
    /// Centre time of each frame, seconds.
    pub frame_times: Vec<f64>,
    /// Two-sided frequency axis, Hz.
    pub freqs: Vec<f64>,
    /// Length of the analysed series.
    pub series_len: usize,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frame_times.len()
    }

    pub fn num_freqs(&self) -> usize {
        self.freqs.len()
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.values[frame * self.num_freqs() + bin]
    }

    /// `|S(t, f)|^2`.
    pub fn power(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Multiplies every cell by a real mask of the same layout.
    pub fn masked(&self, mask: &[f64]) -> Result<Spectrogram> {
        if mask.len() != self.values.len() {
            return Err(Error::Size(format!(
                "mask has {} cells, spectrogram {}",
                mask.len(),
                self.values.len()
            )));
        }
        let mut out = self.clone();
        out.values.iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
        Ok(out)
    }
}

/// Frequency of shifted bin `k` for a transform of length `n`.
fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    (k as f64 - (n / 2) as f64) * sample_rate / n as f64
}

/// STFT of `series` sampled at `sample_rate` whose first sample is at `t0`.
pub fn stft(
    series: &[Complex64],
    params: StftParams,
    sample_rate: f64,
    t0: f64,
) -> Result<Spectrogram> {
    params.validate()?;
    if series.len() < params.window_len {
        return Err(Error::Size(format!(
            "series of {} samples shorter than window {}",
            series.len(),
            params.window_len
        )));
    }
    let n = params.fft_len;
    let w = hann(params.window_len);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let frames = params.num_frames(series.len());
    let half = n / 2;
    let mut values = Vec::with_capacity(frames * n);
    let mut frame_times = Vec::with_capacity(frames);
    let mut buf = vec![Complex64::default(); n];
    for i in 0..frames {
        let start = params.frame_start(i);
        buf.iter_mut().for_each(|v| *v = Complex64::default());
        for (k, wk) in w.iter().enumerate() {
            let idx = start + k as i64;
            if idx >= 0 && (idx as usize) < series.len() {
                buf[k] = series[idx as usize] * *wk;
            }
        }
        fft.process(&mut buf);
        // fftshift so bins run from -fs/2 upwards
        values.extend(buf[half..].iter().chain(&buf[..half]).copied());
        let centre = start as f64 + params.window_len as f64 / 2.0;
        frame_times.push(t0 + centre / sample_rate);
    }
    Ok(Spectrogram {
        values,
        params,
        frame_times,
        freqs: (0..n).map(|k| bin_frequency(k, n, sample_rate)).collect(),
        series_len: series.len(),
    })
}

/// Overlap-add inverse of [`stft`], normalised by the summed analysis window.
pub fn istft(spec: &Spectrogram) -> Result<Vec<Complex64>> {
    let params = spec.params;
    params.validate()?;
    let n = params.fft_len;
    if spec.num_freqs() != n || spec.num_frames() != params.num_frames(spec.series_len) {
        return Err(Error::Shape("spectrogram layout does not match its parameters".into()));
    }
    let w = hann(params.window_len);
    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let half = n / 2;
    let mut out = vec![Complex64::default(); spec.series_len];
    let mut norm = vec![0.0; spec.series_len];
    let mut buf = vec![Complex64::default(); n];
    for i in 0..spec.num_frames() {
        let row = &spec.values[i * n..(i + 1) * n];
        // undo the shift
        buf[half..].copy_from_slice(&row[..n - half]);
        buf[..half].copy_from_slice(&row[n - half..]);
        ifft.process(&mut buf);
        let start = params.frame_start(i);
        for (k, wk) in w.iter().enumerate() {
            let idx = start + k as i64;
            if idx >= 0 && (idx as usize) < spec.series_len {
                out[idx as usize] += buf[k] / n as f64;
                norm[idx as usize] += *wk;
            }
        }
    }
    for (v, s) in out.iter_mut().zip(&norm) {
        *v /= *s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_series(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn max_rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
    }

    #[test]
    fn default_params_are_cola() {
        StftParams::default().validate().unwrap();
        let bad = StftParams {
            window_len: 24,
            hop: 24,
            fft_len: 64,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = StftParams {
            window_len: 100,
            hop: 12,
            fft_len: 256,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn on_bin_tone_peaks_at_its_frequency() {
        let p = StftParams::default();
        let fs = 25.0;
        let f0 = 5.0 * fs / p.fft_len as f64;
        let x: Vec<Complex64> = (0..200)
            .map(|k| Complex64::cis(2.0 * PI * f0 * k as f64 / fs))
            .collect();
        let s = stft(&x, p, fs, 0.0).unwrap();
        // frames fully inside the series
        for i in 5..s.num_frames() - 5 {
            let best = (0..s.num_freqs())
                .max_by(|&a, &b| s.get(i, a).norm().total_cmp(&s.get(i, b).norm()))
                .unwrap();
            assert!((s.freqs[best] - f0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_series_gives_zero_spectrogram() {
        let s = stft(&vec![Complex64::default(); 50], StftParams::default(), 25.0, 0.0).unwrap();
        assert!(s.values.iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn short_series_is_rejected() {
        let r = stft(&vec![Complex64::default(); 10], StftParams::default(), 25.0, 0.0);
        assert!(matches!(r, Err(Error::Size(_))));
    }

    #[test]
    fn chirp_ridge_tracks_instantaneous_frequency() {
        let p = StftParams {
            window_len: 24,
            hop: 4,
            fft_len: 256,
        };
        let fs = 25.0;
        let (f0, rate) = (-4.0, 1.0);
        let x: Vec<Complex64> = (0..200)
            .map(|k| {
                let t = k as f64 / fs;
                Complex64::cis(2.0 * PI * (f0 * t + 0.5 * rate * t * t))
            })
            .collect();
        let s = stft(&x, p, fs, 0.0).unwrap();
        let bin = fs / p.fft_len as f64;
        for i in 6..s.num_frames() - 6 {
            let best = (0..s.num_freqs())
                .max_by(|&a, &b| s.get(i, a).norm().total_cmp(&s.get(i, b).norm()))
                .unwrap();
            let inst = f0 + rate * s.frame_times[i];
            assert!((s.freqs[best] - inst).abs() <= bin, "frame {i}");
        }
    }

    #[test]
    fn round_trip_reconstructs_everything() {
        let x = random_series(200, 4);
        let s = stft(&x, StftParams::default(), 25.0, 3.0).unwrap();
        let y = istft(&s).unwrap();
        assert!(max_rel_err(&y, &x) <= 1e-10);
    }

    #[test]
    fn complementary_masks_sum_to_input() {
        let x = random_series(137, 9);
        let s = stft(&x, StftParams::default(), 25.0, 0.0).unwrap();
        let ones = vec![1.0; s.values.len()];
        assert!(max_rel_err(&istft(&s.masked(&ones).unwrap()).unwrap(), &x) <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Vec<f64> = (0..s.values.len()).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
        let a = istft(&s.masked(&m).unwrap()).unwrap();
        let b = istft(&s.masked(&c).unwrap()).unwrap();
        let sum: Vec<Complex64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
        assert!(max_rel_err(&sum, &x) <= 1e-10);
    }

    #[test]
    fn frame_times_are_centred() {
        let p = StftParams::default();
        let s = stft(&random_series(40, 0), p, 25.0, 10.0).unwrap();
        assert_eq!(s.num_frames(), p.num_frames(40));
        let first = 10.0 + (-(20.0) + 12.0) / 25.0;
        assert!((s.frame_times[0] - first).abs() < 1e-12);
        assert!((s.frame_times[1] - s.frame_times[0] - 4.0 / 25.0).abs() < 1e-12);
    }
}
