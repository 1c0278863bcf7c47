//! Sliding-window driver: per-window echo separation, autofocus and fusion,
//! the conventional baseline, and the aggregate report.

use std::ops::Range;
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autofocus::{
    footprint_voxels, integrate_images, optimize_kernel_phase, phase_from_trajectory,
    volume_sharpness, AutofocusOptions, PhaseCoeffs,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    extract_scattering_points, merge_points, rmse, volume_correlation, MetricsReport, PointCloud,
    DEFAULT_THRESHOLD_FRACTION,
};
use crate::imaging::{BackprojectionGeometry, ImageGrid, TimeWindow, Volume};
use crate::io;
use crate::scene::{RadarConfig, ScanTrajectory, Scene, Vec3};
use crate::simulator::{cube_slice, simulate_cube, CubeAxes, SignalCube};
use crate::spatial::{
    apply_spatial_separation, find_local_maxima, power_map, LocalMaximum, ThresholdPolicy,
    DEFAULT_SIGMA_ANGLE, DEFAULT_SIGMA_RANGE,
};
use crate::tf::{
    apply_tf_separation, peak_spectrogram, select_model, EmOptions, MixtureParams, StftParams,
    DEFAULT_ALPHA, DEFAULT_SIGMA, MAX_COMPONENTS,
};

/// Imaging grid shared by all windows. With `follow_scan` the grid's z extent
/// is instead centred on the antenna at each window centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: [usize; 3],
    #[serde(default)]
    pub follow_scan: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            origin: Vec3::new(-0.1, 0.8, -0.4),
            spacing: Vec3::new(0.1, 0.01, 0.01),
            dims: [3, 31, 66],
            follow_scan: false,
        }
    }
}

impl GridConfig {
    /// Grid for a window whose antenna sits at height `z_center`.
    pub fn grid_at(&self, z_center: f64) -> Result<ImageGrid> {
        let grid = ImageGrid::new(self.origin, self.spacing, self.dims)?;
        Ok(if self.follow_scan {
            grid.recentered_z(z_center)
        } else {
            grid
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Scene JSON; relative paths resolve against the config file.
    pub scene: Option<PathBuf>,
    pub radar: RadarConfig,
    pub scan: ScanTrajectory,
    /// Window length, seconds.
    pub window_length: f64,
    /// Overlap of consecutive windows, seconds.
    pub overlap: f64,
    /// Range span of the simulated cube, meters.
    pub cube_range: [f64; 2],
    pub grid: GridConfig,
    pub detection: ThresholdPolicy,
    pub sigma_range: f64,
    pub sigma_angle: f64,
    pub stft: StftParams,
    pub sigma_hz: f64,
    pub alpha: f64,
    pub max_components: usize,
    pub em: EmOptions,
    pub autofocus: AutofocusOptions,
    /// Point threshold as a fraction of the global maximum across windows.
    pub point_threshold_fraction: f64,
    /// Voxels this close to a grid face are not extracted as points.
    pub point_border: usize,
    pub output_dir: Option<PathBuf>,
    /// Overrides the scene's noise seed.
    pub seed: Option<u64>,
    pub write_window_artifacts: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: None,
            radar: RadarConfig::default(),
            scan: ScanTrajectory::default(),
            window_length: 8.0,
            overlap: 7.2,
            cube_range: [0.6, 1.3],
            grid: GridConfig::default(),
            detection: ThresholdPolicy::default(),
            sigma_range: DEFAULT_SIGMA_RANGE,
            sigma_angle: DEFAULT_SIGMA_ANGLE,
            stft: StftParams::default(),
            sigma_hz: DEFAULT_SIGMA,
            alpha: DEFAULT_ALPHA,
            max_components: MAX_COMPONENTS,
            em: EmOptions::default(),
            autofocus: AutofocusOptions::default(),
            point_threshold_fraction: DEFAULT_THRESHOLD_FRACTION,
            point_border: 1,
            output_dir: None,
            seed: None,
            write_window_artifacts: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig = io::read_json(path)?;
        if let (Some(scene), Some(dir)) = (&cfg.scene, path.parent()) {
            if scene.is_relative() {
                cfg.scene = Some(dir.join(scene));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.radar.validate()?;
        self.scan.validate()?;
        self.stft.validate()?;
        self.em.validate()?;
        if !(self.overlap >= 0.0 && self.overlap < self.window_length) {
            return Err(Error::Config(format!(
                "overlap {} must lie in [0, window_length {})",
                self.overlap, self.window_length
            )));
        }
        if !(self.cube_range[0] > 0.0 && self.cube_range[1] > self.cube_range[0]) {
            return Err(Error::Config(format!("invalid cube range {:?}", self.cube_range)));
        }
        if !(self.sigma_range > 0.0 && self.sigma_angle > 0.0 && self.sigma_hz > 0.0) {
            return Err(Error::Config("separation widths must be positive".into()));
        }
        if self.max_components == 0 || self.max_components > MAX_COMPONENTS {
            return Err(Error::Config(format!(
                "max_components must be in 1..={MAX_COMPONENTS}"
            )));
        }
        if !(self.point_threshold_fraction > 0.0) {
            return Err(Error::Config("point threshold fraction must be positive".into()));
        }
        self.grid.grid_at(0.0)?;
        Ok(())
    }

    pub fn load_scene(&self) -> Result<Scene> {
        let path = self
            .scene
            .as_ref()
            .ok_or_else(|| Error::Config("no scene file configured".into()))?;
        let mut scene = Scene::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(seed) = self.seed {
            scene.rng_seed = seed;
        }
        Ok(scene)
    }

    pub fn plan(&self) -> Result<Vec<TimeWindow>> {
        plan_windows(self.scan.duration, self.window_length, self.overlap)
    }
}

/// Windows of length `length` starting at 0 and stepping by
/// `length - overlap` while they fit inside `[0, total]`.
pub fn plan_windows(total: f64, length: f64, overlap: f64) -> Result<Vec<TimeWindow>> {
    if !(length > 0.0) || !(overlap >= 0.0 && overlap < length) {
        return Err(Error::Config(format!(
            "need 0 <= overlap < length, got overlap {overlap}, length {length}"
        )));
    }
    if length > total + 1e-9 {
        return Err(Error::Config(format!(
            "window of {length} s longer than the {total} s scan"
        )));
    }
    let stride = length - overlap;
    let count = ((total - length) / stride + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|i| TimeWindow::new(i as f64 * stride + length / 2.0, length))
        .collect()
}

/// Processing stages invoked along one path, summed over windows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub backprojection: usize,
    pub power_map: usize,
    pub spatial_separation: usize,
    pub tf_fit: usize,
    pub tf_separation: usize,
    pub phase_optimization: usize,
    pub fusion: usize,
}

impl std::ops::AddAssign for StageCounters {
    fn add_assign(&mut self, o: Self) {
        self.backprojection += o.backprojection;
        self.power_map += o.power_map;
        self.spatial_separation += o.spatial_separation;
        self.tf_fit += o.tf_fit;
        self.tf_separation += o.tf_separation;
        self.phase_optimization += o.phase_optimization;
        self.fusion += o.fusion;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathCounters {
    pub conventional: StageCounters,
    pub proposed: StageCounters,
    pub reference: StageCounters,
}

impl std::ops::AddAssign for PathCounters {
    fn add_assign(&mut self, o: Self) {
        self.conventional += o.conventional;
        self.proposed += o.proposed;
        self.reference += o.reference;
    }
}

/// Model selected for one local maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    #[serde(flatten)]
    pub params: MixtureParams,
    pub mbic: f64,
    pub loglik: f64,
}

/// Autofocus outcome for echo `(n, m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSummary {
    pub n: usize,
    pub m: usize,
    pub sharpness_before: f64,
    pub sharpness_after: f64,
    pub phase_coeffs: PhaseCoeffs,
}

/// Persisted description of one processed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    pub start_s: f64,
    pub grid: ImageGrid,
    pub maxima: usize,
    pub echoes: usize,
    pub sharpness_conventional: Option<f64>,
    pub sharpness_proposed: Option<f64>,
    pub correlation_proposed: Option<f64>,
    pub correlation_conventional: Option<f64>,
    pub warnings: Vec<String>,
    pub counters: PathCounters,
}

#[derive(Debug, Clone)]
pub struct WindowOutcome {
    pub record: WindowRecord,
    pub conventional: Volume,
    pub proposed: Volume,
    pub reference: Option<Volume>,
    pub maxima: Vec<LocalMaximum>,
    pub fits: Vec<FitSummary>,
    pub echoes: Vec<EchoSummary>,
}

/// Window that could not be processed, with the failing stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedWindow {
    pub index: usize,
    pub stage: String,
    pub message: String,
    pub counters: PathCounters,
}

pub struct Simulation {
    pub scene: Scene,
    pub cube: SignalCube,
    /// Noise-free cube of the scene with breathing removed.
    pub reference: SignalCube,
    pub truth: PointCloud,
}

pub fn simulate(cfg: &PipelineConfig, scene: &Scene) -> Result<Simulation> {
    scene.validate()?;
    let axes = CubeAxes::for_radar(&cfg.radar, cfg.cube_range[0], cfg.cube_range[1])?;
    let cube = simulate_cube(scene, &cfg.radar, &cfg.scan, &axes)?;
    let mut still = scene.frozen();
    still.noise_sigma = 0.0;
    let reference = simulate_cube(&still, &cfg.radar, &cfg.scan, &axes)?;
    let truth = PointCloud::new(scene.scatterers.iter().map(|s| s.position).collect());
    Ok(Simulation {
        scene: scene.clone(),
        cube,
        reference,
        truth,
    })
}

/// One progress event: window `window` (1-based) of `total` entered `stage`.
#[derive(Debug, Clone, Copy)]
pub struct Progress<'a> {
    pub window: usize,
    pub total: usize,
    pub stage: &'a str,
}

pub type ProgressFn<'a> = &'a (dyn Fn(Progress<'_>) + Sync);

pub struct FocusRun {
    pub planned: usize,
    pub outcomes: Vec<std::result::Result<WindowOutcome, SkippedWindow>>,
}

impl FocusRun {
    pub fn counters(&self) -> PathCounters {
        let mut c = PathCounters::default();
        for o in &self.outcomes {
            c += match o {
                Ok(w) => w.record.counters,
                Err(s) => s.counters,
            };
        }
        c
    }
}

struct StageError {
    stage: &'static str,
    error: Error,
}

fn tag(stage: &'static str) -> impl FnOnce(Error) -> StageError {
    move |error| StageError { stage, error }
}

struct WindowContext<'a> {
    cfg: &'a PipelineConfig,
    cube: &'a SignalCube,
    reference: Option<&'a SignalCube>,
    seed: u64,
    progress: ProgressFn<'a>,
    total: usize,
}

/// Runs every selected window. Windows are independent and processed in
/// parallel; outcomes come back in window order.
pub fn focus_windows(
    cfg: &PipelineConfig,
    cube: &SignalCube,
    reference: Option<&SignalCube>,
    seed: u64,
    selection: Option<Range<usize>>,
    progress: ProgressFn<'_>,
) -> Result<FocusRun> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let planned = plan.len();
    let range = selection.unwrap_or(0..planned);
    if range.start >= range.end || range.end > planned {
        return Err(Error::Config(format!(
            "window selection {range:?} outside 0..{planned}"
        )));
    }
    let ctx = WindowContext {
        cfg,
        cube,
        reference,
        seed,
        progress,
        total: planned,
    };
    let outcomes = range
        .collect::<Vec<usize>>()
        .into_par_iter()
        .map(|i| {
            let mut counters = PathCounters::default();
            process_window(&ctx, i, &plan[i], &mut counters).map_err(|e| {
                warn!("window {} skipped at stage {}: {}", i + 1, e.stage, e.error);
                SkippedWindow {
                    index: i,
                    stage: e.stage.to_string(),
                    message: e.error.to_string(),
                    counters,
                }
            })
        })
        .collect();
    Ok(FocusRun { planned, outcomes })
}

fn process_window(
    ctx: &WindowContext<'_>,
    index: usize,
    window: &TimeWindow,
    counters: &mut PathCounters,
) -> std::result::Result<WindowOutcome, StageError> {
    let cfg = ctx.cfg;
    let report = |stage: &str| {
        (ctx.progress)(Progress {
            window: index + 1,
            total: ctx.total,
            stage,
        })
    };
    let z_center = cfg.scan.position_unchecked(window.center).z;
    let grid = cfg.grid.grid_at(z_center).map_err(tag("grid"))?;
    let cube_w = cube_slice(ctx.cube, window).map_err(tag("slice"))?;
    let all: Vec<usize> = (0..grid.len()).collect();
    let geometry = BackprojectionGeometry::new(&cube_w, &cfg.radar, &cfg.scan, &grid, window, all)
        .map_err(tag("geometry"))?;
    let mut warnings = Vec::new();

    report("conventional");
    let conv_kernel = geometry.kernel(&cube_w).map_err(tag("conventional"))?;
    let conventional = conv_kernel.to_image(&conv_kernel.focus(None)).to_volume();
    counters.conventional.backprojection += 1;
    drop(conv_kernel);

    let reference = match ctx.reference {
        Some(r) => {
            report("reference");
            let ref_w = cube_slice(r, window).map_err(tag("reference"))?;
            let k = geometry.kernel(&ref_w).map_err(tag("reference"))?;
            counters.reference.backprojection += 1;
            Some(k.to_image(&k.focus(None)).to_volume())
        }
        None => None,
    };

    report("power_map");
    let map = power_map(&cube_w, window).map_err(tag("power_map"))?;
    counters.proposed.power_map += 1;
    let s_th = cfg.detection.threshold(&map);
    let maxima = find_local_maxima(&map, s_th);
    if maxima.is_empty() {
        return Err(StageError {
            stage: "power_map",
            error: Error::EmptySet("no local maxima above the detection threshold".into()),
        });
    }

    report("spatial_separation");
    let parts = apply_spatial_separation(&cube_w, &maxima, cfg.sigma_range, cfg.sigma_angle)
        .map_err(tag("spatial_separation"))?;
    counters.proposed.spatial_separation += 1;

    let mut fits = Vec::new();
    let mut echoes = Vec::new();
    let mut images = Vec::new();
    for (n, (part, lm)) in parts.iter().zip(&maxima).enumerate() {
        report("tf_fit");
        let em = EmOptions {
            seed: ctx.seed ^ ((index as u64) << 20 | n as u64),
            ..cfg.em
        };
        let selection = peak_spectrogram(part, lm, window, cfg.stft).and_then(|spec| {
            select_model(&spec, cfg.sigma_hz, cfg.max_components, cfg.alpha, &em)
        });
        counters.proposed.tf_fit += 1;
        let selection = match selection {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("maximum {n}: mixture fit failed: {e}"));
                continue;
            }
        };
        debug!(
            "window {} maximum {n}: M={} omega={:.3}",
            index + 1,
            selection.params.num_components,
            selection.params.omega_r
        );
        report("tf_separation");
        let components = apply_tf_separation(part, window, &selection.params, cfg.stft)
            .map_err(tag("tf_separation"))?;
        counters.proposed.tf_separation += 1;
        let crop = footprint_voxels(&grid, &cfg.radar, &cfg.scan, window, lm.r, lm.theta, &cfg.autofocus);
        for (m, comp) in components.iter().enumerate() {
            report("autofocus");
            let kernel = geometry.kernel(comp).map_err(tag("autofocus"))?;
            counters.proposed.backprojection += 1;
            let init = phase_from_trajectory(&selection.params, m).map_err(tag("autofocus"))?;
            match optimize_kernel_phase(&kernel, init, selection.params.omega_r, Some(&crop), &cfg.autofocus) {
                Ok(res) => {
                    counters.proposed.phase_optimization += 1;
                    echoes.push(EchoSummary {
                        n,
                        m,
                        sharpness_before: res.sharpness_before,
                        sharpness_after: res.sharpness_after,
                        phase_coeffs: res.coeffs,
                    });
                    images.push(res.image);
                }
                Err(e) => warnings.push(format!("echo ({n}, {m}): {e}")),
            }
        }
        fits.push(FitSummary {
            n,
            params: selection.params,
            mbic: selection.mbic,
            loglik: selection.loglik,
        });
    }

    report("fusion");
    let proposed = integrate_images(&images).map_err(tag("fusion"))?;
    counters.proposed.fusion += 1;

    let sharpness_conventional = volume_sharpness(&conventional).ok();
    let sharpness_proposed = volume_sharpness(&proposed).ok();
    let (correlation_proposed, correlation_conventional) = match &reference {
        Some(r) => (
            volume_correlation(&proposed, r).ok(),
            volume_correlation(&conventional, r).ok(),
        ),
        None => (None, None),
    };
    for w in &warnings {
        warn!("window {}: {w}", index + 1);
    }
    Ok(WindowOutcome {
        record: WindowRecord {
            index,
            start_s: window.start(),
            grid,
            maxima: maxima.len(),
            echoes: echoes.len(),
            sharpness_conventional,
            sharpness_proposed,
            correlation_proposed,
            correlation_conventional,
            warnings,
            counters: *counters,
        },
        conventional,
        proposed,
        reference,
        maxima,
        fits,
        echoes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCounts {
    pub conventional: usize,
    pub proposed: usize,
    pub reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub metrics: MetricsReport,
    pub windows_planned: usize,
    pub windows_processed: usize,
    pub windows_skipped: Vec<SkippedWindow>,
    pub warning_count: usize,
    pub stages: PathCounters,
    pub points: PointCounts,
    pub windows: Vec<WindowRecord>,
}

/// Evaluated point clouds, kept alongside the report for export.
pub struct Evaluation {
    pub report: PipelineReport,
    pub conventional_points: PointCloud,
    pub proposed_points: PointCloud,
}

/// Minimal data needed to evaluate a window, whether fresh or loaded.
pub struct WindowVolumes<'a> {
    pub record: &'a WindowRecord,
    pub conventional: &'a Volume,
    pub proposed: &'a Volume,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn points_of(
    volumes: &[&Volume],
    fraction: f64,
    border: usize,
    pitch: Vec3,
) -> Result<PointCloud> {
    let global = volumes.iter().map(|v| v.max()).fold(0.0, f64::max);
    if !(global > 0.0) {
        return Ok(PointCloud::default());
    }
    let clouds = volumes
        .iter()
        .map(|v| extract_scattering_points(v, fraction * global, border))
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_points(&clouds, pitch))
}

/// Aggregates per-window volumes into the metrics report.
pub fn evaluate(
    cfg: &PipelineConfig,
    planned: usize,
    windows: &[WindowVolumes<'_>],
    skipped: &[SkippedWindow],
    truth: &PointCloud,
) -> Result<Evaluation> {
    let conv: Vec<&Volume> = windows.iter().map(|w| w.conventional).collect();
    let prop: Vec<&Volume> = windows.iter().map(|w| w.proposed).collect();
    let pitch = cfg.grid.spacing;
    let conventional_points = points_of(&conv, cfg.point_threshold_fraction, cfg.point_border, pitch)?;
    let proposed_points = points_of(&prop, cfg.point_threshold_fraction, cfg.point_border, pitch)?;
    let score = |est: &PointCloud| {
        if est.is_empty() || truth.is_empty() {
            None
        } else {
            rmse(est, truth).ok()
        }
    };
    let sc = mean(windows.iter().map(|w| w.record.sharpness_conventional));
    let sp = mean(windows.iter().map(|w| w.record.sharpness_proposed));
    let metrics = MetricsReport {
        mb_sharpness_conventional: sc,
        mb_sharpness_proposed: sp,
        sharpness_ratio: match (sc, sp) {
            (Some(c), Some(p)) if c > 0.0 => Some(p / c),
            _ => None,
        },
        rmse_conventional: score(&conventional_points),
        rmse_proposed: score(&proposed_points),
        correlation: mean(windows.iter().map(|w| w.record.correlation_proposed)),
        correlation_conventional: mean(windows.iter().map(|w| w.record.correlation_conventional)),
        window_count: windows.len(),
    };
    let mut stages = PathCounters::default();
    for w in windows {
        stages += w.record.counters;
    }
    for s in skipped {
        stages += s.counters;
    }
    let warning_count = skipped.len()
        + windows.iter().map(|w| w.record.warnings.len()).sum::<usize>();
    Ok(Evaluation {
        report: PipelineReport {
            metrics,
            windows_planned: planned,
            windows_processed: windows.len(),
            windows_skipped: skipped.to_vec(),
            warning_count,
            stages,
            points: PointCounts {
                conventional: conventional_points.len(),
                proposed: proposed_points.len(),
                reference: truth.len(),
            },
            windows: windows.iter().map(|w| w.record.clone()).collect(),
        },
        conventional_points,
        proposed_points,
    })
}

pub fn evaluate_run(cfg: &PipelineConfig, run: &FocusRun, truth: &PointCloud) -> Result<Evaluation> {
    let windows: Vec<WindowVolumes<'_>> = run
        .outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok())
        .map(|w| WindowVolumes {
            record: &w.record,
            conventional: &w.conventional,
            proposed: &w.proposed,
        })
        .collect();
    let skipped: Vec<SkippedWindow> = run
        .outcomes
        .iter()
        .filter_map(|o| o.as_ref().err().cloned())
        .collect();
    evaluate(cfg, run.planned, &windows, &skipped, truth)
}

/// Rounds `x` to `digits` significant decimal digits.
pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() || digits == 0 {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().unwrap_or(x)
}

fn round_json(v: &mut serde_json::Value, digits: usize) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                if let Some(r) = serde_json::Number::from_f64(round_significant(x, digits)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| round_json(x, digits)),
        serde_json::Value::Object(o) => o.values_mut().for_each(|x| round_json(x, digits)),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn report_json(report: &PipelineReport) -> Result<String> {
    let mut v = serde_json::to_value(report)?;
    round_json(&mut v, 12);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

fn window_dir(out: &Path, index: usize) -> PathBuf {
    out.join("windows").join(format!("w{index:03}"))
}

/// Writes per-window volumes, maxima, fits, echo summaries, and the window
/// index used by a later `evaluate`.
pub fn write_focus_artifacts(out: &Path, run: &FocusRun, per_window_files: bool) -> Result<()> {
    std::fs::create_dir_all(out.join("windows"))?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for o in &run.outcomes {
        match o {
            Ok(w) => {
                let dir = window_dir(out, w.record.index);
                std::fs::create_dir_all(&dir)?;
                io::write_volume(&dir.join("conventional"), &w.conventional)?;
                io::write_volume(&dir.join("proposed"), &w.proposed)?;
                if per_window_files {
                    if let Some(r) = &w.reference {
                        io::write_volume(&dir.join("reference"), r)?;
                    }
                    io::write_maxima_csv(&dir.join("maxima.csv"), &w.maxima)?;
                    io::write_json(&dir.join("fits.json"), &w.fits)?;
                    io::write_json(&dir.join("echoes.json"), &w.echoes)?;
                    io::write_pgm_mip(&dir.join("proposed_mip_x.pgm"), &w.proposed, io::Axis::X)?;
                    io::write_pgm_mip(&dir.join("conventional_mip_x.pgm"), &w.conventional, io::Axis::X)?;
                }
                records.push(w.record.clone());
            }
            Err(s) => skipped.push(s.clone()),
        }
    }
    io::write_json(
        &out.join("windows").join("index.json"),
        &WindowIndex {
            planned: run.planned,
            windows: records,
            skipped,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub planned: usize,
    pub windows: Vec<WindowRecord>,
    pub skipped: Vec<SkippedWindow>,
}

/// Reads what [`write_focus_artifacts`] wrote and evaluates it.
pub fn evaluate_dir(cfg: &PipelineConfig, out: &Path, truth: &PointCloud) -> Result<Evaluation> {
    let index: WindowIndex = io::read_json(&out.join("windows").join("index.json"))?;
    let mut loaded = Vec::new();
    for r in &index.windows {
        let dir = window_dir(out, r.index);
        loaded.push((
            io::read_volume(&dir.join("conventional"))?,
            io::read_volume(&dir.join("proposed"))?,
        ));
    }
    let windows: Vec<WindowVolumes<'_>> = index
        .windows
        .iter()
        .zip(&loaded)
        .map(|(record, (c, p))| WindowVolumes {
            record,
            conventional: c,
            proposed: p,
        })
        .collect();
    evaluate(cfg, index.planned, &windows, &index.skipped, truth)
}

pub fn write_evaluation(out: &Path, eval: &Evaluation, truth: &PointCloud) -> Result<()> {
    std::fs::create_dir_all(out)?;
    io::write_points_csv(&out.join("points_proposed.csv"), &eval.proposed_points)?;
    io::write_points_csv(&out.join("points_conventional.csv"), &eval.conventional_points)?;
    io::write_points_csv(&out.join("points_reference.csv"), truth)?;
    std::fs::write(out.join("report.json"), report_json(&eval.report)?)?;
    Ok(())
}

/// Simulate, focus every selected window, evaluate, and write artifacts when
/// an output directory is configured.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    selection: Option<Range<usize>>,
    progress: ProgressFn<'_>,
) -> Result<PipelineReport> {
    cfg.validate()?;
    let scene = cfg.load_scene()?;
    let sim = simulate(cfg, &scene)?;
    let run = focus_windows(cfg, &sim.cube, Some(&sim.reference), scene.rng_seed, selection, progress)?;
    let eval = evaluate_run(cfg, &run, &sim.truth)?;
    if let Some(out) = &cfg.output_dir {
        write_focus_artifacts(out, &run, cfg.write_window_artifacts)?;
        write_evaluation(out, &eval, &sim.truth)?;
    }
    Ok(eval.report)
}
