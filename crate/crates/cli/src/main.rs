use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use respfocus::io;
use respfocus::pipeline::{
    evaluate_dir, evaluate_run, focus_windows, simulate, write_evaluation, write_focus_artifacts,
    PipelineConfig, Progress,
};

/// Respiration-compensated SAR imaging of a breathing body.
#[derive(Parser)]
#[command(name = "respfocus", version)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    /// Print debug logging.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scene into a signal cube.
    Simulate(Common),
    /// Focus the simulated cube window by window.
    Focus(Common),
    /// Compute metrics from focused volumes and ground truth.
    Evaluate(Common),
    /// Simulate, focus and evaluate in one go.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise and fitting seed; overrides the scene's.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero-based window range such as `5`, `0..10` or `3..=7`.
    #[arg(long, value_parser = parse_windows)]
    windows: Option<Range<usize>>,
}

fn parse_windows(s: &str) -> std::result::Result<Range<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad window index {t:?}: {e}"));
    let range = if let Some((a, b)) = s.split_once("..=") {
        num(a)?..num(b)? + 1
    } else if let Some((a, b)) = s.split_once("..") {
        num(a)?..num(b)?
    } else {
        let i = num(s)?;
        i..i + 1
    };
    if range.is_empty() {
        return Err(format!("empty window range {s:?}"));
    }
    Ok(range)
}

struct RunContext {
    cfg: PipelineConfig,
    out: PathBuf,
    windows: Option<Range<usize>>,
    quiet: bool,
}

fn load(common: Common, quiet: bool) -> Result<RunContext> {
    let mut cfg = PipelineConfig::from_file(&common.config)
        .with_context(|| format!("config: reading {}", common.config.display()))?;
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    let out = common
        .out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| anyhow!("config: no output directory; pass --out"))?;
    cfg.output_dir = Some(out.clone());
    Ok(RunContext {
        cfg,
        out,
        windows: common.windows,
        quiet,
    })
}

fn progress_printer(quiet: bool) -> impl Fn(Progress<'_>) + Sync {
    move |p: Progress<'_>| {
        if !quiet {
            eprintln!("window={}/{} stage={}", p.window, p.total, p.stage);
        }
    }
}

fn seed_of(cfg: &PipelineConfig) -> Result<u64> {
    match cfg.seed {
        Some(s) => Ok(s),
        None => Ok(cfg.load_scene().context("config: loading scene")?.rng_seed),
    }
}

fn run_simulate(ctx: &RunContext) -> Result<()> {
    let scene = ctx.cfg.load_scene().context("simulate: loading scene")?;
    let sim = simulate(&ctx.cfg, &scene).context("simulate")?;
    std::fs::create_dir_all(&ctx.out).context("simulate: creating output directory")?;
    io::write_cube(&ctx.out.join("cube"), &sim.cube).context("simulate: writing cube")?;
    io::write_cube(&ctx.out.join("reference_cube"), &sim.reference)
        .context("simulate: writing reference cube")?;
    io::write_points_csv(&ctx.out.join("points_reference.csv"), &sim.truth)
        .context("simulate: writing truth")?;
    info!(
        "simulated {} samples x {} range bins into {}",
        sim.cube.num_time,
        sim.cube.num_range,
        ctx.out.display()
    );
    Ok(())
}

fn run_focus(ctx: &RunContext) -> Result<()> {
    let cube = io::read_cube(&ctx.out.join("cube")).context("focus: reading cube")?;
    let reference_stem = ctx.out.join("reference_cube");
    let reference = if reference_stem.with_extension("json").exists() {
        Some(io::read_cube(&reference_stem).context("focus: reading reference cube")?)
    } else {
        None
    };
    let seed = seed_of(&ctx.cfg)?;
    let progress = progress_printer(ctx.quiet);
    let run = focus_windows(&ctx.cfg, &cube, reference.as_ref(), seed, ctx.windows.clone(), &progress)
        .context("focus")?;
    write_focus_artifacts(&ctx.out, &run, ctx.cfg.write_window_artifacts)
        .context("focus: writing artifacts")?;
    Ok(())
}

fn run_evaluate(ctx: &RunContext) -> Result<()> {
    let truth = io::read_points_csv(&ctx.out.join("points_reference.csv"))
        .context("evaluate: reading truth")?;
    let eval = evaluate_dir(&ctx.cfg, &ctx.out, &truth).context("evaluate")?;
    write_evaluation(&ctx.out, &eval, &truth).context("evaluate: writing report")?;
    summarize(&ctx.out);
    Ok(())
}

fn run_all(ctx: &RunContext) -> Result<()> {
    let scene = ctx.cfg.load_scene().context("simulate: loading scene")?;
    let sim = simulate(&ctx.cfg, &scene).context("simulate")?;
    let progress = progress_printer(ctx.quiet);
    let run = focus_windows(
        &ctx.cfg,
        &sim.cube,
        Some(&sim.reference),
        scene.rng_seed,
        ctx.windows.clone(),
        &progress,
    )
    .context("focus")?;
    write_focus_artifacts(&ctx.out, &run, ctx.cfg.write_window_artifacts)
        .context("focus: writing artifacts")?;
    let eval = evaluate_run(&ctx.cfg, &run, &sim.truth).context("evaluate")?;
    write_evaluation(&ctx.out, &eval, &sim.truth).context("evaluate: writing report")?;
    summarize(&ctx.out);
    Ok(())
}

fn summarize(out: &Path) {
    info!("report written to {}", out.join("report.json").display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "error"
    } else if cli.verbose {
        "debug"
    } else {
        "info"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = (|| -> Result<()> {
        match cli.command {
            Command::Simulate(c) => run_simulate(&load(c, cli.quiet)?),
            Command::Focus(c) => run_focus(&load(c, cli.quiet)?),
            Command::Evaluate(c) => {
                if c.windows.is_some() {
                    bail!("evaluate: --windows applies to focus and pipeline only");
                }
                run_evaluate(&load(c, cli.quiet)?)
            }
            Command::Pipeline(c) => run_all(&load(c, cli.quiet)?),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_windows;

    #[test]
    fn window_ranges() {
        assert_eq!(parse_windows("5").unwrap(), 5..6);
        assert_eq!(parse_windows("0..10").unwrap(), 0..10);
        assert_eq!(parse_windows("3..=7").unwrap(), 3..8);
        assert!(parse_windows("4..4").is_err());
        assert!(parse_windows("x").is_err());
    }
}
