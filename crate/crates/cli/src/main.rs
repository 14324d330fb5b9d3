use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use legendre_vlasov::bench::{self, RunConfig, RunReport, MANIFEST_FILE};
use legendre_vlasov::fit::{fit_damping_rate, fit_period, read_series};
use legendre_vlasov::snapshot;
use legendre_vlasov::RunStatus;

#[derive(Parser)]
#[command(name = "lvbench", version, about = "Legendre-Fourier Vlasov-Poisson benchmark driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a TOML or JSON file (manifests accepted).
    Run {
        config: PathBuf,
        /// Extra `key=value` settings applied after loading.
        #[arg(long = "override", num_args = 1.., value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; overrides the environment and the file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a built-in benchmark.
    Preset {
        #[arg(value_parser = bench::PRESETS)]
        name: String,
        #[arg(long = "override", num_args = 1.., value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Print the resolved configuration as TOML and exit.
        #[arg(long)]
        print: bool,
    },
    /// Fit a diagnostics column.
    Fit {
        kind: FitKind,
        csv: PathBuf,
        #[arg(long, default_value = "abs_E_1")]
        column: String,
        /// Fit window `T0 T1`.
        #[arg(long, num_args = 2, value_names = ["T0", "T1"])]
        window: Option<Vec<f64>>,
        /// Minimum spacing between accepted maxima.
        #[arg(long)]
        min_separation: Option<f64>,
    },
    /// Summarize a snapshot file, or the snapshot nearest `--at` in a run directory.
    Snapshot {
        path: PathBuf,
        #[arg(long)]
        at: Option<f64>,
        /// Restrict directory lookup to this species.
        #[arg(long)]
        species: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    Rate,
    Period,
}

/// An error tagged with the stage that produced it.
struct StageError {
    stage: &'static str,
    error: anyhow::Error,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            error: e.into(),
        })
    }
}

fn fail(stage: &'static str, message: String) -> StageError {
    StageError {
        stage,
        error: anyhow::anyhow!(message),
    }
}

fn output_dir(config: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.output_dir())
}

fn execute(config: &RunConfig, dir: &Path) -> Result<(), StageError> {
    log::info!("running `{}` into {}", config.name, dir.display());
    let report: RunReport = bench::execute(config, Some(dir)).stage("solver")?;
    let stats = &report.stats;
    println!("status: {}", stats.status);
    println!("final time: {}", stats.final_time);
    println!(
        "steps: {}  newton: {} (max {})  gmres: {}",
        stats.solver.steps, stats.solver.newton_iters_total, stats.solver.newton_iters_max, stats.solver.gmres_iters_total
    );
    println!("max relative mass change: {:e}", stats.conservation.max_rel_mass_change);
    println!("max momentum change: {:e}", stats.conservation.max_abs_momentum_change);
    println!("max relative energy change: {:e}", stats.conservation.max_rel_energy_change);
    if let Some(v) = stats.fit_value {
        println!("fit: {v}");
    }
    println!("output: {}", dir.display());
    match report.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Rejected { step, time, reason } => Err(fail(
            "solver",
            format!("step {step} (t = {time}) rejected: {reason}; partial output kept"),
        )),
    }
}

fn snapshot_time(path: &Path, dt: Option<f64>) -> Option<f64> {
    let stem = path.file_stem()?.to_str()?;
    let step: f64 = stem.rsplit('_').next()?.parse().ok()?;
    dt.map(|dt| step * dt)
}

fn summarize_snapshot(path: &Path, at: Option<f64>, species: Option<&str>) -> Result<(), StageError> {
    let file = if path.is_dir() {
        let at = at.ok_or_else(|| fail("snapshot", "--at is required for a directory".into()))?;
        let dt = RunConfig::load(&path.join(MANIFEST_FILE)).map(|c| c.solver.dt).ok();
        let mut best: Option<(f64, PathBuf)> = None;
        for entry in std::fs::read_dir(path).stage("snapshot")? {
            let p = entry.stage("snapshot")?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let is_snapshot = name.starts_with("snapshot_") && (name.ends_with(".csv") || name.ends_with(".bin"));
            if !is_snapshot || species.is_some_and(|s| !name.starts_with(&format!("snapshot_{s}_"))) {
                continue;
            }
            let t = match name.ends_with(".bin") {
                true => snapshot::read_meta(&snapshot::sidecar_path(&p)).map(|m| m.t).ok(),
                false => snapshot_time(&p, dt),
            };
            if let Some(t) = t {
                let d = (t - at).abs();
                if best.as_ref().is_none_or(|(bd, bp)| d < *bd || (d == *bd && p < *bp)) {
                    best = Some((d, p));
                }
            }
        }
        best.map(|(_, p)| p)
            .ok_or_else(|| fail("snapshot", format!("no snapshots found in {}", path.display())))?
    } else {
        path.to_path_buf()
    };
    let (grid, t) = if file.extension().and_then(|e| e.to_str()) == Some("bin") {
        let (grid, meta) = snapshot::read_binary(&file).stage("snapshot")?;
        (grid, Some(meta.t))
    } else {
        (snapshot::read_csv(&file).stage("snapshot")?, None)
    };
    if let (Some(t), Some(at), false) = (t, at, path.is_dir()) {
        if (t - at).abs() > 1e-9 * t.abs().max(1.0) {
            log::warn!("snapshot is at t = {t}, not {at}");
        }
    }
    let length = match grid.xs.len() {
        n if n >= 2 => (grid.xs[1] - grid.xs[0]) * n as f64,
        _ => 0.0,
    };
    let s = snapshot::summarize(&grid, length);
    println!("file: {}", file.display());
    if let Some(t) = t {
        println!("t: {t}");
    }
    println!("grid: {} x {}", s.n_x, s.n_v);
    println!("min: {:e}", s.min);
    println!("max: {:e}", s.max);
    println!("integral: {:.12e}", s.integral);
    Ok(())
}

fn main_inner(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            output,
        } => {
            let mut cfg = RunConfig::load(&config).stage("config")?;
            if !overrides.is_empty() {
                cfg = bench::apply_overrides(&cfg, &overrides).stage("config")?;
            }
            let dir = output_dir(&cfg, output);
            execute(&cfg, &dir)
        }
        Command::Preset {
            name,
            overrides,
            output,
            print,
        } => {
            let base = bench::preset(&name).stage("config")?;
            let cfg = bench::apply_overrides(&base, &overrides).stage("config")?;
            if print {
                print!("{}", cfg.to_toml().stage("config")?);
                return Ok(());
            }
            let dir = output_dir(&cfg, output);
            execute(&cfg, &dir)
        }
        Command::Fit {
            kind,
            csv,
            column,
            window,
            min_separation,
        } => {
            let series = read_series(&csv, &column).stage("fit")?;
            let window = window.map(|w| (w[0], w[1])).unwrap_or(match kind {
                FitKind::Rate => (2.0, 20.0),
                FitKind::Period => (0.0, f64::MAX),
            });
            let min_sep = min_separation.unwrap_or(match kind {
                FitKind::Rate => 0.0,
                FitKind::Period => 50.0,
            });
            let value = match kind {
                FitKind::Rate => fit_damping_rate(&series, window, min_sep),
                FitKind::Period => fit_period(&series, window, min_sep),
            }
            .stage("fit")?;
            println!("{value}");
            Ok(())
        }
        Command::Snapshot { path, at, species } => summarize_snapshot(&path, at, species.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {:#}", e.stage, e.error);
            ExitCode::FAILURE
        }
    }
}
