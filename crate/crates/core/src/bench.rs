//! Run configuration, benchmark presets and run orchestration.
//!
//! A [`RunConfig`] is read from TOML (or JSON), optionally adjusted with
//! `key=value` overrides, and executed by [`execute`], which writes a
//! diagnostics CSV, requested snapshots and a `manifest.toml` holding the full
//! resolved configuration plus solver statistics. A manifest is itself a valid
//! configuration and reproduces the run.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{DiagnosticsRecord, Recorder, RunSummary};
use crate::error::{Error, Result};
use crate::fit::{fit_damping_rate, fit_period};
use crate::integrator::{run, RunStatus, SolverConfig, SolverStats, StepEvent, StepObserver};
use crate::operator::{poisson_solve, Background, Model};
use crate::snapshot::{self, SnapshotFormat, SnapshotMeta};
use crate::spectral::{
    project_initial, reconstruct_f, DomainConfig, FieldModes, InitialProfile, PenaltyMode, SpectralState, Species,
};

/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "LVBENCH_OUTPUT_DIR";

/// Name of the diagnostics file inside the output directory.
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

/// Name of the manifest file inside the output directory.
pub const MANIFEST_FILE: &str = "manifest.toml";

/// How the non-dynamic background charge is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundConfig {
    None,
    /// Uniform charge equal and opposite to the initial kinetic charge.
    #[default]
    Neutralizing,
    /// Uniform charge density of the given value.
    Fixed(f64),
}

/// One kinetic species and its initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub name: String,
    pub charge: f64,
    pub mass: f64,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub penalty_mode: PenaltyMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_bounds: Option<[f64; 2]>,
    pub profile: InitialProfile,
}

fn default_gamma() -> f64 {
    0.5
}

impl SpeciesConfig {
    pub fn species(&self) -> Species {
        Species {
            name: self.name.clone(),
            charge: self.charge,
            mass: self.mass,
            nu: self.nu,
            gamma: self.gamma,
            penalty_mode: self.penalty_mode,
            velocity_bounds: self.velocity_bounds,
        }
    }
}

/// Output products of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; [`OUTPUT_DIR_ENV`] takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    /// Diagnostics are written every `cadence` steps.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    /// Fourier modes whose `|E_k|` is recorded.
    #[serde(default = "default_field_modes")]
    pub field_modes: Vec<i64>,
    /// Snapshot times, rounded to the nearest step.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default)]
    pub snapshot_format: SnapshotFormat,
    /// `[n_x, n_v]`; `n_x` defaults to `4 N_F + 2`, `n_v` to 201.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_grid: Option<[usize; 2]>,
}

fn default_cadence() -> usize {
    1
}

fn default_field_modes() -> Vec<i64> {
    vec![1]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            cadence: default_cadence(),
            field_modes: default_field_modes(),
            snapshots: Vec::new(),
            snapshot_format: SnapshotFormat::Csv,
            snapshot_grid: None,
        }
    }
}

/// Which fit to apply to `|E_1|` after the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    #[default]
    None,
    Rate,
    Period,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub kind: FitKind,
    /// Time window `[t0, t1]` of the fit.
    pub window: [f64; 2],
    /// Peaks closer than this are merged into the larger one.
    #[serde(default)]
    pub min_separation: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            kind: FitKind::None,
            window: [0.0, f64::MAX],
            min_separation: 0.0,
        }
    }
}

/// Complete description of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub domain: DomainConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub background: BackgroundConfig,
    /// Largest allowed `|g(v_a)|, |g(v_b)|` relative to the peak of `g`.
    #[serde(default = "default_tail_tolerance")]
    pub tail_tolerance: f64,
    pub species: Vec<SpeciesConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub fit: FitConfig,
}

fn default_tail_tolerance() -> f64 {
    1e-4
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["landau", "two_stream", "ion_acoustic"];

fn electrons(profile: InitialProfile, nu: f64) -> SpeciesConfig {
    SpeciesConfig {
        name: "e".into(),
        charge: -1.0,
        mass: 1.0,
        nu,
        gamma: 0.5,
        penalty_mode: PenaltyMode::SkipFirstThree,
        velocity_bounds: None,
        profile,
    }
}

/// Benchmark configurations at their published resolution.
pub fn preset(name: &str) -> Result<RunConfig> {
    let domain = |length: f64, n_legendre: usize| DomainConfig {
        length,
        v_min: -5.0,
        v_max: 5.0,
        n_legendre,
        n_fourier: 25,
        epsilon0: 1.0,
    };
    match name {
        "landau" => Ok(RunConfig {
            name: name.into(),
            domain: domain(2.0 * PI, 201),
            solver: SolverConfig::new(0.05, 100.0),
            background: BackgroundConfig::Neutralizing,
            tail_tolerance: default_tail_tolerance(),
            species: vec![electrons(
                InitialProfile::Maxwellian {
                    thermal_speed: 1.0,
                    drift: 0.0,
                    density: 1.0,
                    amplitude: 1e-3,
                    mode: 1,
                },
                1.0,
            )],
            output: OutputConfig::default(),
            fit: FitConfig {
                kind: FitKind::Rate,
                window: [2.0, 20.0],
                min_separation: 0.0,
            },
        }),
        "two_stream" => Ok(RunConfig {
            name: name.into(),
            domain: domain(4.0 * PI, 201),
            solver: SolverConfig::new(0.01, 200.0),
            background: BackgroundConfig::Neutralizing,
            tail_tolerance: default_tail_tolerance(),
            species: vec![electrons(
                InitialProfile::TwoStream {
                    thermal_speed: 1.0 / 8f64.sqrt(),
                    drift: 1.0,
                    density: 1.0,
                    amplitude: 1e-3,
                    mode: 1,
                },
                1.0,
            )],
            output: OutputConfig::default(),
            fit: FitConfig::default(),
        }),
        "ion_acoustic" => {
            let alpha_i = 1.0 / 135.0;
            let mut e = electrons(
                InitialProfile::Maxwellian {
                    thermal_speed: 1.0,
                    drift: 0.0,
                    density: 1.0,
                    amplitude: 0.0,
                    mode: 1,
                },
                0.5,
            );
            e.penalty_mode = PenaltyMode::SkipFirstThree;
            let ions = SpeciesConfig {
                name: "i".into(),
                charge: 1.0,
                mass: 1836.0,
                nu: 0.5,
                gamma: 0.5,
                penalty_mode: PenaltyMode::SkipFirstThree,
                velocity_bounds: Some([-5.0 * alpha_i, 5.0 * alpha_i]),
                profile: InitialProfile::Maxwellian {
                    thermal_speed: alpha_i,
                    drift: 0.0,
                    density: 1.0,
                    amplitude: 0.01,
                    mode: 1,
                },
            };
            let mut solver = SolverConfig::new(1.0, 450.0);
            solver.preconditioner = crate::integrator::Preconditioner::Streaming;
            Ok(RunConfig {
                name: name.into(),
                domain: DomainConfig {
                    length: 10.0,
                    v_min: -5.0,
                    v_max: 5.0,
                    n_legendre: 101,
                    n_fourier: 25,
                    epsilon0: 1.0,
                },
                solver,
                background: BackgroundConfig::None,
                tail_tolerance: default_tail_tolerance(),
                species: vec![e, ions],
                output: OutputConfig::default(),
                fit: FitConfig {
                    kind: FitKind::Period,
                    window: [50.0, f64::MAX],
                    min_separation: 50.0,
                },
            })
        }
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected one of {})",
            PRESETS.join(", ")
        ))),
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &[&str], value: Value, key: &str) -> Result<()> {
    let unknown = || Error::Config(format!("override `{key}`: no such setting"));
    let mut cur = root;
    for (depth, part) in path.iter().enumerate() {
        let last = depth + 1 == path.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.get_mut(*part).ok_or_else(unknown)?
            }
            Value::Array(items) => {
                let idx = match part.parse::<usize>() {
                    Ok(i) => i,
                    Err(_) => items
                        .iter()
                        .position(|it| it.get("name").and_then(Value::as_str) == Some(part))
                        .ok_or_else(unknown)?,
                };
                let slot = items.get_mut(idx).ok_or_else(unknown)?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(unknown()),
        };
    }
    Err(unknown())
}

const DOMAIN_KEYS: [&str; 6] = ["length", "v_min", "v_max", "n_legendre", "n_fourier", "epsilon0"];
const SOLVER_KEYS: [&str; 10] = [
    "dt",
    "t_final",
    "newton_abs_tol",
    "newton_rel_tol",
    "newton_max_iters",
    "gmres_rel_tol",
    "gmres_restart",
    "gmres_max_iters",
    "fd_epsilon_scale",
    "preconditioner",
];
const SPECIES_KEYS: [&str; 3] = ["nu", "gamma", "penalty_mode"];
const OUTPUT_KEYS: [&str; 6] = [
    "directory",
    "cadence",
    "field_modes",
    "snapshots",
    "snapshot_format",
    "snapshot_grid",
];

/// Applies `key=value` overrides.
///
/// Plain keys address domain, solver and output settings by name; `nu`,
/// `gamma` and `penalty_mode` apply to every species; `ion_mass` sets the mass
/// of species `i`; `n_modes_x` sets `2 N_F + 1`; `fit_window` and
/// `min_separation` address the fit. Dotted keys such as `species.i.mass` or
/// `solver.dt` address any field, with species selectable by name or index.
pub fn apply_overrides(config: &RunConfig, overrides: &[String]) -> Result<RunConfig> {
    let mut root = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
        let key = key.trim();
        let value = parse_value(raw.trim());
        if key.contains('.') {
            let path: Vec<&str> = key.split('.').collect();
            set_path(&mut root, &path, value, key)?;
        } else if DOMAIN_KEYS.contains(&key) {
            set_path(&mut root, &["domain", key], value, key)?;
        } else if SOLVER_KEYS.contains(&key) {
            set_path(&mut root, &["solver", key], value, key)?;
        } else if OUTPUT_KEYS.contains(&key) {
            set_path(&mut root, &["output", key], value, key)?;
        } else if SPECIES_KEYS.contains(&key) {
            for idx in 0..config.species.len() {
                set_path(&mut root, &["species", &idx.to_string(), key], value.clone(), key)?;
            }
        } else if key == "ion_mass" {
            set_path(&mut root, &["species", "i", "mass"], value, key)?;
        } else if key == "n_modes_x" {
            let n = value
                .as_u64()
                .filter(|n| n % 2 == 1 && *n >= 3)
                .ok_or_else(|| Error::Config(format!("n_modes_x must be an odd integer >= 3, got {raw}")))?;
            set_path(&mut root, &["domain", "n_fourier"], Value::from(n / 2), key)?;
        } else if key == "fit_window" {
            set_path(&mut root, &["fit", "window"], value, key)?;
        } else if key == "min_separation" {
            set_path(&mut root, &["fit", "min_separation"], value, key)?;
        } else if key == "name" {
            set_path(&mut root, &["name"], value, key)?;
        } else {
            return Err(Error::Config(format!("override `{key}`: no such setting")));
        }
    }
    let out: RunConfig = serde_json::from_value(root).map_err(|e| Error::Config(format!("after overrides: {e}")))?;
    out.validate()?;
    Ok(out)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.solver.validate()?;
        if self.species.is_empty() {
            return Err(Error::Config("at least one species is required".into()));
        }
        for s in &self.species {
            s.species().validate()?;
        }
        if self.output.cadence == 0 {
            return Err(Error::Config("output.cadence must be at least 1".into()));
        }
        for &k in &self.output.field_modes {
            if k.unsigned_abs() as usize > self.domain.n_fourier {
                return Err(Error::Config(format!(
                    "field mode {k} outside ±{}",
                    self.domain.n_fourier
                )));
            }
        }
        if self.fit.window[0] > self.fit.window[1] {
            return Err(Error::Config("fit window is reversed".into()));
        }
        Ok(())
    }

    /// Parses TOML, or JSON when `path` ends in `.json`. A `stats` table, as
    /// written into manifests, is ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
        Self::parse(&text, is_json, &path.display().to_string())
    }

    pub fn parse(text: &str, json: bool, context: &str) -> Result<Self> {
        let config: RunConfig = if json {
            let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
                context: context.into(),
                message: e.to_string(),
            })?;
            if let Value::Object(map) = &mut value {
                map.remove("stats");
            }
            serde_json::from_value(value).map_err(|e| Error::Parse {
                context: context.into(),
                message: e.to_string(),
            })?
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
                context: context.into(),
                message: e.to_string(),
            })?;
            table.remove("stats");
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Parse {
                context: context.into(),
                message: e.to_string(),
            })?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Output directory after applying [`OUTPUT_DIR_ENV`].
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        self.output
            .directory
            .clone()
            .unwrap_or_else(|| PathBuf::from("output").join(&self.name))
    }

    /// The model and initial state, with the background resolved.
    pub fn build(&self) -> Result<(Model, SpectralState)> {
        self.validate()?;
        let species: Vec<Species> = self.species.iter().map(SpeciesConfig::species).collect();
        let mut model = Model::new(self.domain.clone(), species, Background::None)?;
        let coeffs = self
            .species
            .iter()
            .enumerate()
            .map(|(s, sc)| project_initial(model.basis(s), self.domain.n_fourier, &sc.name, &sc.profile, self.tail_tolerance))
            .collect::<Result<Vec<_>>>()?;
        let state = SpectralState::new(coeffs);
        match self.background {
            BackgroundConfig::None => {}
            BackgroundConfig::Neutralizing => model.neutralize(&state),
            BackgroundConfig::Fixed(rho) => {
                model = Model::new(
                    self.domain.clone(),
                    self.species.iter().map(SpeciesConfig::species).collect(),
                    Background::Fixed(rho),
                )?
            }
        }
        poisson_solve(&model, &state)?;
        Ok((model, state))
    }
}

/// Solver and conservation statistics stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub status: String,
    pub final_time: f64,
    pub solver: SolverStats,
    pub conservation: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_value: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    stats: &'a RunStats,
}

/// Result of [`execute`].
#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: RunStatus,
    pub records: Vec<DiagnosticsRecord>,
    pub stats: RunStats,
    pub final_state: SpectralState,
    pub output_dir: Option<PathBuf>,
}

impl RunReport {
    /// `(t, |E_k|)` for the `idx`-th recorded field mode.
    pub fn field_series(&self, idx: usize) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.t, r.field_modes[idx])).collect()
    }
}

struct SnapshotWriter {
    dir: PathBuf,
    steps: Vec<usize>,
    format: SnapshotFormat,
    n_x: usize,
    n_v: usize,
}

impl SnapshotWriter {
    fn write(&self, model: &Model, state: &SpectralState, step: usize, t: f64) -> Result<()> {
        if !self.steps.contains(&step) {
            return Ok(());
        }
        let length = model.domain().length;
        for (s, sp) in model.species().iter().enumerate() {
            let basis = model.basis(s);
            let grid = reconstruct_f(basis, &state.species[s], length, self.n_x, self.n_v)?;
            let path = self
                .dir
                .join(format!("snapshot_{}_{step:07}.{}", sp.name, self.format.extension()));
            match self.format {
                SnapshotFormat::Csv => snapshot::write_csv(&path, &grid)?,
                SnapshotFormat::Binary => snapshot::write_binary(
                    &path,
                    &grid,
                    &SnapshotMeta {
                        n_x: self.n_x,
                        n_v: self.n_v,
                        length,
                        v_min: basis.v_min(),
                        v_max: basis.v_max(),
                        t,
                    },
                )?,
            }
        }
        Ok(())
    }
}

struct BenchObserver {
    recorder: Recorder,
    snapshots: Option<SnapshotWriter>,
}

impl StepObserver for BenchObserver {
    fn initial(&mut self, model: &Model, state: &SpectralState, field: &FieldModes) -> Result<()> {
        self.recorder.initial(model, state, field)?;
        if let Some(w) = &self.snapshots {
            w.write(model, state, 0, 0.0)?;
        }
        Ok(())
    }

    fn step(&mut self, model: &Model, event: &StepEvent<'_>) -> Result<()> {
        self.recorder.step(model, event)?;
        if let Some(w) = &self.snapshots {
            w.write(model, event.new, event.step, event.time)?;
        }
        Ok(())
    }
}

/// Runs `config`. With `output_dir`, writes the diagnostics CSV, snapshots
/// and manifest there; otherwise only keeps records in memory.
pub fn execute(config: &RunConfig, output_dir: Option<&Path>) -> Result<RunReport> {
    let (model, initial) = config.build()?;
    let start = Instant::now();
    let mut recorder = Recorder::new(config.output.cadence, config.output.field_modes.clone());
    let mut snapshots = None;
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir)?;
        recorder = recorder.with_csv(&dir.join(DIAGNOSTICS_FILE), true)?;
        if !config.output.snapshots.is_empty() {
            let [n_x, n_v] = config
                .output
                .snapshot_grid
                .unwrap_or([config.domain.output_grid_x(), 201]);
            snapshots = Some(SnapshotWriter {
                dir: dir.to_path_buf(),
                steps: config
                    .output
                    .snapshots
                    .iter()
                    .map(|t| (t / config.solver.dt).round() as usize)
                    .collect(),
                format: config.output.snapshot_format,
                n_x,
                n_v,
            });
        }
    }
    let mut observer = BenchObserver { recorder, snapshots };
    let outcome = run(&model, &config.solver, initial, &mut observer)?;
    observer.recorder.finish()?;
    let records = observer.recorder.records().to_vec();
    let summary = observer.recorder.summary().clone();

    let fit_value = match (config.fit.kind, config.output.field_modes.iter().position(|&k| k == 1)) {
        (FitKind::None, _) | (_, None) => None,
        (kind, Some(idx)) => {
            let series: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.field_modes[idx])).collect();
            let window = (config.fit.window[0], config.fit.window[1]);
            let fitted = match kind {
                FitKind::Rate => fit_damping_rate(&series, window, config.fit.min_separation),
                _ => fit_period(&series, window, config.fit.min_separation),
            };
            match fitted {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("{e}");
                    None
                }
            }
        }
    };
    let status = match &outcome.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Rejected { step, time, reason } => format!("rejected at step {step} (t = {time}): {reason}"),
    };
    let stats = RunStats {
        status,
        final_time: outcome.time,
        solver: outcome.stats.clone(),
        conservation: summary,
        fit_value,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = output_dir {
        let manifest = toml::to_string(&Manifest { config, stats: &stats }).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST_FILE), manifest)?;
    }
    Ok(RunReport {
        status: outcome.status,
        records,
        stats,
        final_state: outcome.state,
        output_dir: output_dir.map(Path::to_path_buf),
    })
}
