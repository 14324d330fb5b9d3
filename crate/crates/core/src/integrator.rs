//! Crank-Nicolson time stepping solved by Jacobian-free Newton-Krylov.
//!
//! The residual of one step is
//!
//! ```text
//! R(C1) = (C1 - C0)/dt - rhs((C1 + C0)/2)
//! ```
//!
//! with the field recomputed from the midpoint state. Because the field is
//! linear in the coefficients this is the Crank-Nicolson system with
//! `(E1 + E0)/2` in the acceleration term.
//!
//! Unknowns are real vectors with real and imaginary parts interleaved,
//! ordered species-major, then Legendre mode, then Fourier mode.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{adaptive_gamma, poisson_field, poisson_field_into, rhs_into, Model, PenaltyMatrix};
use crate::spectral::{FieldModes, Modes, PenaltyMode, SpectralState};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Preconditioner applied on the right of the Newton systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    None,
    /// Exact inverse of the field-free part of the Jacobian, one complex
    /// tridiagonal solve per species and Fourier mode.
    Streaming,
}

impl std::str::FromStr for Preconditioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "streaming" => Ok(Self::Streaming),
            other => Err(Error::Config(format!(
                "unknown preconditioner `{other}` (expected none or streaming)"
            ))),
        }
    }
}

/// Time step, end time and nonlinear/linear solver controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "defaults::newton_abs_tol")]
    pub newton_abs_tol: f64,
    #[serde(default = "defaults::newton_rel_tol")]
    pub newton_rel_tol: f64,
    #[serde(default = "defaults::newton_max_iters")]
    pub newton_max_iters: usize,
    #[serde(default = "defaults::gmres_rel_tol")]
    pub gmres_rel_tol: f64,
    #[serde(default = "defaults::gmres_restart")]
    pub gmres_restart: usize,
    /// Cap on inner iterations per Newton update, summed over restarts.
    #[serde(default = "defaults::gmres_max_iters")]
    pub gmres_max_iters: usize,
    #[serde(default = "defaults::fd_epsilon_scale")]
    pub fd_epsilon_scale: f64,
    #[serde(default)]
    pub preconditioner: Preconditioner,
}

mod defaults {
    pub fn newton_abs_tol() -> f64 {
        1e-12
    }
    pub fn newton_rel_tol() -> f64 {
        1e-10
    }
    pub fn newton_max_iters() -> usize {
        25
    }
    pub fn gmres_rel_tol() -> f64 {
        1e-6
    }
    pub fn gmres_restart() -> usize {
        30
    }
    pub fn gmres_max_iters() -> usize {
        600
    }
    pub fn fd_epsilon_scale() -> f64 {
        1.0
    }
}

impl SolverConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            newton_abs_tol: defaults::newton_abs_tol(),
            newton_rel_tol: defaults::newton_rel_tol(),
            newton_max_iters: defaults::newton_max_iters(),
            gmres_rel_tol: defaults::gmres_rel_tol(),
            gmres_restart: defaults::gmres_restart(),
            gmres_max_iters: defaults::gmres_max_iters(),
            fd_epsilon_scale: defaults::fd_epsilon_scale(),
            preconditioner: Preconditioner::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("newton_abs_tol", self.newton_abs_tol),
            ("newton_rel_tol", self.newton_rel_tol),
            ("gmres_rel_tol", self.gmres_rel_tol),
            ("fd_epsilon_scale", self.fd_epsilon_scale),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::Config(format!("t_final must be non-negative, got {}", self.t_final)));
        }
        if self.gmres_restart < 1 || self.gmres_max_iters < 1 || self.newton_max_iters < 1 {
            return Err(Error::Config(
                "gmres_restart, gmres_max_iters and newton_max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of steps, rounding `t_final / dt` to the nearest integer.
    pub fn n_steps(&self) -> usize {
        let exact = self.t_final / self.dt;
        let n = exact.round();
        if (n - exact).abs() > 1e-9 * exact.max(1.0) {
            log::warn!(
                "t_final = {} is not a multiple of dt = {}; running {} steps to t = {}",
                self.t_final,
                self.dt,
                n,
                n * self.dt
            );
        }
        n as usize
    }
}

/// Outcome of one implicit step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: SpectralState,
    pub newton_iters: usize,
    pub gmres_iters_total: usize,
    pub initial_residual_norm: f64,
    pub final_residual_norm: f64,
    pub converged: bool,
}

/// Copies complex coefficients into an interleaved real vector.
pub fn flatten(state: &SpectralState) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * state.len());
    for c in &state.species {
        for z in c.data() {
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

/// Inverse of [`flatten`] for a state of the model's layout.
pub fn unflatten(model: &Model, x: &[f64]) -> SpectralState {
    let mut state = model.zero_state();
    let mut it = x.chunks_exact(2);
    for c in &mut state.species {
        for z in c.data_mut() {
            let p = it.next().expect("vector length matches state layout");
            *z = Complex64::new(p[0], p[1]);
        }
    }
    state
}

/// Reusable evaluator of the Crank-Nicolson residual for a fixed old state.
pub struct ResidualEvaluator<'a> {
    model: &'a Model,
    old: Vec<Complex64>,
    penalties: Vec<PenaltyMatrix>,
    dt: f64,
    block: usize,
    mid: Vec<Complex64>,
    field: Vec<Complex64>,
    rhs: Vec<Complex64>,
}

impl<'a> ResidualEvaluator<'a> {
    pub fn new(model: &'a Model, old: &SpectralState, penalties: Vec<PenaltyMatrix>, dt: f64) -> Self {
        let old: Vec<Complex64> = old.species.iter().flat_map(|c| c.data().iter().copied()).collect();
        let n = old.len();
        let w = model.domain().n_modes_x();
        Self {
            model,
            old,
            penalties,
            dt,
            block: model.domain().n_legendre * w,
            mid: vec![ZERO; n],
            field: vec![ZERO; w],
            rhs: vec![ZERO; n],
        }
    }

    /// Residual at the real-ified guess `x`, written into `out`.
    pub fn eval(&mut self, x: &[f64], out: &mut [f64]) {
        for ((m, o), p) in self.mid.iter_mut().zip(&self.old).zip(x.chunks_exact(2)) {
            *m = 0.5 * (Complex64::new(p[0], p[1]) + o);
        }
        poisson_field_into(self.model, self.mid.chunks_exact(self.block), &mut self.field);
        let blocks: Vec<&[Complex64]> = self.mid.chunks_exact(self.block).collect();
        rhs_into(self.model, &blocks, &self.field, &self.penalties, &mut self.rhs);
        let inv_dt = 1.0 / self.dt;
        for (((r, p), o), f) in out
            .chunks_exact_mut(2)
            .zip(x.chunks_exact(2))
            .zip(&self.old)
            .zip(&self.rhs)
        {
            let v = (Complex64::new(p[0], p[1]) - o) * inv_dt - f;
            r[0] = v.re;
            r[1] = v.im;
        }
    }
}

/// Crank-Nicolson residual of `guess` as a successor of `old`.
pub fn cn_residual(
    model: &Model,
    old: &SpectralState,
    guess: &SpectralState,
    penalties: &[PenaltyMatrix],
    dt: f64,
) -> SpectralState {
    let mut eval = ResidualEvaluator::new(model, old, penalties.to_vec(), dt);
    let x = flatten(guess);
    let mut r = vec![0.0; x.len()];
    eval.eval(&x, &mut r);
    unflatten(model, &r)
}

/// Factorized `(1/dt) I + (πik/L) A - D/2` for every species and Fourier mode.
struct StreamingPreconditioner {
    n_legendre: usize,
    n_modes_x: usize,
    /// Per (species, k): lower off-diagonal, modified upper and pivots.
    lower: Vec<Vec<Complex64>>,
    upper: Vec<Vec<Complex64>>,
    pivot: Vec<Vec<Complex64>>,
}

impl StreamingPreconditioner {
    fn new(model: &Model, dt: f64) -> Self {
        let domain = model.domain();
        let n_l = domain.n_legendre;
        let w = domain.n_modes_x();
        let nf = domain.n_fourier as i64;
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut pivot = Vec::new();
        for s in 0..model.n_species() {
            let basis = model.basis(s);
            let d = model.collisions(s).diag();
            for k in -nf..=nf {
                let c = Complex64::new(0.0, 0.5 * domain.wavenumber(k));
                let diag: Vec<Complex64> = (0..n_l)
                    .map(|n| Complex64::new(1.0 / dt - 0.5 * d[n], 0.0) + c * basis.sigma_bar())
                    .collect();
                // A is symmetric: sub- and super-diagonal entries are σ_{n+1}
                let off: Vec<Complex64> = (0..n_l - 1).map(|n| c * basis.sigma(n + 1)).collect();
                let mut piv = vec![ZERO; n_l];
                let mut up = vec![ZERO; n_l - 1];
                piv[0] = diag[0];
                for n in 1..n_l {
                    up[n - 1] = off[n - 1] / piv[n - 1];
                    piv[n] = diag[n] - off[n - 1] * up[n - 1];
                }
                lower.push(off);
                upper.push(up);
                pivot.push(piv);
            }
        }
        Self {
            n_legendre: n_l,
            n_modes_x: w,
            lower,
            upper,
            pivot,
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n_l = self.n_legendre;
        let w = self.n_modes_x;
        let mut y = vec![ZERO; n_l];
        for (col, ((low, up), piv)) in self.lower.iter().zip(&self.upper).zip(&self.pivot).enumerate() {
            let s = col / w;
            let kidx = col % w;
            let base = s * n_l * w;
            let at = |n: usize| 2 * (base + n * w + kidx);
            // forward substitution with the unit-lower factor, then back substitution
            y[0] = Complex64::new(v[at(0)], v[at(0) + 1]) / piv[0];
            for n in 1..n_l {
                let rhs = Complex64::new(v[at(n)], v[at(n) + 1]);
                y[n] = (rhs - low[n - 1] * y[n - 1]) / piv[n];
            }
            for n in (0..n_l - 1).rev() {
                y[n] = y[n] - up[n] * y[n + 1];
            }
            for (n, z) in y.iter().enumerate() {
                out[at(n)] = z.re;
                out[at(n) + 1] = z.im;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Result of one linear solve.
#[derive(Debug, Clone, Copy)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Restarted GMRES for `J M⁻¹ y = b`, returning `x = M⁻¹ y`.
///
/// `apply_op` evaluates `J v`, `precond` evaluates `M⁻¹ v`. The initial guess
/// is zero; convergence is relative to `‖b‖`.
pub fn gmres(
    mut apply_op: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iters: usize,
) -> (Vec<f64>, GmresOutcome) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return (
            x,
            GmresOutcome {
                iterations: 0,
                residual_norm: 0.0,
                converged: true,
            },
        );
    }
    let target = rel_tol * b_norm;
    let mut total = 0;
    let mut r = b.to_vec();
    let mut res_norm = b_norm;
    let mut work = vec![0.0; n];
    let mut z = vec![0.0; n];
    while total < max_iters {
        let m = restart.min(max_iters - total);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / res_norm).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = res_norm;
        let mut used = 0;
        for j in 0..m {
            precond(&basis[j], &mut z);
            apply_op(&z, &mut work);
            total += 1;
            // modified Gram-Schmidt
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&work, v);
                h[i][j] = hij;
                for (w, vi) in work.iter_mut().zip(v) {
                    *w -= hij * vi;
                }
            }
            let h_next = norm(&work);
            h[j + 1][j] = h_next;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                used = j;
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if g[j + 1].abs() <= target || h_next == 0.0 {
                break;
            }
            basis.push(work.iter().map(|w| w / h_next).collect());
        }
        // back substitution for the least-squares coefficients
        let mut y = vec![0.0; used];
        for i in (0..used).rev() {
            let mut acc = g[i];
            for l in i + 1..used {
                acc -= h[i][l] * y[l];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vi) in update.iter_mut().zip(v) {
                *u += yi * vi;
            }
        }
        precond(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
        // true residual for the restart
        apply_op(&x, &mut work);
        for ((ri, bi), wi) in r.iter_mut().zip(b).zip(&work) {
            *ri = bi - wi;
        }
        res_norm = norm(&r);
        if res_norm <= target || used == 0 {
            break;
        }
    }
    (
        x,
        GmresOutcome {
            iterations: total,
            residual_norm: res_norm,
            converged: res_norm <= target,
        },
    )
}

/// Adaptive penalty values of every species, computed from `state`.
pub fn adaptive_penalties(model: &Model, state: &SpectralState) -> Vec<f64> {
    let field = poisson_field(model, state);
    model
        .species()
        .iter()
        .enumerate()
        .map(|(s, sp)| {
            if sp.penalty_mode != PenaltyMode::Adaptive {
                return sp.gamma;
            }
            let g = adaptive_gamma(model.basis(s), &state.species[s], &field);
            if g.fallback {
                log::debug!("adaptive penalty of `{}` fell back to {}", sp.name, g.gamma);
            }
            g.gamma
        })
        .collect()
}

/// Penalty weights used for a step starting from `state`.
pub fn step_penalties(model: &Model, state: &SpectralState) -> Vec<PenaltyMatrix> {
    if model.has_adaptive_penalty() {
        model.penalties(Some(&adaptive_penalties(model, state)))
    } else {
        model.penalties(None)
    }
}

/// Advances `old` by one Crank-Nicolson step. A non-converged solve is
/// reported through [`StepResult::converged`]; non-finite residuals are errors.
pub fn jfnk_step(
    model: &Model,
    config: &SolverConfig,
    old: &SpectralState,
    penalties: &[PenaltyMatrix],
) -> Result<StepResult> {
    let precond = match config.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Streaming => Some(StreamingPreconditioner::new(model, config.dt)),
    };
    jfnk_step_with(model, config, old, penalties, precond.as_ref())
}

fn jfnk_step_with(
    model: &Model,
    config: &SolverConfig,
    old: &SpectralState,
    penalties: &[PenaltyMatrix],
    precond: Option<&StreamingPreconditioner>,
) -> Result<StepResult> {
    let mut eval = ResidualEvaluator::new(model, old, penalties.to_vec(), config.dt);
    let mut x = flatten(old);
    let n = x.len();
    let mut r = vec![0.0; n];
    eval.eval(&x, &mut r);
    let initial = norm(&r);
    if !initial.is_finite() {
        return Err(Error::StepRejected {
            step: 0,
            time: 0.0,
            reason: "non-finite residual at the initial guess".into(),
        });
    }
    let target = config.newton_abs_tol.max(config.newton_rel_tol * initial);
    let mut current = initial;
    let mut newton_iters = 0;
    let mut gmres_total = 0;
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut probe = vec![0.0; n];
    let mut r_probe = vec![0.0; n];

    while current > target && newton_iters < config.newton_max_iters {
        let minus_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let x_norm = norm(&x);
        let r_base = r.clone();
        let (delta, outcome) = gmres(
            |u, out| {
                let u_norm = norm(u);
                if u_norm == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let eps = config.fd_epsilon_scale * sqrt_eps * (1.0 + x_norm) / u_norm;
                for ((p, xi), ui) in probe.iter_mut().zip(&x).zip(u) {
                    *p = xi + eps * ui;
                }
                eval.eval(&probe, &mut r_probe);
                for ((o, rp), rb) in out.iter_mut().zip(&r_probe).zip(&r_base) {
                    *o = (rp - rb) / eps;
                }
            },
            |v, out| match precond {
                Some(p) => p.apply(v, out),
                None => out.copy_from_slice(v),
            },
            &minus_r,
            config.gmres_rel_tol,
            config.gmres_restart,
            config.gmres_max_iters,
        );
        gmres_total += outcome.iterations;
        for (xi, di) in x.iter_mut().zip(&delta) {
            *xi += di;
        }
        eval.eval(&x, &mut r);
        current = norm(&r);
        newton_iters += 1;
        if !current.is_finite() {
            return Err(Error::StepRejected {
                step: 0,
                time: 0.0,
                reason: format!("non-finite residual after Newton iteration {newton_iters}"),
            });
        }
        log::trace!(
            "newton {newton_iters}: residual {current:e}, gmres {} its (lin. res {:e})",
            outcome.iterations,
            outcome.residual_norm
        );
    }

    let mut state = unflatten(model, &x);
    state.symmetrize();
    Ok(StepResult {
        state,
        newton_iters,
        gmres_iters_total: gmres_total,
        initial_residual_norm: initial,
        final_residual_norm: current,
        converged: current <= target,
    })
}

/// Everything an observer sees about an accepted step.
#[derive(Debug)]
pub struct StepEvent<'a> {
    /// 1-based index of the step just taken.
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub old: &'a SpectralState,
    pub new: &'a SpectralState,
    pub field_old: &'a FieldModes,
    pub field_new: &'a FieldModes,
    pub penalties: &'a [PenaltyMatrix],
    pub result: &'a StepResult,
}

/// Receives the initial state and every accepted step of a run.
pub trait StepObserver {
    fn initial(&mut self, _model: &Model, _state: &SpectralState, _field: &FieldModes) -> Result<()> {
        Ok(())
    }

    fn step(&mut self, _model: &Model, _event: &StepEvent<'_>) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl StepObserver for NoObserver {}

/// Aggregate solver statistics of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub newton_iters_total: usize,
    pub newton_iters_max: usize,
    pub gmres_iters_total: usize,
    pub max_final_residual: f64,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The Newton solve of step `step` (1-based) did not converge.
    Rejected { step: usize, time: f64, reason: String },
}

/// Final state and statistics of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SpectralState,
    /// Time of `state`.
    pub time: f64,
    pub status: RunStatus,
    pub stats: SolverStats,
}

/// Integrates from `initial` for `config.n_steps()` steps. A rejected step
/// ends the run with [`RunStatus::Rejected`] and the last accepted state;
/// observer and non-finite residual errors propagate.
pub fn run(
    model: &Model,
    config: &SolverConfig,
    initial: SpectralState,
    observer: &mut dyn StepObserver,
) -> Result<RunOutcome> {
    config.validate()?;
    let n_steps = config.n_steps();
    let precond = match config.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Streaming => Some(StreamingPreconditioner::new(model, config.dt)),
    };
    let mut state = initial;
    let mut field = poisson_field(model, &state);
    observer.initial(model, &state, &field)?;
    let mut stats = SolverStats::default();
    for step in 1..=n_steps {
        let time = step as f64 * config.dt;
        let penalties = step_penalties(model, &state);
        let result = jfnk_step_with(model, config, &state, &penalties, precond.as_ref()).map_err(|e| match e {
            Error::StepRejected { reason, .. } => Error::StepRejected {
                step,
                time,
                reason,
            },
            other => other,
        })?;
        if !result.converged {
            let reason = format!(
                "Newton did not converge in {} iterations (residual {:e}, initial {:e})",
                result.newton_iters, result.final_residual_norm, result.initial_residual_norm
            );
            log::warn!("step {step} (t = {time}) rejected: {reason}");
            return Ok(RunOutcome {
                state,
                time: (step - 1) as f64 * config.dt,
                status: RunStatus::Rejected { step, time, reason },
                stats,
            });
        }
        stats.steps += 1;
        stats.newton_iters_total += result.newton_iters;
        stats.newton_iters_max = stats.newton_iters_max.max(result.newton_iters);
        stats.gmres_iters_total += result.gmres_iters_total;
        stats.max_final_residual = stats.max_final_residual.max(result.final_residual_norm);
        let new_field = poisson_field(model, &result.state);
        observer.step(
            model,
            &StepEvent {
                step,
                time,
                dt: config.dt,
                old: &state,
                new: &result.state,
                field_old: &field,
                field_new: &new_field,
                penalties: &penalties,
                result: &result,
            },
        )?;
        state = result.state;
        field = new_field;
    }
    Ok(RunOutcome {
        state,
        time: n_steps as f64 * config.dt,
        status: RunStatus::Completed,
        stats,
    })
}

/// Field-free linear Crank-Nicolson step solved directly, column by column.
/// Used as an independent check of the Newton solver.
pub fn linear_streaming_step(model: &Model, old: &SpectralState, dt: f64) -> SpectralState {
    let domain = model.domain();
    let n_l = domain.n_legendre;
    let nf = domain.n_fourier as i64;
    let mut out = model.zero_state();
    for (s, (c_old, c_new)) in old.species.iter().zip(out.species.iter_mut()).enumerate() {
        let basis = model.basis(s);
        let d = model.collisions(s).diag();
        for k in -nf..=nf {
            let ck = Complex64::new(0.0, 0.5 * domain.wavenumber(k));
            // (I/dt + ck A - D/2) C1 = (I/dt - ck A + D/2) C0, dense Gaussian elimination
            let col = c_old.column(k);
            let a_col = crate::operator::apply_a(basis, &col);
            let mut rhs: Vec<Complex64> = (0..n_l)
                .map(|n| col[n] / dt - ck * a_col[n] + 0.5 * d[n] * col[n])
                .collect();
            let mut m = vec![vec![ZERO; n_l]; n_l];
            for n in 0..n_l {
                m[n][n] = Complex64::new(1.0 / dt - 0.5 * d[n], 0.0) + ck * basis.sigma_bar();
                if n + 1 < n_l {
                    m[n][n + 1] = ck * basis.sigma(n + 1);
                    m[n + 1][n] = ck * basis.sigma(n + 1);
                }
            }
            for p in 0..n_l {
                let piv = (p..n_l)
                    .max_by(|&i, &j| m[i][p].norm().total_cmp(&m[j][p].norm()))
                    .unwrap();
                m.swap(p, piv);
                rhs.swap(p, piv);
                for i in p + 1..n_l {
                    let f = m[i][p] / m[p][p];
                    if f == ZERO {
                        continue;
                    }
                    for j in p..n_l {
                        let mpj = m[p][j];
                        m[i][j] -= f * mpj;
                    }
                    let rp = rhs[p];
                    rhs[i] -= f * rp;
                }
            }
            for i in (0..n_l).rev() {
                let mut acc = rhs[i];
                for j in i + 1..n_l {
                    acc -= m[i][j] * rhs[j];
                }
                rhs[i] = acc / m[i][i];
            }
            for (n, v) in rhs.into_iter().enumerate() {
                c_new.set(n, k, v);
            }
        }
    }
    out
}

#[cfg(test)]
fn state_norm_sq(state: &SpectralState) -> f64 {
    state.species.iter().map(crate::spectral::Coefficients::norm_sq).sum()
}

/// Mode vector of the field of `state`; convenience for observers.
pub fn field_of(model: &Model, state: &SpectralState) -> Modes {
    poisson_field(model, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::Background;
    use crate::spectral::{DomainConfig, Species};
    use crate::test_util::random_coefficients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(n_l: usize, n_f: usize, charge: f64, nu: f64, mode: PenaltyMode) -> Model {
        Model::new(
            DomainConfig {
                length: 2.0 * std::f64::consts::PI,
                v_min: -5.0,
                v_max: 5.0,
                n_legendre: n_l,
                n_fourier: n_f,
                epsilon0: 1.0,
            },
            vec![Species {
                name: "e".into(),
                charge,
                mass: 1.0,
                nu,
                gamma: 0.5,
                penalty_mode: mode,
                velocity_bounds: None,
            }],
            Background::None,
        )
        .unwrap()
    }

    #[test]
    fn flatten_round_trip() {
        let m = model(6, 2, -1.0, 0.0, PenaltyMode::None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let state = SpectralState::new(vec![random_coefficients(&mut rng, 6, 2)]);
        let x = flatten(&state);
        assert_eq!(x.len(), 2 * 6 * 5);
        assert_eq!(x[2], state.species[0].get(0, -1).re);
        assert_eq!(unflatten(&m, &x), state);
    }

    #[test]
    fn gmres_solves_small_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, -1.0], [0.0, 2.0, 5.0]];
        let b = [1.0, 2.0, 3.0];
        let (x, out) = gmres(
            |v, o| {
                for i in 0..3 {
                    o[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            |v, o| o.copy_from_slice(v),
            &b,
            1e-12,
            2,
            50,
        );
        assert!(out.converged);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn equilibrium_step_is_trivial() {
        let mut m = model(8, 2, -1.0, 1.0, PenaltyMode::SkipFirstThree);
        let mut state = m.zero_state();
        state.species[0].set(0, 0, Complex64::new(0.1, 0.0));
        m.neutralize(&state);
        let cfg = SolverConfig::new(0.1, 1.0);
        let res = jfnk_step(&m, &cfg, &state, &m.penalties(None)).unwrap();
        assert!(res.converged);
        assert!(res.newton_iters <= 1);
        assert_eq!(res.state, state);
    }

    #[test]
    fn free_streaming_matches_direct_solve() {
        let m = model(8, 2, 0.0, 0.5, PenaltyMode::AllModes);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let state = SpectralState::new(vec![random_coefficients(&mut rng, 8, 2)]);
        let mut cfg = SolverConfig::new(0.05, 0.05);
        cfg.gmres_rel_tol = 1e-13;
        let res = jfnk_step(&m, &cfg, &state, &m.penalties(None)).unwrap();
        assert!(res.converged);
        // finite-difference products are accurate to ~sqrt(eps): one correction remains
        assert!(res.newton_iters <= 2, "{} iterations", res.newton_iters);
        let direct = linear_streaming_step(&m, &state, 0.05);
        for (a, b) in res.state.species[0].data().iter().zip(direct.species[0].data()) {
            assert!((a - b).norm() < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn preconditioner_is_exact_for_streaming() {
        let m = model(10, 3, 0.0, 1.0, PenaltyMode::None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = SpectralState::new(vec![random_coefficients(&mut rng, 10, 3)]);
        let mut cfg = SolverConfig::new(1.0, 1.0);
        cfg.preconditioner = Preconditioner::Streaming;
        let res = jfnk_step(&m, &cfg, &state, &m.penalties(None)).unwrap();
        assert!(res.converged);
        assert!(res.gmres_iters_total <= 4, "{} GMRES iterations", res.gmres_iters_total);
        let direct = linear_streaming_step(&m, &state, 1.0);
        for (a, b) in res.state.species[0].data().iter().zip(direct.species[0].data()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn residual_vanishes_on_converged_step() {
        let mut m = model(12, 3, -1.0, 0.0, PenaltyMode::SkipFirstThree);
        let basis = m.basis(0).clone();
        let profile = crate::spectral::InitialProfile::Maxwellian {
            thermal_speed: 1.0,
            drift: 0.0,
            density: 1.0,
            amplitude: 0.05,
            mode: 1,
        };
        let c0 = crate::spectral::project_initial(&basis, 3, "e", &profile, 1e-4).unwrap();
        let state = SpectralState::new(vec![c0]);
        m.neutralize(&state);
        let cfg = SolverConfig::new(0.1, 0.1);
        let pen = m.penalties(None);
        let res = jfnk_step(&m, &cfg, &state, &pen).unwrap();
        assert!(res.converged);
        let r = cn_residual(&m, &state, &res.state, &pen, 0.1);
        let r_norm: f64 = state_norm_sq(&r).sqrt();
        assert!(r_norm < 1e-11, "{r_norm:e}");
        // mass row is exact
        assert_eq!(res.state.species[0].get(0, 0), state.species[0].get(0, 0));
    }

    #[test]
    fn zero_step_run_reports_initial_only() {
        struct Count(usize, usize);
        impl StepObserver for Count {
            fn initial(&mut self, _: &Model, _: &SpectralState, _: &FieldModes) -> Result<()> {
                self.0 += 1;
                Ok(())
            }
            fn step(&mut self, _: &Model, _: &StepEvent<'_>) -> Result<()> {
                self.1 += 1;
                Ok(())
            }
        }
        let m = model(6, 2, 0.0, 0.0, PenaltyMode::None);
        let mut obs = Count(0, 0);
        let out = run(&m, &SolverConfig::new(0.1, 0.0), m.zero_state(), &mut obs).unwrap();
        assert_eq!((obs.0, obs.1), (1, 0));
        assert_eq!(out.status, RunStatus::Completed);
        let out = run(&m, &SolverConfig::new(0.1, 0.3), m.zero_state(), &mut obs).unwrap();
        assert_eq!(obs.1, 3);
        assert!((out.time - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejected_step_ends_run() {
        let m = model(8, 2, -1.0, 0.0, PenaltyMode::None);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let state = SpectralState::new(vec![random_coefficients(&mut rng, 8, 2)]);
        let mut cfg = SolverConfig::new(0.1, 1.0);
        cfg.newton_max_iters = 1;
        cfg.gmres_max_iters = 1;
        cfg.gmres_restart = 1;
        let out = run(&m, &cfg, state.clone(), &mut NoObserver).unwrap();
        match out.status {
            RunStatus::Rejected { step, .. } => assert_eq!(step, 1),
            RunStatus::Completed => panic!("expected rejection"),
        }
        assert_eq!(out.state, state);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.1, -1.0).validate().is_err());
        assert_eq!(SolverConfig::new(0.05, 100.0).n_steps(), 2000);
        assert_eq!(SolverConfig::new(0.3, 1.0).n_steps(), 3);
    }
}
