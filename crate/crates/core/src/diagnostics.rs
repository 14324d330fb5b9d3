//! Conserved quantities, boundary balance terms and L² stability checks.
//!
//! Balance residuals use the same convolution kernels as the solver, so they
//! measure how well the scheme's algebraic conservation identities hold, not
//! discretization error.
//!
//! Potential energy carries the spatial period: `E_pot = (ε0/2) L Σ_k E_k E_{-k}`,
//! matching the `L` in the kinetic energy and the current density. The
//! discrete Ampère law is correspondingly `ε0 L ΔE_k + (dt/2) ΣJ_k - dt B^Amp_k = 0`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::Result;
use crate::integrator::{StepEvent, StepObserver};
use crate::legendre::VelocityBasis;
use crate::operator::{field_work, poisson_field, semi_discrete_rhs, Model, PenaltyMatrix};
use crate::spectral::{
    boundary_values, convolve, uniform_x_grid, Coefficients, FieldModes, Modes, SpectralState,
};

/// Imaginary parts of nominally real diagnostics above this are logged.
pub const IMAGINARY_TOLERANCE: f64 = 1e-12;

fn real_part(z: Complex64, what: &str) -> f64 {
    if z.im.abs() > IMAGINARY_TOLERANCE * z.re.abs().max(1.0) {
        log::warn!("{what} has imaginary part {:e}", z.im);
    }
    z.re
}

/// `M^s = m w L Re C[0][0]`.
pub fn mass(model: &Model, state: &SpectralState, s: usize) -> f64 {
    let sp = &model.species()[s];
    let c00 = real_part(state.species[s].get(0, 0), "C[0][0]");
    sp.mass * model.basis(s).width() * model.domain().length * c00
}

/// `P^s = m w L σ_1 C[1][0] + σ̄ M^s` for every species, and their sum.
pub fn momentum(model: &Model, state: &SpectralState) -> (Vec<f64>, f64) {
    let per: Vec<f64> = (0..model.n_species())
        .map(|s| {
            let sp = &model.species()[s];
            let b = model.basis(s);
            let c10 = real_part(state.species[s].get(1, 0), "C[1][0]");
            sp.mass * b.width() * model.domain().length * b.sigma(1) * c10 + b.sigma_bar() * mass(model, state, s)
        })
        .collect();
    let total = per.iter().sum();
    (per, total)
}

/// `(m/2) w L (σ_2σ_1 C20 + 2σ_1σ̄ C10 + (σ_1² + σ̄²) C00)`.
pub fn kinetic_energy(model: &Model, state: &SpectralState, s: usize) -> f64 {
    let sp = &model.species()[s];
    let b = model.basis(s);
    let c = &state.species[s];
    let combo = kinetic_combination(b, c.get(0, 0), c.get(1, 0), c.get(2, 0));
    0.5 * sp.mass * b.width() * model.domain().length * real_part(combo, "kinetic energy")
}

fn kinetic_combination(b: &VelocityBasis, c0: Complex64, c1: Complex64, c2: Complex64) -> Complex64 {
    let (s1, s2, sb) = (b.sigma(1), b.sigma(2), b.sigma_bar());
    s2 * s1 * c2 + 2.0 * s1 * sb * c1 + (s1 * s1 + sb * sb) * c0
}

/// `(ε0/2) L Σ_k E_k E_{-k}`.
pub fn potential_energy(model: &Model, field: &FieldModes) -> f64 {
    let d = model.domain();
    let sum: Complex64 = field.wavenumbers().map(|k| field.get(k) * field.get(-k)).sum();
    0.5 * d.epsilon0 * d.length * real_part(sum, "potential energy")
}

/// Kinetic energy per species, potential energy and their total.
#[derive(Debug, Clone, PartialEq)]
pub struct Energy {
    pub kinetic: Vec<f64>,
    pub potential: f64,
    pub total: f64,
}

pub fn energy(model: &Model, state: &SpectralState, field: &FieldModes) -> Energy {
    let kinetic: Vec<f64> = (0..model.n_species()).map(|s| kinetic_energy(model, state, s)).collect();
    let potential = potential_energy(model, field);
    let total = kinetic.iter().sum::<f64>() + potential;
    Energy {
        kinetic,
        potential,
        total,
    }
}

/// `Σ_{n,k} |C[n][k]|²` of one species.
pub fn l2_norm_sq(coeffs: &Coefficients) -> f64 {
    coeffs.norm_sq()
}

/// Ratio of the current to the initial `Σ|C|²`; `None` for a zero initial state.
pub fn relative_l2(current: &Coefficients, initial: &Coefficients) -> Option<f64> {
    let base = initial.norm_sq();
    (base > 0.0).then(|| current.norm_sq() / base)
}

/// `max |f|` at `v_a` and `v_b` over `n_x` uniform points in `x`.
pub fn boundary_max(basis: &VelocityBasis, coeffs: &Coefficients, length: f64, n_x: usize) -> f64 {
    let (lo, hi) = boundary_values(basis, coeffs);
    uniform_x_grid(length, n_x)
        .into_iter()
        .map(|x| lo.eval(x, length).norm().max(hi.eval(x, length).norm()))
        .fold(0.0, f64::max)
}

/// Boundary quantities of one Crank-Nicolson step, built from the sums
/// `C^{τ+1} + C^τ` and `E^{τ+1} + E^τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBoundaryTerms {
    /// `B^s_{n,0}` for `n = 0, 1, 2` per species.
    pub low_modes: Vec<[f64; 3]>,
    /// `B^s_kin` per species.
    pub kinetic: Vec<f64>,
    /// `B^Amp_k`, zero at `k = 0`.
    pub ampere: Modes,
    pub potential: f64,
}

/// `B^s_{n,0} = -G_n (q/4) w L [E_sum ⋆ δ_v[f_sum phi_n]]_0` and the terms built on it.
pub fn step_boundary_terms(
    model: &Model,
    old: &SpectralState,
    new: &SpectralState,
    penalties: &[PenaltyMatrix],
) -> StepBoundaryTerms {
    let domain = model.domain();
    let sum = old.sum_with(new);
    let e_sum = poisson_field(model, &sum);
    let nf = domain.n_fourier as i64;
    let mut low_modes = Vec::new();
    let mut kinetic = Vec::new();
    let mut ampere = Modes::zeros(domain.n_fourier);
    for s in 0..model.n_species() {
        let sp = &model.species()[s];
        let b = model.basis(s);
        let g = penalties[s].diag();
        let delta = crate::operator::boundary_term(b, &sum.species[s]);
        let scale = sp.charge * b.width() * domain.length / 4.0;
        let mut terms = [0.0; 3];
        for (n, t) in terms.iter_mut().enumerate() {
            if g[n] != 0.0 {
                let conv = convolve(&e_sum, &delta.row_modes(n));
                *t = -g[n] * scale * real_part(conv[0], "boundary term");
            }
        }
        let kin = 0.5
            * real_part(
                kinetic_combination(
                    b,
                    Complex64::new(terms[0], 0.0),
                    Complex64::new(terms[1], 0.0),
                    Complex64::new(terms[2], 0.0),
                ),
                "B_kin",
            );
        low_modes.push(terms);
        kinetic.push(kin);
        if g[0] != 0.0 {
            let conv = convolve(&e_sum, &delta.row_modes(0));
            let factor = g[0] * sp.charge * sp.charge / (4.0 * sp.mass) * b.width() * domain.length;
            for k in -nf..=nf {
                if k != 0 {
                    ampere[k] -= factor * conv[k] / Complex64::new(0.0, domain.wavenumber(k));
                }
            }
        }
    }
    let pot: Complex64 = (-nf..=nf).map(|k| e_sum.get(-k) * ampere[k]).sum();
    StepBoundaryTerms {
        low_modes,
        kinetic,
        ampere,
        potential: 0.5 * real_part(pot, "B_pot"),
    }
}

/// Residuals of the fully discrete mass, momentum and energy laws.
#[derive(Debug, Clone, PartialEq)]
pub struct Balances {
    /// `ΔM^s - dt B^s_{0,0}` per species.
    pub mass_per_species: Vec<f64>,
    /// The per-species mass residual of largest magnitude.
    pub mass: f64,
    /// `ΔP - dt Σ_s (σ_1 B^s_{1,0} + σ̄ B^s_{0,0})`.
    pub momentum: f64,
    /// `ΔE_tot - dt (Σ_s B^s_kin + B_pot)`.
    pub energy: f64,
}

pub fn discrete_balances(
    model: &Model,
    old: &SpectralState,
    new: &SpectralState,
    dt: f64,
    penalties: &[PenaltyMatrix],
) -> Balances {
    let terms = step_boundary_terms(model, old, new, penalties);
    let mass_per_species: Vec<f64> = (0..model.n_species())
        .map(|s| mass(model, new, s) - mass(model, old, s) - dt * terms.low_modes[s][0])
        .collect();
    let mass_res = mass_per_species
        .iter()
        .copied()
        .fold(0.0, |acc: f64, m| if m.abs() > acc.abs() { m } else { acc });
    let boundary_momentum: f64 = (0..model.n_species())
        .map(|s| {
            let b = model.basis(s);
            b.sigma(1) * terms.low_modes[s][1] + b.sigma_bar() * terms.low_modes[s][0]
        })
        .sum();
    let momentum_res = momentum(model, new).1 - momentum(model, old).1 - dt * boundary_momentum;
    let e_old = energy(model, old, &poisson_field(model, old));
    let e_new = energy(model, new, &poisson_field(model, new));
    let energy_res = e_new.total - e_old.total - dt * (terms.kinetic.iter().sum::<f64>() + terms.potential);
    Balances {
        mass_per_species,
        mass: mass_res,
        momentum: momentum_res,
        energy: energy_res,
    }
}

/// `ε0 L (E^{τ+1}_k - E^τ_k) + (dt/2) Σ_s (J^s_k(τ+1) + J^s_k(τ)) - dt B^Amp_k`.
pub fn ampere_residual(
    model: &Model,
    old: &SpectralState,
    new: &SpectralState,
    dt: f64,
    penalties: &[PenaltyMatrix],
) -> Modes {
    let d = model.domain();
    let terms = step_boundary_terms(model, old, new, penalties);
    let e_old = poisson_field(model, old);
    let e_new = poisson_field(model, new);
    let sum = old.sum_with(new);
    let mut j_sum = Modes::zeros(d.n_fourier);
    for s in 0..model.n_species() {
        let j = crate::operator::current_density(model, &sum, s);
        for (a, b) in j_sum.values_mut().iter_mut().zip(j.values()) {
            *a += b;
        }
    }
    let nf = d.n_fourier as i64;
    let mut out = Modes::zeros(d.n_fourier);
    for k in -nf..=nf {
        if k != 0 {
            out[k] = d.epsilon0 * d.length * (e_new[k] - e_old[k]) + 0.5 * dt * j_sum[k] - dt * terms.ampere[k];
        }
    }
    out
}

/// Total current at `k = 0`, the Ampère consistency constant.
pub fn mean_current(model: &Model, state: &SpectralState) -> f64 {
    (0..model.n_species())
        .map(|s| real_part(crate::operator::current_density(model, state, s)[0], "J_0"))
        .sum()
}

/// Both sides of the semi-discrete L² identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    /// `2 Re Σ_s Σ_{n,k} conj(C) dC/dt`.
    pub lhs: f64,
    /// `Σ_s (q/m)(X_s - 2 Σ_n G_n S_n) - 2 Σ_n |D_n| Σ_k |C_{n,k}|²`,
    /// with `X_s = [E ⋆ δ_v[f²]]_0` and `S_n = Σ_k conj(C_{n,k}) [E ⋆ δ_v[f phi_n]]_k`.
    pub rhs: f64,
    /// Collisional part of `rhs`.
    pub collisional: f64,
    /// `-Σ_s (q/m) X_s - 2Σ|D|Σ|C|²`: the identity for the full boundary
    /// term (`G = 1` on every mode).
    pub unpenalized_rhs: f64,
    pub discrepancy: f64,
}

pub fn stability_identity_check(
    model: &Model,
    state: &SpectralState,
    field: &FieldModes,
    penalties: &[PenaltyMatrix],
) -> StabilityCheck {
    let rhs_state = semi_discrete_rhs(model, state, field, penalties);
    let lhs: f64 = 2.0
        * state
            .species
            .iter()
            .zip(&rhs_state.species)
            .map(|(c, r)| c.data().iter().zip(r.data()).map(|(a, b)| (a.conj() * b).re).sum::<f64>())
            .sum::<f64>();
    let mut rhs = 0.0;
    let mut collisional = 0.0;
    let mut unpenalized = 0.0;
    for s in 0..model.n_species() {
        let sp = &model.species()[s];
        let c = &state.species[s];
        let work = field_work(model.basis(s), c, field);
        let penalized: Complex64 = work
            .boundary_by_mode
            .iter()
            .zip(penalties[s].diag())
            .map(|(sn, g)| sn * *g)
            .sum();
        let coll: f64 = -2.0
            * model
                .collisions(s)
                .diag()
                .iter()
                .enumerate()
                .map(|(n, d)| d.abs() * c.row(n).iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>();
        let x = work.boundary_square.re;
        rhs += sp.q_over_m() * (x - 2.0 * penalized.re) + coll;
        unpenalized += -sp.q_over_m() * x + coll;
        collisional += coll;
    }
    StabilityCheck {
        lhs,
        rhs,
        collisional,
        unpenalized_rhs: unpenalized,
        discrepancy: lhs - rhs,
    }
}

/// One row of the diagnostics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: Vec<f64>,
    pub momentum: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    pub l2_rel: Vec<f64>,
    pub f_bc_max: Vec<f64>,
    pub potential_energy: f64,
    pub total_energy: f64,
    pub total_momentum: f64,
    /// `|E_k|` for the requested `k`, in order.
    pub field_modes: Vec<f64>,
    pub mass_balance: f64,
    pub momentum_balance: f64,
    pub energy_balance: f64,
}

impl DiagnosticsRecord {
    /// Evaluates every quantity of `state`; balances are left at zero.
    pub fn evaluate(model: &Model, state: &SpectralState, initial_l2: &[f64], t: f64, ks: &[i64]) -> Self {
        let field = poisson_field(model, state);
        let n_x = model.domain().output_grid_x();
        let (momentum_per, total_momentum) = momentum(model, state);
        let en = energy(model, state, &field);
        let l2_rel = state
            .species
            .iter()
            .zip(initial_l2)
            .map(|(c, &base)| if base > 0.0 { c.norm_sq() / base } else { f64::NAN })
            .collect();
        Self {
            t,
            mass: (0..model.n_species()).map(|s| mass(model, state, s)).collect(),
            momentum: momentum_per,
            kinetic_energy: en.kinetic,
            l2_rel,
            f_bc_max: (0..model.n_species())
                .map(|s| boundary_max(model.basis(s), &state.species[s], model.domain().length, n_x))
                .collect(),
            potential_energy: en.potential,
            total_energy: en.total,
            total_momentum,
            field_modes: ks.iter().map(|&k| field.get(k).norm()).collect(),
            mass_balance: 0.0,
            momentum_balance: 0.0,
            energy_balance: 0.0,
        }
    }

    /// Fields in CSV column order.
    pub fn values(&self) -> Vec<f64> {
        let mut out = vec![self.t];
        for s in 0..self.mass.len() {
            out.extend([
                self.mass[s],
                self.momentum[s],
                self.kinetic_energy[s],
                self.l2_rel[s],
                self.f_bc_max[s],
            ]);
        }
        out.extend([self.potential_energy, self.total_energy, self.total_momentum]);
        out.extend(&self.field_modes);
        out.extend([self.mass_balance, self.momentum_balance, self.energy_balance]);
        out
    }
}

/// CSV header matching [`DiagnosticsRecord::values`].
pub fn csv_header(species: &[&str], ks: &[i64]) -> Vec<String> {
    let mut out = vec!["t".to_string()];
    for name in species {
        for q in ["M", "P", "E_kin", "l2_rel", "f_bc_max"] {
            out.push(format!("{q}_{name}"));
        }
    }
    out.extend(["E_pot", "E_tot", "P_total"].map(String::from));
    out.extend(ks.iter().map(|k| format!("abs_E_{k}")));
    out.extend(["mass_balance", "momentum_balance", "energy_balance"].map(String::from));
    out
}

/// Extremes over every step of a run, including steps between records.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub max_abs_mass_balance: f64,
    pub max_abs_momentum_balance: f64,
    pub max_abs_energy_balance: f64,
    /// `max_t |M(t) - M(0)| / |M(0)|` over species with non-zero mass.
    pub max_rel_mass_change: f64,
    pub max_abs_momentum_change: f64,
    pub max_rel_energy_change: f64,
    /// Largest `|Σ|C|²(τ+1) / Σ|C|²(τ) - 1|` over steps (all species together).
    pub max_abs_l2_step_change: f64,
    /// Largest increase of `Σ|C|²` over one step, relative to its value.
    pub max_l2_step_increase: f64,
    /// Largest `Σ|C|²(t) / Σ|C|²(0)` seen.
    pub max_l2_ratio: f64,
}

/// Observer that evaluates diagnostics on every step, keeps the records of
/// every `cadence`-th step and optionally streams them to CSV.
pub struct Recorder {
    cadence: usize,
    ks: Vec<i64>,
    initial_l2: Vec<f64>,
    initial_mass: Vec<f64>,
    initial_momentum: f64,
    initial_energy: f64,
    initial_l2_total: f64,
    keep: bool,
    records: Vec<DiagnosticsRecord>,
    summary: RunSummary,
    writer: Option<csv::Writer<File>>,
}

impl Recorder {
    pub fn new(cadence: usize, ks: Vec<i64>) -> Self {
        Self {
            cadence: cadence.max(1),
            ks,
            initial_l2: Vec::new(),
            initial_mass: Vec::new(),
            initial_momentum: 0.0,
            initial_energy: 0.0,
            initial_l2_total: 0.0,
            keep: true,
            records: Vec::new(),
            summary: RunSummary::default(),
            writer: None,
        }
    }

    /// Streams records to `path` as they are produced.
    pub fn with_csv(mut self, path: &Path, keep_in_memory: bool) -> Result<Self> {
        let file = File::create(path)?;
        self.writer = Some(csv::Writer::from_writer(file));
        self.keep = keep_in_memory;
        Ok(self)
    }

    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }

    pub fn summary(&self) -> &RunSummary {
        &self.summary
    }

    /// Flushes the CSV stream.
    pub fn finish(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    fn emit(&mut self, record: DiagnosticsRecord) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.write_record(record.values().iter().map(|v| format!("{v:.16e}")))
                .map_err(csv_error)?;
            w.flush()?;
        }
        if self.keep {
            self.records.push(record);
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io.into(),
        other => crate::error::Error::Parse {
            context: "diagnostics CSV".into(),
            message: format!("{other:?}"),
        },
    }
}

impl StepObserver for Recorder {
    fn initial(&mut self, model: &Model, state: &SpectralState, field: &FieldModes) -> Result<()> {
        self.initial_l2 = state.species.iter().map(Coefficients::norm_sq).collect();
        self.initial_l2_total = self.initial_l2.iter().sum();
        self.initial_mass = (0..model.n_species()).map(|s| mass(model, state, s)).collect();
        self.initial_momentum = momentum(model, state).1;
        self.initial_energy = energy(model, state, field).total;
        self.summary = RunSummary {
            max_l2_ratio: 1.0,
            ..RunSummary::default()
        };
        if let Some(w) = self.writer.as_mut() {
            let names: Vec<&str> = model.species().iter().map(|s| s.name.as_str()).collect();
            w.write_record(csv_header(&names, &self.ks)).map_err(csv_error)?;
        }
        let record = DiagnosticsRecord::evaluate(model, state, &self.initial_l2, 0.0, &self.ks);
        self.emit(record)
    }

    fn step(&mut self, model: &Model, event: &StepEvent<'_>) -> Result<()> {
        let balances = discrete_balances(model, event.old, event.new, event.dt, event.penalties);
        let s = &mut self.summary;
        s.steps = event.step;
        s.max_abs_mass_balance = s.max_abs_mass_balance.max(balances.mass.abs());
        s.max_abs_momentum_balance = s.max_abs_momentum_balance.max(balances.momentum.abs());
        s.max_abs_energy_balance = s.max_abs_energy_balance.max(balances.energy.abs());
        for (sp, &m0) in self.initial_mass.iter().enumerate() {
            if m0 != 0.0 {
                let rel = ((mass(model, event.new, sp) - m0) / m0).abs();
                s.max_rel_mass_change = s.max_rel_mass_change.max(rel);
            }
        }
        s.max_abs_momentum_change = s
            .max_abs_momentum_change
            .max((momentum(model, event.new).1 - self.initial_momentum).abs());
        let e_new = energy(model, event.new, event.field_new).total;
        if self.initial_energy != 0.0 {
            s.max_rel_energy_change = s
                .max_rel_energy_change
                .max(((e_new - self.initial_energy) / self.initial_energy).abs());
        }
        let l2_old: f64 = event.old.species.iter().map(Coefficients::norm_sq).sum();
        let l2_new: f64 = event.new.species.iter().map(Coefficients::norm_sq).sum();
        if l2_old > 0.0 {
            let change = l2_new / l2_old - 1.0;
            s.max_abs_l2_step_change = s.max_abs_l2_step_change.max(change.abs());
            s.max_l2_step_increase = s.max_l2_step_increase.max(change);
        }
        if self.initial_l2_total > 0.0 {
            s.max_l2_ratio = s.max_l2_ratio.max(l2_new / self.initial_l2_total);
        }
        if event.step.is_multiple_of(self.cadence) {
            let mut record = DiagnosticsRecord::evaluate(model, event.new, &self.initial_l2, event.time, &self.ks);
            record.mass_balance = balances.mass;
            record.momentum_balance = balances.momentum;
            record.energy_balance = balances.energy;
            self.emit(record)?;
        }
        Ok(())
    }
}

/// Writes records to `path` with the standard header.
pub fn write_csv(path: &Path, species: &[&str], ks: &[i64], records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(csv_header(species, ks)).map_err(csv_error)?;
    for r in records {
        w.write_record(r.values().iter().map(|v| format!("{v:.16e}")))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends a line to a writer; used for human-readable summaries.
pub fn write_summary(out: &mut impl Write, summary: &RunSummary) -> Result<()> {
    writeln!(
        out,
        "steps {} | max |mass bal| {:e} | max |momentum bal| {:e} | max |energy bal| {:e}",
        summary.steps, summary.max_abs_mass_balance, summary.max_abs_momentum_balance, summary.max_abs_energy_balance
    )?;
    Ok(())
}
