//! Operators of the semi-discrete Legendre-Fourier system.
//!
//! For species `s` the coefficients evolve as
//!
//! ```text
//! dC[n][k]/dt = -(2πik/L) (A C_k)[n]
//!             + (q/m) [E ⋆ (B C - G δ_v[f phi])]_{n,k}
//!             + D[n] C[n][k]
//! ```
//!
//! where `A` is multiplication by `v`, `B` the transposed derivative, `δ_v` the
//! boundary term from integrating the velocity derivative by parts, `G` the
//! penalty diagonal and `D` the collisional filter. The field is never an
//! independent unknown: it is recomputed from the charge density by Poisson.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::legendre::VelocityBasis;
use crate::spectral::{
    boundary_values_into, convolve_into, convolve_zero_mode, Coefficients, DomainConfig,
    FieldModes, Modes, PenaltyMode, SpectralState, Species,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Net charge density above which the plasma is considered non-neutral.
pub const NEUTRALITY_TOLERANCE: f64 = 1e-12;

/// Boundary sums below this magnitude make the adaptive penalty ill-defined.
pub const ADAPTIVE_DENOMINATOR_FLOOR: f64 = 1e-14;

/// Penalty used when the adaptive ratio cannot be formed.
pub const ADAPTIVE_FALLBACK_GAMMA: f64 = 0.5;

/// Diagonal Legendre filter `D[n] = -ν n(n-1)(n-2) / ((N-1)(N-2)(N-3))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionOperator {
    diag: Vec<f64>,
}

impl CollisionOperator {
    pub fn new(nu: f64, n_modes: usize) -> Self {
        assert!(n_modes >= 4, "collision operator needs at least four modes");
        let top = ((n_modes - 1) * (n_modes - 2) * (n_modes - 3)) as f64;
        let diag = (0..n_modes)
            .map(|n| {
                if n < 3 {
                    0.0
                } else {
                    -nu * (n * (n - 1) * (n - 2)) as f64 / top
                }
            })
            .collect();
        Self { diag }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn is_zero(&self) -> bool {
        self.diag.iter().all(|&d| d == 0.0)
    }
}

/// Diagonal penalty weights `G[n]` of one species.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    diag: Vec<f64>,
}

impl PenaltyMatrix {
    /// Weights for a fixed mode. `Adaptive` places `gamma` on `n >= 3`,
    /// which is how a per-step adaptive value is installed.
    pub fn new(mode: PenaltyMode, gamma: f64, n_modes: usize) -> Self {
        let diag = (0..n_modes)
            .map(|n| match mode {
                PenaltyMode::None => 0.0,
                PenaltyMode::AllModes => gamma,
                PenaltyMode::SkipFirstThree | PenaltyMode::Adaptive => {
                    if n < 3 {
                        0.0
                    } else {
                        gamma
                    }
                }
            })
            .collect();
        Self { diag }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

/// Charge density of a non-dynamic background species at `k = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// No background; the kinetic species must be neutral on their own.
    None,
    /// Fixed uniform charge density.
    Fixed(f64),
}

/// Everything needed to evaluate the semi-discrete operators.
#[derive(Debug, Clone)]
pub struct Model {
    domain: DomainConfig,
    species: Vec<Species>,
    bases: Vec<VelocityBasis>,
    collisions: Vec<CollisionOperator>,
    background: Background,
}

impl Model {
    pub fn new(domain: DomainConfig, species: Vec<Species>, background: Background) -> Result<Self> {
        domain.validate()?;
        if species.is_empty() {
            return Err(Error::Config("at least one kinetic species is required".into()));
        }
        let mut bases = Vec::with_capacity(species.len());
        let mut collisions = Vec::with_capacity(species.len());
        for s in &species {
            s.validate()?;
            let (a, b) = s.velocity_interval(&domain);
            bases.push(VelocityBasis::new(a, b, domain.n_legendre)?);
            collisions.push(CollisionOperator::new(s.nu, domain.n_legendre));
        }
        Ok(Self {
            domain,
            species,
            bases,
            collisions,
            background,
        })
    }

    pub fn domain(&self) -> &DomainConfig {
        &self.domain
    }

    pub fn species(&self) -> &[Species] {
        &self.species
    }

    pub fn basis(&self, s: usize) -> &VelocityBasis {
        &self.bases[s]
    }

    pub fn collisions(&self, s: usize) -> &CollisionOperator {
        &self.collisions[s]
    }

    pub fn background(&self) -> Background {
        self.background
    }

    /// Replaces the background by the uniform charge that neutralizes `state`.
    pub fn neutralize(&mut self, state: &SpectralState) {
        self.background = Background::Fixed(-self.kinetic_charge_density(state));
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Mean charge density `Σ_s q w_s Re C^s[0][0]` of the kinetic species.
    pub fn kinetic_charge_density(&self, state: &SpectralState) -> f64 {
        self.species
            .iter()
            .zip(&self.bases)
            .zip(&state.species)
            .map(|((sp, b), c)| sp.charge * b.width() * c.get(0, 0).re)
            .sum()
    }

    /// Net mean charge density including the background.
    pub fn net_charge_density(&self, state: &SpectralState) -> f64 {
        let bg = match self.background {
            Background::None => 0.0,
            Background::Fixed(rho) => rho,
        };
        bg + self.kinetic_charge_density(state)
    }

    /// A zero state with the model's layout.
    pub fn zero_state(&self) -> SpectralState {
        SpectralState::new(
            (0..self.n_species())
                .map(|_| Coefficients::zeros(self.domain.n_legendre, self.domain.n_fourier))
                .collect(),
        )
    }

    /// Penalty weights for every species. `adaptive` supplies the current
    /// per-species value for species in adaptive mode.
    pub fn penalties(&self, adaptive: Option<&[f64]>) -> Vec<PenaltyMatrix> {
        self.species
            .iter()
            .enumerate()
            .map(|(s, sp)| {
                let gamma = match (sp.penalty_mode, adaptive) {
                    (PenaltyMode::Adaptive, Some(values)) => values[s],
                    _ => sp.gamma,
                };
                PenaltyMatrix::new(sp.penalty_mode, gamma, self.domain.n_legendre)
            })
            .collect()
    }

    pub fn has_adaptive_penalty(&self) -> bool {
        self.species.iter().any(|s| s.penalty_mode == PenaltyMode::Adaptive)
    }
}

/// `(A c)[n] = σ_{n+1} c_{n+1} + σ_n c_{n-1} + σ̄ c_n` for one column.
pub fn apply_a(basis: &VelocityBasis, column: &[Complex64]) -> Vec<Complex64> {
    let n_modes = column.len();
    let sigma = basis.sigmas();
    (0..n_modes)
        .map(|n| {
            let mut out = basis.sigma_bar() * column[n];
            if n + 1 < n_modes {
                out += sigma[n + 1] * column[n + 1];
            }
            if n > 0 {
                out += sigma[n] * column[n - 1];
            }
            out
        })
        .collect()
}

/// `(B c)[n] = Σ_{i<n} σ_{n,i} c_i` for one column, in `O(N_L)`.
///
/// `σ_{n,i} = 2 sqrt((2n+1)(2i+1)) / w` on odd `n - i`, so the sum only needs
/// running totals of `sqrt(2i+1) c_i` split by the parity of `i`.
pub fn apply_b(basis: &VelocityBasis, column: &[Complex64]) -> Vec<Complex64> {
    let sqrt_odd = basis.sqrt_odd();
    let scale = 2.0 / basis.width();
    let mut partial = [ZERO; 2];
    column
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            let out = scale * sqrt_odd[n] * partial[(n + 1) % 2];
            partial[n % 2] += sqrt_odd[n] * c;
            out
        })
        .collect()
}

/// `A` applied to every Fourier column, written into `out` (same layout).
pub(crate) fn apply_a_rows(basis: &VelocityBasis, data: &[Complex64], w: usize, out: &mut [Complex64]) {
    let n_modes = data.len() / w;
    let sigma = basis.sigmas();
    let sbar = basis.sigma_bar();
    for n in 0..n_modes {
        let row_out = &mut out[n * w..(n + 1) * w];
        let row = &data[n * w..(n + 1) * w];
        for (o, c) in row_out.iter_mut().zip(row) {
            *o = sbar * c;
        }
        if n + 1 < n_modes {
            let up = &data[(n + 1) * w..(n + 2) * w];
            for (o, c) in row_out.iter_mut().zip(up) {
                *o += sigma[n + 1] * c;
            }
        }
        if n > 0 {
            let down = &data[(n - 1) * w..n * w];
            for (o, c) in row_out.iter_mut().zip(down) {
                *o += sigma[n] * c;
            }
        }
    }
}

/// `B` applied to every Fourier column, written into `out` (same layout).
pub(crate) fn apply_b_rows(basis: &VelocityBasis, data: &[Complex64], w: usize, out: &mut [Complex64]) {
    let sqrt_odd = basis.sqrt_odd();
    let scale = 2.0 / basis.width();
    let mut partial = [vec![ZERO; w], vec![ZERO; w]];
    for (n, (row, row_out)) in data.chunks_exact(w).zip(out.chunks_exact_mut(w)).enumerate() {
        let f = scale * sqrt_odd[n];
        for (o, p) in row_out.iter_mut().zip(&partial[(n + 1) % 2]) {
            *o = f * p;
        }
        for (p, c) in partial[n % 2].iter_mut().zip(row) {
            *p += sqrt_odd[n] * c;
        }
    }
}

/// Boundary term `δ_v[f phi_n]_k = (F_b[k] phi_n(v_b) - F_a[k] phi_n(v_a)) / w`.
pub fn boundary_term(basis: &VelocityBasis, coeffs: &Coefficients) -> Coefficients {
    let w = coeffs.n_modes_x();
    let (even, odd) = boundary_differences(basis, coeffs.data(), w);
    let mut out = Coefficients::zeros(coeffs.n_legendre(), coeffs.n_fourier());
    for (n, row) in out.data_mut().chunks_exact_mut(w).enumerate() {
        let src = if n % 2 == 0 { &even } else { &odd };
        let s = basis.sqrt_odd()[n];
        for (o, d) in row.iter_mut().zip(src) {
            *o = s * d;
        }
    }
    out
}

/// `(F_b - F_a) / w` and `(F_b + F_a) / w`: the boundary term of mode `n` is
/// `sqrt(2n+1)` times the first for even `n` and the second for odd `n`.
fn boundary_differences(basis: &VelocityBasis, data: &[Complex64], w: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut at_min = vec![ZERO; w];
    let mut at_max = vec![ZERO; w];
    boundary_values_into(basis, data, &mut at_min, &mut at_max);
    let inv = 1.0 / basis.width();
    let even = at_max.iter().zip(&at_min).map(|(b, a)| (b - a) * inv).collect();
    let odd = at_max.iter().zip(&at_min).map(|(b, a)| (b + a) * inv).collect();
    (even, odd)
}

/// Field from the charge density, without the neutrality check.
pub fn poisson_field(model: &Model, state: &SpectralState) -> FieldModes {
    let domain = model.domain();
    let mut field = Modes::zeros(domain.n_fourier);
    poisson_field_into(model, state.species.iter().map(Coefficients::data), field.values_mut());
    field
}

pub(crate) fn poisson_field_into<'a>(
    model: &Model,
    species_data: impl Iterator<Item = &'a [Complex64]>,
    out: &mut [Complex64],
) {
    let domain = model.domain();
    let nf = domain.n_fourier as i64;
    let w = out.len();
    out.fill(ZERO);
    for (s, data) in species_data.enumerate() {
        let weight = model.species()[s].charge * model.basis(s).width();
        // row 0 holds C[0][k]
        for (o, c) in out.iter_mut().zip(&data[..w]) {
            *o += weight * c;
        }
    }
    for (idx, o) in out.iter_mut().enumerate() {
        let k = idx as i64 - nf;
        if k == 0 {
            *o = ZERO;
        } else {
            // E_k = L ρ_k / (ε0 2πik)
            let denom = Complex64::new(0.0, domain.epsilon0 * domain.wavenumber(k));
            *o /= denom;
        }
    }
}

/// Electric field from Poisson's equation, after checking neutrality.
pub fn poisson_solve(model: &Model, state: &SpectralState) -> Result<FieldModes> {
    let net = model.net_charge_density(state);
    if net.abs() > NEUTRALITY_TOLERANCE {
        return Err(Error::Neutrality {
            net_charge: net,
            tolerance: NEUTRALITY_TOLERANCE,
        });
    }
    Ok(poisson_field(model, state))
}

/// `J^s_k = q w L (σ_1 C[1][k] + σ̄ C[0][k])`.
pub fn current_density(model: &Model, state: &SpectralState, s: usize) -> Modes {
    let basis = model.basis(s);
    let c = &state.species[s];
    let factor = model.species()[s].charge * basis.width() * model.domain().length;
    Modes::from_values(
        c.row(0)
            .iter()
            .zip(c.row(1))
            .map(|(c0, c1)| factor * (basis.sigma(1) * c1 + basis.sigma_bar() * c0))
            .collect(),
    )
}

/// `Q^s_k = (2πik/L)^{-1} w L q²/m [E ⋆ δ_v[f phi_0]]_k` for `k != 0`; `Q_0 = 0`.
pub fn ampere_boundary_q(model: &Model, state: &SpectralState, field: &FieldModes, s: usize) -> Modes {
    let domain = model.domain();
    let basis = model.basis(s);
    let sp = &model.species()[s];
    let w = domain.n_modes_x();
    let (even, _) = boundary_differences(basis, state.species[s].data(), w);
    let mut conv = vec![ZERO; w];
    convolve_into(field.values(), &even, &mut conv);
    let factor = basis.width() * domain.length * sp.charge * sp.charge / sp.mass;
    let nf = domain.n_fourier as i64;
    let mut out = Modes::zeros(domain.n_fourier);
    for k in -nf..=nf {
        if k != 0 {
            out[k] = factor * conv[(k + nf) as usize] / Complex64::new(0.0, domain.wavenumber(k));
        }
    }
    out
}

/// Writes the semi-discrete right-hand side of every species for the given
/// coefficients and field into `out` (flat, species-major).
pub(crate) fn rhs_into(
    model: &Model,
    species_data: &[&[Complex64]],
    field: &[Complex64],
    penalties: &[PenaltyMatrix],
    out: &mut [Complex64],
) {
    let domain = model.domain();
    let w = domain.n_modes_x();
    let nf = domain.n_fourier as isize;
    let block = domain.n_legendre * w;
    let field_is_zero = field.iter().all(|e| *e == ZERO);
    let mut bc = vec![ZERO; block];
    let mut tmp = vec![ZERO; w];
    let mut conv_even = vec![ZERO; w];
    let mut conv_odd = vec![ZERO; w];
    for (s, (data, out_s)) in species_data.iter().zip(out.chunks_exact_mut(block)).enumerate() {
        let basis = model.basis(s);
        let sp = &model.species()[s];
        let q_over_m = sp.q_over_m();
        let collisions = model.collisions(s).diag();
        let penalty = penalties[s].diag();

        // streaming: -(2πik/L) A C
        apply_a_rows(basis, data, w, out_s);
        for row in out_s.chunks_exact_mut(w) {
            for (idx, o) in row.iter_mut().enumerate() {
                let kk = domain.wavenumber((idx as isize - nf) as i64);
                *o *= Complex64::new(0.0, -kk);
            }
        }

        if !field_is_zero && q_over_m != 0.0 {
            apply_b_rows(basis, data, w, &mut bc);
            let (even, odd) = boundary_differences(basis, data, w);
            convolve_into(field, &even, &mut conv_even);
            convolve_into(field, &odd, &mut conv_odd);
            for (n, (row_bc, row_out)) in bc.chunks_exact(w).zip(out_s.chunks_exact_mut(w)).enumerate() {
                convolve_into(field, row_bc, &mut tmp);
                let g = penalty[n] * basis.sqrt_odd()[n];
                let edge = if n % 2 == 0 { &conv_even } else { &conv_odd };
                for ((o, t), d) in row_out.iter_mut().zip(&tmp).zip(edge) {
                    *o += q_over_m * (t - g * d);
                }
            }
        }

        for (row_out, (row, &d)) in out_s
            .chunks_exact_mut(w)
            .zip(data.chunks_exact(w).zip(collisions))
        {
            if d != 0.0 {
                for (o, c) in row_out.iter_mut().zip(row) {
                    *o += d * c;
                }
            }
        }
    }
}

/// `dC/dt` of every species for the given state and field.
pub fn semi_discrete_rhs(
    model: &Model,
    state: &SpectralState,
    field: &FieldModes,
    penalties: &[PenaltyMatrix],
) -> SpectralState {
    let mut out = model.zero_state();
    let data: Vec<&[Complex64]> = state.species.iter().map(Coefficients::data).collect();
    let mut flat = vec![ZERO; state.len()];
    rhs_into(model, &data, field.values(), penalties, &mut flat);
    let block = model.domain().n_legendre * model.domain().n_modes_x();
    for (c, chunk) in out.species.iter_mut().zip(flat.chunks_exact(block)) {
        c.data_mut().copy_from_slice(chunk);
    }
    out
}

/// Quantities entering the field-work identity and the L² production of one species.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldWork {
    /// `2 Σ_n Σ_k conj(C[n][k]) [E ⋆ B C]_{n,k}`.
    pub acceleration: Complex64,
    /// `[E ⋆ δ_v[f²]]_0`, from `f` at the boundaries.
    pub boundary_square: Complex64,
    /// `S_n = Σ_k conj(C[n][k]) [E ⋆ δ_v[f phi_n]]_k` per mode.
    pub boundary_by_mode: Vec<Complex64>,
}

impl FieldWork {
    /// `Σ_n S_n`.
    pub fn boundary_total(&self) -> Complex64 {
        self.boundary_by_mode.iter().sum()
    }

    /// `Σ_{n>=3} S_n`.
    pub fn boundary_upper(&self) -> Complex64 {
        self.boundary_by_mode.iter().skip(3).sum()
    }
}

/// Evaluates the three field-work quantities of one species directly.
pub fn field_work(basis: &VelocityBasis, coeffs: &Coefficients, field: &FieldModes) -> FieldWork {
    let w = coeffs.n_modes_x();
    let data = coeffs.data();
    let mut bc = vec![ZERO; data.len()];
    apply_b_rows(basis, data, w, &mut bc);
    let mut tmp = vec![ZERO; w];
    let mut acceleration = ZERO;
    for (row_bc, row) in bc.chunks_exact(w).zip(data.chunks_exact(w)) {
        convolve_into(field.values(), row_bc, &mut tmp);
        acceleration += row.iter().zip(&tmp).map(|(c, t)| c.conj() * t).sum::<Complex64>();
    }
    acceleration *= 2.0;

    let (even, odd) = boundary_differences(basis, data, w);
    let mut conv_even = vec![ZERO; w];
    let mut conv_odd = vec![ZERO; w];
    convolve_into(field.values(), &even, &mut conv_even);
    convolve_into(field.values(), &odd, &mut conv_odd);
    let by_mode = data
        .chunks_exact(w)
        .enumerate()
        .map(|(n, row)| {
            let edge = if n % 2 == 0 { &conv_even } else { &conv_odd };
            basis.sqrt_odd()[n] * row.iter().zip(edge).map(|(c, d)| c.conj() * d).sum::<Complex64>()
        })
        .collect();

    // δ_v[f²] = (f(v_b)² - f(v_a)²) / w as products of mode vectors
    let mut at_min = vec![ZERO; w];
    let mut at_max = vec![ZERO; w];
    boundary_values_into(basis, data, &mut at_min, &mut at_max);
    let mut sq_max = vec![ZERO; w];
    let mut sq_min = vec![ZERO; w];
    convolve_into(&at_max, &at_max, &mut sq_max);
    convolve_into(&at_min, &at_min, &mut sq_min);
    let diff: Vec<Complex64> = sq_max
        .iter()
        .zip(&sq_min)
        .map(|(b, a)| (b - a) / basis.width())
        .collect();
    let boundary_square = convolve_zero_mode(field.values(), &diff);

    FieldWork {
        acceleration,
        boundary_square,
        boundary_by_mode: by_mode,
    }
}

/// Outcome of the adaptive penalty computation for one species.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveGamma {
    pub gamma: f64,
    /// The fallback value was used because the boundary sum vanished.
    pub fallback: bool,
}

/// Penalty on modes `n >= 3` that cancels the L² production of the field:
/// `Σ_k C†[E ⋆ B C]_k / Σ_{n>=3} S_n`.
pub fn adaptive_gamma(basis: &VelocityBasis, coeffs: &Coefficients, field: &FieldModes) -> AdaptiveGamma {
    let work = field_work(basis, coeffs, field);
    let denominator = work.boundary_upper();
    if denominator.norm() < ADAPTIVE_DENOMINATOR_FLOOR {
        return AdaptiveGamma {
            gamma: ADAPTIVE_FALLBACK_GAMMA,
            fallback: true,
        };
    }
    let ratio = 0.5 * work.acceleration / denominator;
    if ratio.im.abs() > 1e-10 * ratio.re.abs().max(1.0) {
        log::warn!("adaptive penalty has imaginary part {:e}", ratio.im);
    }
    AdaptiveGamma {
        gamma: ratio.re,
        fallback: false,
    }
}
