//! Legendre-Fourier coefficient storage and Fourier-space algebra.
//!
//! A species is represented by `C[n][k]`, `n in 0..N_L`, `k in -N_F..=N_F`,
//! with `f(x, v) = Σ_n Σ_k C[n][k] exp(2πikx/L) phi_n(v)`. The full spectrum is
//! stored; Hermitian symmetry `C[n][-k] = conj(C[n][k])` is maintained by
//! [`Coefficients::symmetrize`].

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legendre::{VelocityBasis, MIN_MODES};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Imaginary residue above which a reconstructed field is rejected.
pub const RECONSTRUCTION_RESIDUE_TOLERANCE: f64 = 1e-10;

/// Phase-space box and resolution shared by all species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// Spatial period `L`.
    pub length: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Number of Legendre modes `N_L`.
    pub n_legendre: usize,
    /// Fourier modes run over `-n_fourier..=n_fourier`.
    pub n_fourier: usize,
    #[serde(default = "default_epsilon0")]
    pub epsilon0: f64,
}

fn default_epsilon0() -> f64 {
    1.0
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::Config(format!("length must be positive, got {}", self.length)));
        }
        if self.n_fourier < 1 {
            return Err(Error::Config("n_fourier must be at least 1".into()));
        }
        if self.n_legendre < MIN_MODES {
            return Err(Error::Config(format!(
                "n_legendre must be at least {MIN_MODES}, got {}",
                self.n_legendre
            )));
        }
        if !(self.epsilon0.is_finite() && self.epsilon0 > 0.0) {
            return Err(Error::Config(format!("epsilon0 must be positive, got {}", self.epsilon0)));
        }
        if !(self.v_min < self.v_max) {
            return Err(Error::Config(format!(
                "velocity interval [{}, {}] is empty",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }

    /// Number of stored Fourier modes, `2 N_F + 1`.
    pub fn n_modes_x(&self) -> usize {
        2 * self.n_fourier + 1
    }

    /// `2πk/L`.
    pub fn wavenumber(&self, k: i64) -> f64 {
        2.0 * PI * k as f64 / self.length
    }

    /// Default size of diagnostic and output grids in `x`.
    pub fn output_grid_x(&self) -> usize {
        4 * self.n_fourier + 2
    }
}

/// How the boundary penalty enters the Legendre moment equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// No boundary term at all.
    None,
    /// The same weight on every mode.
    AllModes,
    /// Weight on modes `n >= 3` only; mass, momentum and energy equations are untouched.
    #[default]
    SkipFirstThree,
    /// Weight on modes `n >= 3`, recomputed every step so that the boundary
    /// production of the L² norm vanishes.
    Adaptive,
}

impl std::str::FromStr for PenaltyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "all_modes" => Ok(Self::AllModes),
            "skip_first_three" => Ok(Self::SkipFirstThree),
            "adaptive" => Ok(Self::Adaptive),
            other => Err(Error::Config(format!(
                "unknown penalty mode `{other}` (expected none, all_modes, skip_first_three or adaptive)"
            ))),
        }
    }
}

/// Physical parameters of one kinetic species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Species {
    pub name: String,
    /// Signed charge in normalized units.
    pub charge: f64,
    pub mass: f64,
    /// Strength of the artificial collision operator.
    #[serde(default)]
    pub nu: f64,
    /// Boundary penalty weight.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub penalty_mode: PenaltyMode,
    /// Species-specific velocity interval; defaults to the domain interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_bounds: Option<[f64; 2]>,
}

fn default_gamma() -> f64 {
    0.5
}

impl Species {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::Config(format!(
                "species `{}`: mass must be positive, got {}",
                self.name, self.mass
            )));
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(Error::Config(format!(
                "species `{}`: nu must be non-negative, got {}",
                self.name, self.nu
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "species `{}`: gamma must lie in [0, 1], got {}",
                self.name, self.gamma
            )));
        }
        if !self.charge.is_finite() {
            return Err(Error::Config(format!("species `{}`: charge is not finite", self.name)));
        }
        Ok(())
    }

    /// Charge-to-mass ratio.
    pub fn q_over_m(&self) -> f64 {
        self.charge / self.mass
    }

    /// Velocity interval of this species.
    pub fn velocity_interval(&self, domain: &DomainConfig) -> (f64, f64) {
        match self.velocity_bounds {
            Some([a, b]) => (a, b),
            None => (domain.v_min, domain.v_max),
        }
    }
}

/// Fourier coefficients indexed by `k in -N_F..=N_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct Modes {
    n_fourier: usize,
    values: Vec<Complex64>,
}

/// Electric field modes `E_k`.
pub type FieldModes = Modes;

impl Modes {
    pub fn zeros(n_fourier: usize) -> Self {
        Self {
            n_fourier,
            values: vec![ZERO; 2 * n_fourier + 1],
        }
    }

    /// Builds a mode vector from values ordered `k = -N_F, ..., N_F`.
    pub fn from_values(values: Vec<Complex64>) -> Self {
        assert!(values.len() % 2 == 1, "mode vectors have odd length");
        Self {
            n_fourier: values.len() / 2,
            values,
        }
    }

    pub fn n_fourier(&self) -> usize {
        self.n_fourier
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> {
        let nf = self.n_fourier as i64;
        -nf..=nf
    }

    pub fn get(&self, k: i64) -> Complex64 {
        let nf = self.n_fourier as i64;
        if k.abs() > nf {
            ZERO
        } else {
            self.values[(k + nf) as usize]
        }
    }

    /// Largest `|v_k - conj(v_{-k})|` over all modes.
    pub fn hermitian_defect(&self) -> f64 {
        self.wavenumbers()
            .map(|k| (self.get(k) - self.get(-k).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Evaluates `Σ_k v_k exp(2πikx/L)` at `x` (complex in general).
    pub fn eval(&self, x: f64, length: f64) -> Complex64 {
        self.wavenumbers()
            .map(|k| self.get(k) * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * x / length))
            .sum()
    }
}

impl Index<i64> for Modes {
    type Output = Complex64;

    fn index(&self, k: i64) -> &Complex64 {
        &self.values[(k + self.n_fourier as i64) as usize]
    }
}

impl IndexMut<i64> for Modes {
    fn index_mut(&mut self, k: i64) -> &mut Complex64 {
        &mut self.values[(k + self.n_fourier as i64) as usize]
    }
}

/// Truncated convolution `[g ⋆ h]_k = Σ_{k'} g_{k'} h_{k-k'}`, with `h`
/// zero outside `-N_F..=N_F` and the output restricted to the same range.
pub fn convolve(g: &Modes, h: &Modes) -> Modes {
    assert_eq!(g.n_fourier, h.n_fourier, "mode vectors differ in length");
    let mut out = Modes::zeros(g.n_fourier);
    convolve_into(&g.values, &h.values, &mut out.values);
    out
}

/// Slice form of [`convolve`]; all slices have length `2 N_F + 1`.
pub(crate) fn convolve_into(g: &[Complex64], h: &[Complex64], out: &mut [Complex64]) {
    let len = g.len() as isize;
    let nf = len / 2;
    for (k_idx, slot) in out.iter_mut().enumerate() {
        let k = k_idx as isize - nf;
        // k - k' must stay inside [-nf, nf]
        let lo = (k - nf).max(-nf);
        let hi = (k + nf).min(nf);
        let mut acc = ZERO;
        for kp in lo..=hi {
            acc += g[(kp + nf) as usize] * h[(k - kp + nf) as usize];
        }
        *slot = acc;
    }
}

/// Zeroth mode of `g ⋆ h`, i.e. `Σ_k g_k h_{-k}`.
pub(crate) fn convolve_zero_mode(g: &[Complex64], h: &[Complex64]) -> Complex64 {
    g.iter().zip(h.iter().rev()).map(|(a, b)| a * b).sum()
}

/// Coefficients `C[n][k]` of one species, stored row-major in `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    n_legendre: usize,
    n_fourier: usize,
    data: Vec<Complex64>,
}

impl Coefficients {
    pub fn zeros(n_legendre: usize, n_fourier: usize) -> Self {
        Self {
            n_legendre,
            n_fourier,
            data: vec![ZERO; n_legendre * (2 * n_fourier + 1)],
        }
    }

    pub fn n_legendre(&self) -> usize {
        self.n_legendre
    }

    pub fn n_fourier(&self) -> usize {
        self.n_fourier
    }

    pub fn n_modes_x(&self) -> usize {
        2 * self.n_fourier + 1
    }

    /// Flat storage, `n`-major then `k` ascending from `-N_F`.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn offset(&self, n: usize, k: i64) -> usize {
        debug_assert!(n < self.n_legendre && k.unsigned_abs() as usize <= self.n_fourier);
        n * self.n_modes_x() + (k + self.n_fourier as i64) as usize
    }

    pub fn get(&self, n: usize, k: i64) -> Complex64 {
        self.data[self.offset(n, k)]
    }

    pub fn set(&mut self, n: usize, k: i64, value: Complex64) {
        let i = self.offset(n, k);
        self.data[i] = value;
    }

    /// All Fourier modes of Legendre mode `n`.
    pub fn row(&self, n: usize) -> &[Complex64] {
        let w = self.n_modes_x();
        &self.data[n * w..(n + 1) * w]
    }

    pub fn row_modes(&self, n: usize) -> Modes {
        Modes::from_values(self.row(n).to_vec())
    }

    /// All Legendre modes of Fourier mode `k`.
    pub fn column(&self, k: i64) -> Vec<Complex64> {
        (0..self.n_legendre).map(|n| self.get(n, k)).collect()
    }

    /// `Σ_{n,k} |C[n][k]|²`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest `|C[n][k] - conj(C[n][-k])|`.
    pub fn hermitian_defect(&self) -> f64 {
        let nf = self.n_fourier as i64;
        let mut worst: f64 = 0.0;
        for n in 0..self.n_legendre {
            for k in 0..=nf {
                worst = worst.max((self.get(n, k) - self.get(n, -k).conj()).norm());
            }
        }
        worst
    }

    /// Projects onto the Hermitian-symmetric subspace by averaging each
    /// coefficient with the conjugate of its mirror mode.
    pub fn symmetrize(&mut self) {
        let nf = self.n_fourier as i64;
        for n in 0..self.n_legendre {
            for k in 1..=nf {
                let avg = 0.5 * (self.get(n, k) + self.get(n, -k).conj());
                self.set(n, k, avg);
                self.set(n, -k, avg.conj());
            }
            let c0 = self.get(n, 0);
            self.set(n, 0, Complex64::new(c0.re, 0.0));
        }
    }

    /// Element-wise `self + other`.
    pub fn sum_with(&self, other: &Coefficients) -> Coefficients {
        assert_eq!(self.data.len(), other.data.len());
        Coefficients {
            n_legendre: self.n_legendre,
            n_fourier: self.n_fourier,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Coefficients {
        Coefficients {
            n_legendre: self.n_legendre,
            n_fourier: self.n_fourier,
            data: self.data.iter().map(|c| c * factor).collect(),
        }
    }
}

/// Coefficients of every dynamic species.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub species: Vec<Coefficients>,
}

impl SpectralState {
    pub fn new(species: Vec<Coefficients>) -> Self {
        Self { species }
    }

    pub fn symmetrize(&mut self) {
        self.species.iter_mut().for_each(Coefficients::symmetrize);
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.species.iter().map(Coefficients::hermitian_defect).fold(0.0, f64::max)
    }

    /// Total number of complex unknowns.
    pub fn len(&self) -> usize {
        self.species.iter().map(|c| c.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element-wise sum of two states with identical layout.
    pub fn sum_with(&self, other: &SpectralState) -> SpectralState {
        SpectralState::new(
            self.species
                .iter()
                .zip(&other.species)
                .map(|(a, b)| a.sum_with(b))
                .collect(),
        )
    }
}

/// Separable initial condition `g(v) (1 + amplitude cos(2π mode x / L))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    /// `density / (sqrt(2π) α) exp(-(v - drift)² / (2 α²))`.
    Maxwellian {
        thermal_speed: f64,
        #[serde(default)]
        drift: f64,
        #[serde(default = "unit_density")]
        density: f64,
        #[serde(default)]
        amplitude: f64,
        #[serde(default = "unit_mode")]
        mode: i64,
    },
    /// Two counter-streaming Maxwellians at `±drift` with equal temperature,
    /// each carrying half of `density`.
    TwoStream {
        thermal_speed: f64,
        drift: f64,
        #[serde(default = "unit_density")]
        density: f64,
        #[serde(default)]
        amplitude: f64,
        #[serde(default = "unit_mode")]
        mode: i64,
    },
}

fn unit_density() -> f64 {
    1.0
}

fn unit_mode() -> i64 {
    1
}

impl InitialProfile {
    /// The velocity factor `g(v)`.
    pub fn velocity_profile(&self) -> impl Fn(f64) -> f64 {
        let (alpha, drift, density, two_stream) = match *self {
            InitialProfile::Maxwellian {
                thermal_speed,
                drift,
                density,
                ..
            } => (thermal_speed, drift, density, false),
            InitialProfile::TwoStream {
                thermal_speed,
                drift,
                density,
                ..
            } => (thermal_speed, drift, density, true),
        };
        let norm = density / ((2.0 * PI).sqrt() * alpha);
        move |v: f64| {
            let gauss = |u: f64| (-(v - u) * (v - u) / (2.0 * alpha * alpha)).exp();
            if two_stream {
                0.5 * norm * (gauss(drift) + gauss(-drift))
            } else {
                norm * gauss(drift)
            }
        }
    }

    /// `(amplitude, mode)` of the cosine perturbation.
    pub fn perturbation(&self) -> (f64, i64) {
        match *self {
            InitialProfile::Maxwellian { amplitude, mode, .. }
            | InitialProfile::TwoStream { amplitude, mode, .. } => (amplitude, mode),
        }
    }

    pub fn thermal_speed(&self) -> f64 {
        match *self {
            InitialProfile::Maxwellian { thermal_speed, .. }
            | InitialProfile::TwoStream { thermal_speed, .. } => thermal_speed,
        }
    }

    fn validate(&self) -> Result<()> {
        let alpha = self.thermal_speed();
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("thermal speed must be positive, got {alpha}")));
        }
        Ok(())
    }
}

/// Projects `g(v) (1 + amplitude cos(2π mode x / L))` onto the basis.
///
/// The cosine splits into the two conjugate modes `±mode`, each with weight
/// `amplitude / 2`, so only three Fourier columns are populated.
pub fn project_separable(
    basis: &VelocityBasis,
    n_fourier: usize,
    g: impl Fn(f64) -> f64,
    amplitude: f64,
    mode: i64,
) -> Result<Coefficients> {
    if amplitude != 0.0 && (mode == 0 || mode.unsigned_abs() as usize > n_fourier) {
        return Err(Error::Config(format!(
            "perturbation mode {mode} must be non-zero and within ±{n_fourier}"
        )));
    }
    let profile = basis.project(g);
    let mut coeffs = Coefficients::zeros(basis.n_modes(), n_fourier);
    for (n, &c) in profile.iter().enumerate() {
        coeffs.set(n, 0, Complex64::new(c, 0.0));
        if amplitude != 0.0 {
            let side = Complex64::new(0.5 * amplitude * c, 0.0);
            coeffs.set(n, mode, side);
            coeffs.set(n, -mode, side);
        }
    }
    Ok(coeffs)
}

/// Projects a named profile, checking that it is negligible at the velocity
/// boundaries (relative to its peak) within `tail_tolerance`.
pub fn project_initial(
    basis: &VelocityBasis,
    n_fourier: usize,
    species_name: &str,
    profile: &InitialProfile,
    tail_tolerance: f64,
) -> Result<Coefficients> {
    profile.validate()?;
    let g = profile.velocity_profile();
    let (nodes, _) = basis.quadrature(crate::legendre::projection_nodes(basis.n_modes()));
    let peak = nodes.iter().map(|&v| g(v).abs()).fold(0.0, f64::max);
    let tail = g(basis.v_min()).abs().max(g(basis.v_max()).abs());
    if peak > 0.0 && tail / peak > tail_tolerance {
        return Err(Error::ProfileTail {
            species: species_name.to_string(),
            tail: tail / peak,
            tolerance: tail_tolerance,
        });
    }
    let (amplitude, mode) = profile.perturbation();
    project_separable(basis, n_fourier, g, amplitude, mode)
}

/// `f` at the velocity boundaries as Fourier mode vectors:
/// `F_a[k] = Σ_n C[n][k] phi_n(v_min)` and `F_b[k] = Σ_n C[n][k] phi_n(v_max)`.
pub fn boundary_values(basis: &VelocityBasis, coeffs: &Coefficients) -> (Modes, Modes) {
    let mut at_min = Modes::zeros(coeffs.n_fourier());
    let mut at_max = Modes::zeros(coeffs.n_fourier());
    boundary_values_into(basis, coeffs.data(), &mut at_min.values, &mut at_max.values);
    (at_min, at_max)
}

pub(crate) fn boundary_values_into(
    basis: &VelocityBasis,
    data: &[Complex64],
    at_min: &mut [Complex64],
    at_max: &mut [Complex64],
) {
    let w = at_min.len();
    at_min.fill(ZERO);
    at_max.fill(ZERO);
    for (n, row) in data.chunks_exact(w).enumerate() {
        let s = basis.sqrt_odd()[n];
        let sign = if n % 2 == 0 { s } else { -s };
        for ((lo, hi), c) in at_min.iter_mut().zip(at_max.iter_mut()).zip(row) {
            *hi += c * s;
            *lo += c * sign;
        }
    }
}

/// `f(x, v)` sampled on a tensor grid, row-major in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    pub xs: Vec<f64>,
    pub vs: Vec<f64>,
    /// `values[i * vs.len() + j] = f(xs[i], vs[j])`.
    pub values: Vec<f64>,
}

impl PhaseSpaceGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.vs.len() + j]
    }
}

/// Evaluates `f` on arbitrary `x` and `v` samples.
pub fn evaluate_f(
    basis: &VelocityBasis,
    coeffs: &Coefficients,
    length: f64,
    xs: &[f64],
    vs: &[f64],
) -> Result<PhaseSpaceGrid> {
    let nf = coeffs.n_fourier() as i64;
    // C_n(x) for every x, then contract with phi_n(v).
    let phases: Vec<Vec<Complex64>> = xs
        .iter()
        .map(|&x| {
            (-nf..=nf)
                .map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * x / length))
                .collect()
        })
        .collect();
    let phis: Vec<Vec<f64>> = vs.iter().map(|&v| basis.eval_all(v)).collect();
    let mut values = Vec::with_capacity(xs.len() * vs.len());
    let mut worst_residue: f64 = 0.0;
    for phase in &phases {
        let legendre_at_x: Vec<Complex64> = (0..coeffs.n_legendre())
            .map(|n| coeffs.row(n).iter().zip(phase).map(|(c, p)| c * p).sum())
            .collect();
        for phi in &phis {
            let f: Complex64 = legendre_at_x.iter().zip(phi).map(|(c, p)| c * p).sum();
            worst_residue = worst_residue.max(f.im.abs());
            values.push(f.re);
        }
    }
    if worst_residue > RECONSTRUCTION_RESIDUE_TOLERANCE {
        return Err(Error::Symmetry {
            residue: worst_residue,
        });
    }
    Ok(PhaseSpaceGrid {
        xs: xs.to_vec(),
        vs: vs.to_vec(),
        values,
    })
}

/// Uniform `x` grid `j L / n_x`.
pub fn uniform_x_grid(length: f64, n_x: usize) -> Vec<f64> {
    (0..n_x).map(|j| j as f64 * length / n_x as f64).collect()
}

/// Reconstructs `f` on `n_x` periodic points in `x` and `n_v` points spanning
/// the velocity interval including both endpoints.
pub fn reconstruct_f(
    basis: &VelocityBasis,
    coeffs: &Coefficients,
    length: f64,
    n_x: usize,
    n_v: usize,
) -> Result<PhaseSpaceGrid> {
    if n_x < coeffs.n_modes_x() {
        return Err(Error::Config(format!(
            "x grid of {n_x} points cannot resolve {} Fourier modes",
            coeffs.n_modes_x()
        )));
    }
    if n_v < 2 {
        return Err(Error::Config("velocity grid needs at least two points".into()));
    }
    let xs = uniform_x_grid(length, n_x);
    let dv = basis.width() / (n_v - 1) as f64;
    let vs: Vec<f64> = (0..n_v)
        .map(|j| if j + 1 == n_v { basis.v_max() } else { basis.v_min() + j as f64 * dv })
        .collect();
    evaluate_f(basis, coeffs, length, &xs, &vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::random_coefficients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn convolution_with_delta_is_identity() {
        let mut delta = Modes::zeros(3);
        delta[0] = c(1.0, 0.0);
        let h = Modes::from_values((0..7).map(|i| c(i as f64, -0.5 * i as f64)).collect());
        assert_eq!(convolve(&delta, &h), h);
    }

    #[test]
    fn convolution_truncates_outside_range() {
        let mut g = Modes::zeros(2);
        g[2] = c(1.0, 0.0);
        let mut h = Modes::zeros(2);
        h[1] = c(1.0, 0.0);
        // k = 3 falls outside the stored range and is dropped
        assert!(convolve(&g, &h).values().iter().all(|v| v.norm() == 0.0));
        h[-1] = c(2.0, 0.0);
        assert_eq!(convolve(&g, &h)[1], c(2.0, 0.0));
    }

    #[test]
    fn zero_mode_is_sum_of_pairs() {
        let e = Modes::from_values(vec![c(0.1, 0.2), c(-0.3, 0.5), c(0.0, 0.0), c(-0.3, -0.5), c(0.1, -0.2)]);
        let direct: Complex64 = e.wavenumbers().map(|k| e.get(k) * e.get(-k)).sum();
        assert!((convolve(&e, &e)[0] - direct).norm() < 1e-16);
        assert!((convolve_zero_mode(e.values(), e.values()) - direct).norm() < 1e-16);
    }

    #[test]
    fn hermitian_inputs_give_hermitian_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_coefficients(&mut rng, 2, 5).row_modes(0);
            let b = random_coefficients(&mut rng, 2, 5).row_modes(1);
            assert!(convolve(&a, &b).hermitian_defect() < 1e-15);
        }
    }

    #[test]
    fn symmetrize_restores_symmetry() {
        let mut coeffs = Coefficients::zeros(4, 2);
        coeffs.set(1, 1, c(1.0, 2.0));
        coeffs.set(1, -1, c(3.0, 0.0));
        coeffs.set(2, 0, c(0.5, 1e-3));
        coeffs.symmetrize();
        assert_eq!(coeffs.get(1, 1), c(2.0, 1.0));
        assert_eq!(coeffs.get(1, -1), c(2.0, -1.0));
        assert_eq!(coeffs.get(2, 0), c(0.5, 0.0));
        assert_eq!(coeffs.hermitian_defect(), 0.0);
    }

    #[test]
    fn landau_profile_excites_three_columns() {
        let basis = VelocityBasis::new(-5.0, 5.0, 64).unwrap();
        let profile = InitialProfile::Maxwellian {
            thermal_speed: 1.0,
            drift: 0.0,
            density: 1.0,
            amplitude: 1e-3,
            mode: 1,
        };
        let coeffs = project_initial(&basis, 4, "e", &profile, 1e-4).unwrap();
        for n in 0..64 {
            for k in [-4, -3, -2, 2, 3, 4] {
                assert_eq!(coeffs.get(n, k), ZERO);
            }
        }
        assert!(coeffs.get(0, 1).norm() > 0.0 && coeffs.get(2, -1).norm() > 0.0);
        // erf(5/sqrt 2) / 10
        assert!((coeffs.get(0, 0).re - 0.1).abs() < 1e-6);
    }

    #[test]
    fn two_stream_profile_is_even() {
        let basis = VelocityBasis::new(-5.0, 5.0, 201).unwrap();
        let profile = InitialProfile::TwoStream {
            thermal_speed: 1.0 / 8f64.sqrt(),
            drift: 1.0,
            density: 1.0,
            amplitude: 1e-3,
            mode: 1,
        };
        let coeffs = project_initial(&basis, 3, "e", &profile, 1e-4).unwrap();
        for n in (1..201).step_by(2) {
            assert!(coeffs.get(n, 0).norm() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn tail_check_rejects_narrow_domain() {
        let basis = VelocityBasis::new(-2.0, 2.0, 16).unwrap();
        let profile = InitialProfile::Maxwellian {
            thermal_speed: 1.0,
            drift: 0.0,
            density: 1.0,
            amplitude: 0.0,
            mode: 1,
        };
        assert!(matches!(
            project_initial(&basis, 2, "e", &profile, 1e-4),
            Err(Error::ProfileTail { .. })
        ));
    }

    #[test]
    fn perturbation_mode_must_fit() {
        let basis = VelocityBasis::new(-5.0, 5.0, 8).unwrap();
        assert!(project_separable(&basis, 2, |_| 1.0, 0.1, 3).is_err());
        assert!(project_separable(&basis, 2, |_| 1.0, 0.1, 0).is_err());
        assert!(project_separable(&basis, 2, |_| 1.0, 0.0, 0).is_ok());
    }

    #[test]
    fn constant_state_reconstructs_constant() {
        let basis = VelocityBasis::new(-1.0, 2.0, 6).unwrap();
        let mut coeffs = Coefficients::zeros(6, 2);
        coeffs.set(0, 0, c(0.75, 0.0));
        let grid = reconstruct_f(&basis, &coeffs, 3.0, 5, 4).unwrap();
        assert!(grid.values.iter().all(|&f| (f - 0.75).abs() < 1e-15));
        let (lo, hi) = boundary_values(&basis, &coeffs);
        assert_eq!(lo[0], c(0.75, 0.0));
        assert_eq!(hi[0], c(0.75, 0.0));
        assert!(reconstruct_f(&basis, &coeffs, 3.0, 4, 4).is_err());
    }

    #[test]
    fn boundary_values_match_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let basis = VelocityBasis::new(-3.0, 4.0, 12).unwrap();
        let coeffs = random_coefficients(&mut rng, 12, 3);
        let (lo, hi) = boundary_values(&basis, &coeffs);
        let grid = reconstruct_f(&basis, &coeffs, 2.0, 9, 5).unwrap();
        for (i, &x) in grid.xs.iter().enumerate() {
            assert!((grid.at(i, 0) - lo.eval(x, 2.0).re).abs() < 1e-13);
            assert!((grid.at(i, 4) - hi.eval(x, 2.0).re).abs() < 1e-13);
        }
    }

    #[test]
    fn asymmetric_state_is_flagged() {
        let basis = VelocityBasis::new(-1.0, 1.0, 4).unwrap();
        let mut coeffs = Coefficients::zeros(4, 1);
        coeffs.set(0, 1, c(1.0, 0.0));
        assert!(matches!(
            reconstruct_f(&basis, &coeffs, 1.0, 4, 3),
            Err(Error::Symmetry { .. })
        ));
    }

    #[test]
    fn penalty_mode_parsing() {
        assert_eq!("all_modes".parse::<PenaltyMode>().unwrap(), PenaltyMode::AllModes);
        assert!("sometimes".parse::<PenaltyMode>().is_err());
    }
}
