//! Rescaled Legendre basis on a bounded velocity interval.
//!
//! The basis functions are `phi_n(v) = sqrt(2n+1) L_n(eta(v))` with
//! `eta(v) = (2v - (v_min + v_max)) / (v_max - v_min)`, normalized so that
//! `∫ phi_m phi_n dv = (v_max - v_min) δ_mn`.
//!
//! Multiplication by `v` couples neighbouring modes through the coefficients
//! `sigma_n` and the interval midpoint `sigma_bar`:
//!
//! ```text
//! v phi_n = sigma_{n+1} phi_{n+1} + sigma_n phi_{n-1} + sigma_bar phi_n
//! ```
//!
//! and differentiation is `d phi_n / dv = Σ_{i<n} sigma_{n,i} phi_i`, where
//! `sigma_{n,i}` vanishes unless `n - i` is odd.

use crate::error::{Error, Result};

/// Smallest number of Legendre modes accepted by [`VelocityBasis::new`].
///
/// The collision operator normalizes by `(N-1)(N-2)(N-3)`.
pub const MIN_MODES: usize = 4;

/// Evaluates the Legendre polynomial `L_n(eta)` by upward three-term recursion.
pub fn eval_legendre(n: usize, eta: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => eta,
        _ => {
            let (mut prev, mut curr) = (1.0, eta);
            for m in 1..n {
                let next = ((2 * m + 1) as f64 * eta * curr - m as f64 * prev) / (m + 1) as f64;
                prev = curr;
                curr = next;
            }
            curr
        }
    }
}

/// `L_n(eta)` and `L_n'(eta)` for `|eta| < 1`.
fn legendre_with_derivative(n: usize, eta: f64) -> (f64, f64) {
    let value = eval_legendre(n, eta);
    let below = eval_legendre(n - 1, eta);
    let derivative = n as f64 * (eta * value - below) / (eta * eta - 1.0);
    (value, derivative)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes in increasing order.
pub fn gauss_legendre(n_nodes: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n_nodes > 0, "quadrature needs at least one node");
    let mut nodes = vec![0.0; n_nodes];
    let mut weights = vec![0.0; n_nodes];
    let n = n_nodes as f64;
    for i in 0..n_nodes.div_ceil(2) {
        // Tricomi's estimate, then Newton on L_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        for _ in 0..100 {
            let (value, derivative) = legendre_with_derivative(n_nodes, x);
            let dx = value / derivative;
            x -= dx;
            if dx.abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                break;
            }
        }
        let (_, derivative) = legendre_with_derivative(n_nodes, x);
        let w = 2.0 / ((1.0 - x * x) * derivative * derivative);
        nodes[n_nodes - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[n_nodes - 1 - i] = w;
    }
    if n_nodes % 2 == 1 {
        nodes[n_nodes / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(a: f64, b: f64, n_nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let (nodes, weights) = gauss_legendre(n_nodes);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        nodes.iter().map(|&x| mid + half * x).collect(),
        weights.iter().map(|&w| half * w).collect(),
    )
}

/// Node count used for projections onto a basis with `n_modes` modes.
pub fn projection_nodes(n_modes: usize) -> usize {
    (2 * n_modes).max(128)
}

/// Coefficients of `v phi_n = plus phi_{n+1} + minus phi_{n-1} + center phi_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VPhiRecursion {
    pub plus: f64,
    pub minus: f64,
    pub center: f64,
}

/// Coefficients of the five-term expansion of `v^2 phi_n` onto
/// `phi_{n+2}, phi_{n+1}, phi_n, phi_{n-1}, phi_{n-2}` (in that order).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct V2PhiRecursion(pub [f64; 5]);

/// `(∫ phi_n dv, ∫ v phi_n dv, ∫ v^2 phi_n dv)` over the basis interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentIntegrals {
    pub zeroth: f64,
    pub first: f64,
    pub second: f64,
}

/// Precomputed Legendre basis on `[v_min, v_max]`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBasis {
    v_min: f64,
    v_max: f64,
    n_modes: usize,
    sigma_bar: f64,
    /// `sigma[n]` for `n in 0..n_modes + 2`.
    sigma: Vec<f64>,
    /// Dense row-major `sigma_{n,i}` table, `n_modes x n_modes`.
    sigma_deriv: Vec<f64>,
    phi_at_vmin: Vec<f64>,
    phi_at_vmax: Vec<f64>,
    /// `sqrt(2n+1)`, shared by the fast derivative and boundary kernels.
    sqrt_odd: Vec<f64>,
}

impl VelocityBasis {
    pub fn new(v_min: f64, v_max: f64, n_modes: usize) -> Result<Self> {
        if !(v_min.is_finite() && v_max.is_finite()) || v_min >= v_max {
            return Err(Error::Config(format!(
                "velocity interval [{v_min}, {v_max}] must be finite with v_min < v_max"
            )));
        }
        if n_modes < MIN_MODES {
            return Err(Error::Config(format!(
                "at least {MIN_MODES} Legendre modes are required, got {n_modes}"
            )));
        }
        let width = v_max - v_min;
        let sigma = (0..n_modes + 2)
            .map(|n| {
                if n == 0 {
                    0.0
                } else {
                    let n = n as f64;
                    0.5 * width * n / ((2.0 * n + 1.0) * (2.0 * n - 1.0)).sqrt()
                }
            })
            .collect();
        let sqrt_odd: Vec<f64> = (0..n_modes).map(|n| ((2 * n + 1) as f64).sqrt()).collect();
        let mut sigma_deriv = vec![0.0; n_modes * n_modes];
        for n in 0..n_modes {
            for i in (0..n).filter(|i| (n - i) % 2 == 1) {
                sigma_deriv[n * n_modes + i] = 2.0 * sqrt_odd[n] * sqrt_odd[i] / width;
            }
        }
        let phi_at_vmax = sqrt_odd.clone();
        let phi_at_vmin = sqrt_odd
            .iter()
            .enumerate()
            .map(|(n, s)| if n % 2 == 0 { *s } else { -s })
            .collect();
        Ok(Self {
            v_min,
            v_max,
            n_modes,
            sigma_bar: 0.5 * (v_min + v_max),
            sigma,
            sigma_deriv,
            phi_at_vmin,
            phi_at_vmax,
            sqrt_odd,
        })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn width(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    /// `sigma_n`, zero for `n = 0`. Valid for `n <= n_modes + 1`.
    pub fn sigma(&self, n: usize) -> f64 {
        self.sigma[n]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Derivative coupling `sigma_{n,i}` (zero when `i >= n` or `n - i` is even).
    pub fn sigma_deriv(&self, n: usize, i: usize) -> f64 {
        self.sigma_deriv[n * self.n_modes + i]
    }

    pub fn phi_at_vmin(&self) -> &[f64] {
        &self.phi_at_vmin
    }

    pub fn phi_at_vmax(&self) -> &[f64] {
        &self.phi_at_vmax
    }

    pub(crate) fn sqrt_odd(&self) -> &[f64] {
        &self.sqrt_odd
    }

    /// Maps a velocity onto the reference interval `[-1, 1]`.
    pub fn eta(&self, v: f64) -> f64 {
        (2.0 * v - (self.v_min + self.v_max)) / self.width()
    }

    /// `phi_n(v)`.
    pub fn eval_phi(&self, n: usize, v: f64) -> f64 {
        ((2 * n + 1) as f64).sqrt() * eval_legendre(n, self.eta(v))
    }

    /// All `phi_n(v)` for `n < n_modes` in one recursion sweep.
    pub fn eval_all(&self, v: f64) -> Vec<f64> {
        let eta = self.eta(v);
        let mut out = Vec::with_capacity(self.n_modes);
        let (mut prev, mut curr) = (1.0, eta);
        out.push(1.0);
        for m in 1..self.n_modes {
            out.push(curr);
            let next = ((2 * m + 1) as f64 * eta * curr - m as f64 * prev) / (m + 1) as f64;
            prev = curr;
            curr = next;
        }
        for (value, scale) in out.iter_mut().zip(&self.sqrt_odd) {
            *value *= scale;
        }
        out
    }

    pub fn recursion_vphi(&self, n: usize) -> VPhiRecursion {
        VPhiRecursion {
            plus: self.sigma[n + 1],
            minus: self.sigma[n],
            center: self.sigma_bar,
        }
    }

    pub fn recursion_v2phi(&self, n: usize) -> V2PhiRecursion {
        let s = &self.sigma;
        let sb = self.sigma_bar;
        let below = if n >= 1 { s[n] * s[n - 1] } else { 0.0 };
        V2PhiRecursion([
            s[n + 2] * s[n + 1],
            2.0 * s[n + 1] * sb,
            s[n + 1] * s[n + 1] + s[n] * s[n] + sb * sb,
            2.0 * s[n] * sb,
            below,
        ])
    }

    pub fn moment_integrals(&self, n: usize) -> MomentIntegrals {
        let w = self.width();
        let (s1, s2, sb) = (self.sigma[1], self.sigma[2], self.sigma_bar);
        match n {
            0 => MomentIntegrals {
                zeroth: w,
                first: w * sb,
                second: w * (s1 * s1 + sb * sb),
            },
            1 => MomentIntegrals {
                zeroth: 0.0,
                first: w * s1,
                second: w * 2.0 * s1 * sb,
            },
            2 => MomentIntegrals {
                zeroth: 0.0,
                first: 0.0,
                second: w * s2 * s1,
            },
            _ => MomentIntegrals {
                zeroth: 0.0,
                first: 0.0,
                second: 0.0,
            },
        }
    }

    /// Gauss-Legendre rule on the basis interval with `n_nodes` nodes.
    pub fn quadrature(&self, n_nodes: usize) -> (Vec<f64>, Vec<f64>) {
        gauss_legendre_on(self.v_min, self.v_max, n_nodes)
    }

    /// Legendre coefficients `(1/width) ∫ g phi_n dv` of a velocity profile.
    pub fn project(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let (nodes, weights) = self.quadrature(projection_nodes(self.n_modes));
        let mut coeffs = vec![0.0; self.n_modes];
        for (&v, &w) in nodes.iter().zip(&weights) {
            let gw = g(v) * w;
            for (c, p) in coeffs.iter_mut().zip(self.eval_all(v)) {
                *c += gw * p;
            }
        }
        let inv_width = 1.0 / self.width();
        coeffs.iter_mut().for_each(|c| *c *= inv_width);
        coeffs
    }
}

/// Closed form of `sigma_n sigma_{n,i}`, independent of the interval width.
pub fn sigma_sigma_closed_form(n: usize, i: usize) -> f64 {
    if n == 0 || i >= n || (n - i).is_multiple_of(2) {
        0.0
    } else {
        n as f64 * ((2 * i + 1) as f64).sqrt() / ((2 * n - 1) as f64).sqrt()
    }
}
