//! Oracles shared by the integration tests. Nothing here calls the library's
//! own basis evaluation or quadrature.

#![allow(dead_code)]

use std::f64::consts::PI;

use legendre_vlasov::{Coefficients, Modes};
use num_complex::Complex64;
use rand::Rng;

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    let (mut d0, mut d1) = (0.0, 1.0);
    if n == 0 {
        return (p0, d0);
    }
    for m in 1..n {
        let m = m as f64;
        let p2 = ((2.0 * m + 1.0) * x * p1 - m * p0) / (m + 1.0);
        let d2 = d0 + (2.0 * m + 1.0) * p1;
        (p0, p1, d0, d1) = (p1, p2, d1, d2);
    }
    (p1, d1)
}

/// Gauss-Legendre nodes and weights on `[a, b]` by Newton iteration.
pub fn gauss(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        nodes.push(0.5 * (b - a) * x + 0.5 * (a + b));
        weights.push((b - a) / ((1.0 - x * x) * d * d));
    }
    (nodes, weights)
}

/// Scaled basis function `sqrt(2n+1) P_n(eta(v))` and its `v` derivative.
pub fn phi(a: f64, b: f64, n: usize, v: f64) -> (f64, f64) {
    let eta = (2.0 * v - a - b) / (b - a);
    let (p, d) = legendre_with_derivative(n, eta);
    let s = ((2 * n + 1) as f64).sqrt();
    (s * p, s * d * 2.0 / (b - a))
}

/// Random Hermitian-symmetric coefficients with entries in `[-1, 1]`.
pub fn random_coefficients(rng: &mut impl Rng, n_legendre: usize, n_fourier: usize) -> Coefficients {
    let mut c = Coefficients::zeros(n_legendre, n_fourier);
    for n in 0..n_legendre {
        c.set(n, 0, Complex64::new(rng.gen_range(-1.0..1.0), 0.0));
        for k in 1..=n_fourier as i64 {
            let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            c.set(n, k, z);
            c.set(n, -k, z.conj());
        }
    }
    c
}

pub fn random_field(rng: &mut impl Rng, n_fourier: usize) -> Modes {
    let mut values = vec![Complex64::new(0.0, 0.0); 2 * n_fourier + 1];
    let nf = n_fourier as i64;
    values[n_fourier] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
    for k in 1..=nf {
        let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        values[(nf + k) as usize] = z;
        values[(nf - k) as usize] = z.conj();
    }
    Modes::from_values(values)
}

/// Legendre expansion of one Fourier column at `v`.
pub fn column_at(a: f64, b: f64, c: &Coefficients, k: i64, v: f64) -> (Complex64, Complex64) {
    let mut f = Complex64::new(0.0, 0.0);
    let mut df = Complex64::new(0.0, 0.0);
    for n in 0..c.n_legendre() {
        let (p, d) = phi(a, b, n, v);
        f += c.get(n, k) * p;
        df += c.get(n, k) * d;
    }
    (f, df)
}

/// `f(x, v)` by direct summation.
pub fn f_at(a: f64, b: f64, c: &Coefficients, length: f64, x: f64, v: f64) -> Complex64 {
    let nf = c.n_fourier() as i64;
    (-nf..=nf)
        .map(|k| column_at(a, b, c, k, v).0 * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * x / length))
        .sum()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}
