use num_complex::Complex64;
use rand::Rng;

use crate::spectral::Coefficients;

/// Random Hermitian-symmetric coefficients with entries in `[-1, 1]`.
pub fn random_coefficients(rng: &mut impl Rng, n_legendre: usize, n_fourier: usize) -> Coefficients {
    let mut coeffs = Coefficients::zeros(n_legendre, n_fourier);
    for n in 0..n_legendre {
        for k in 0..=n_fourier as i64 {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            coeffs.set(n, k, c);
            coeffs.set(n, -k, c.conj());
        }
    }
    coeffs.symmetrize();
    coeffs
}
