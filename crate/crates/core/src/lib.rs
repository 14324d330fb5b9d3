//! Legendre-Fourier spectral solver for the 1D-1V Vlasov-Poisson system.
//!
//! Each species distribution is expanded in scaled Legendre polynomials on a
//! bounded velocity interval and in Fourier modes on a periodic spatial domain.
//! Time integration is an implicit Crank-Nicolson step solved with a
//! Jacobian-free Newton-Krylov method.

pub mod bench;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod integrator;
pub mod legendre;
pub mod operator;
pub mod snapshot;
pub mod spectral;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
pub use integrator::{run, jfnk_step, Preconditioner, RunOutcome, RunStatus, SolverConfig, StepResult};
pub use legendre::VelocityBasis;
pub use operator::{Background, Model};
pub use spectral::{
    convolve, Coefficients, DomainConfig, FieldModes, InitialProfile, Modes, PenaltyMode,
    SpectralState, Species,
};
