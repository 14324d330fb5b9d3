use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("plasma is not neutral: net charge density {net_charge:e} exceeds {tolerance:e}")]
    Neutrality { net_charge: f64, tolerance: f64 },

    #[error(
        "initial profile of species `{species}` is not negligible at the velocity boundary \
         (relative tail {tail:e} > {tolerance:e}); widen the velocity domain"
    )]
    ProfileTail {
        species: String,
        tail: f64,
        tolerance: f64,
    },

    #[error("Hermitian symmetry violated: imaginary residue {residue:e}")]
    Symmetry { residue: f64 },

    #[error("time step {step} (t = {time}) rejected: {reason}")]
    StepRejected {
        step: usize,
        time: f64,
        reason: String,
    },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
