//! Optimal population transfer through decaying quantum chains.
//!
//! This crate implements the closed-form optimal controls for steering
//! population across N-level chains whose intermediate levels decay, together
//! with the numerical machinery needed to verify them:
//!
//! * [`model`] — chain systems, the complex-to-real variable change, polar
//!   coordinates, and time-sampled control schedules;
//! * [`propagator`] — adaptive Runge-Kutta integration of the reduced real
//!   dynamics, pulse reconstruction, and time rescaling;
//! * [`three_level`] — the exact solution for a single decaying intermediate:
//!   critical time, switching time, the two-phase optimal control, transfer
//!   efficiency, and adiabatic (STIRAP-style) limit pulses;
//! * [`four_level`] — the exact solution for two consecutive decaying
//!   intermediates, including the asymptotic efficiency `sqrt(1+xi^2) - xi`;
//! * [`n_chain`] — chain reduction bounds for longer chains and the
//!   coupling-topology controllability test on relaxation-free subspaces;
//! * [`oracle`] — brute-force adversarial search over discretized controls,
//!   used to corroborate optimality of the analytic solutions;
//! * [`scenario`] — JSON scenario runner producing CSV/JSON artifacts.

pub mod four_level;
mod matexp;
pub mod model;
pub mod n_chain;
pub mod oracle;
pub mod propagator;
mod roots;
pub mod scenario;
pub mod three_level;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An input or call-site precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical procedure failed its own consistency requirements.
    #[error("numerical contract failure: {0}")]
    Numerical(String),

    /// Step-size underflow while integrating, typically from enormous
    /// control values.
    #[error("control too stiff near t = {t}: step size underflow")]
    ControlTooStiff { t: f64 },

    /// The bright-state amplitude vanished where a pulse reconstruction
    /// needed to divide by it.
    #[error("bright-state depleted near t = {t} (r1 = {r1:.3e})")]
    BrightStateDepleted { t: f64, r1: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
