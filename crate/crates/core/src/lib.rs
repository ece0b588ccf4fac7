//! Linear precoder design for the K-user MIMO multiple access channel with
//! finite-alphabet inputs and statistical channel knowledge.
//!
//! The crate evaluates a large-system (replica) approximation of the
//! weighted sum rate, optimizes per-user precoders `B = U_T·Γ·V` by
//! alternating projected-gradient ascent, and validates the approximation
//! against nested Monte-Carlo estimates of the exact ergodic rates.
//!
//! Module map:
//!
//! * [`constellation`]: PSK/QAM/PAM signal sets and vector alphabets.
//! * [`channel`]: Weichselberger statistics, sampling, SNR mapping.
//! * [`mi_engine`]: virtual-channel MI/MMSE and exact Monte-Carlo MI.
//! * [`replica`]: fixed-point solver and the asymptotic (weighted) rates.
//! * [`optimizer`]: the precoder optimizer and baselines.
//! * [`harness`]: experiment specs, sweeps, regions, validation, CSV output.

pub mod channel;
pub mod constellation;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mi_engine;
pub mod optimizer;
pub mod replica;
pub mod rng;

pub use error::{Error, Result};
