//! Simulation of a Rydberg-blockade single-photon source in a thermal
//! rubidium micro-cell.
//!
//! The pipeline samples moving atoms ([`ensemble`]), excites them with three
//! rectangular laser pulses in a truncated many-body basis ([`hilbert`],
//! [`excitation`]), follows the collective decay of single and double
//! excitations ([`decay`]) and optimizes the pulses for W-state fidelity
//! ([`optimizer`]).

pub mod config;
pub mod decay;
pub mod ensemble;
pub mod error;
pub mod excitation;
pub mod hilbert;
pub mod numerics;
pub mod ode;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod polyfit;
pub mod seeds;

pub use num_complex::Complex64 as C64;

pub use config::{PhysicalConfig, PhysicalSection, RunConfig};
pub use ensemble::{AtomSet, Distribution};
pub use error::{Error, Result};
pub use par::Execution;
