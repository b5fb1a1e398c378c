use thiserror::Error;

use crate::excitation::Frame;
use crate::optimizer::OptimizationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("fit error on {channel}: {reason}")]
    Fit { channel: String, reason: String },

    #[error("missing fit channel {0}")]
    MissingChannel(String),

    #[error("degenerate perturbation for pair ({first}, {second}): {reason}")]
    DegeneratePerturbation {
        first: usize,
        second: usize,
        reason: String,
    },

    #[error("singular adiabatic elimination: Rydberg atom {rydberg}, intermediate atoms {from} -> {to}")]
    SingularElimination { rydberg: usize, from: usize, to: usize },

    #[error("step size underflow at t = {t} ns (h = {h:e} ns, {steps} accepted steps)")]
    Stiffness { t: f64, h: f64, steps: usize },

    #[error("frame error: expected {expected:?} frame, found {found:?}")]
    Frame { expected: Frame, found: Frame },

    #[error("W-state target requested for an empty atom set")]
    EmptyTarget,

    #[error("invalid time interval [{start}, {end}]")]
    Interval { start: f64, end: f64 },

    #[error("group size {group_size} does not divide {samples} samples")]
    Grouping { samples: usize, group_size: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("resource budget exceeded: {required:e} operations requested, budget {budget:e}")]
    ResourceBudget { required: f64, budget: f64 },

    #[error("objective failed on sample {sample}: {source}")]
    Objective {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("objective returned a non-finite value after {} evaluations", .trace.evaluations)]
    NonFiniteObjective { trace: Box<OptimizationTrace> },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
