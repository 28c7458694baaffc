//! Mini-batch stochastic gradient descent for CP tensor decomposition with
//! importance-sampled fibers.
//!
//! The solver never materializes a full Khatri-Rao product or unfolding:
//! each iteration samples a handful of mode-n fibers — uniformly, by
//! leverage scores, by squared row norms, or by blocks thereof — builds just
//! the matching Khatri-Rao rows, and takes an unbiased reweighted gradient
//! step on one factor.
//!
//! Modes, factor rows, and unfolding columns are 1-based throughout the
//! public API; unfoldings store the first index fastest.
//!
//! Modules:
//! - [`tensor`]: dense tensors, unfolding index maps, CP models.
//! - [`sampling`]: row distributions, sampled Khatri-Rao rows, block draws.
//! - [`solver`]: gradient estimators, step schedules, the optimization loop.
//! - [`synth`]: synthetic problems with planted high-influence rows.
//! - [`oracle`]: slow definitional reference paths and a self-check suite.
//! - [`io`]: tensor and model files.

pub use ndarray;

pub mod error;
pub mod io;
mod linalg;
pub mod oracle;
pub mod sampling;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use sampling::{BatchWeighting, ProbabilityVector, SampleBatch, SamplerStrategy};
pub use solver::{
    run, RunTrace, SolverConfig, StepSchedule, StopRule, TerminalStatus, TraceRecord,
};
pub use synth::{generate, GenSpec, SynthData};
pub use tensor::{DenseTensor, KruskalModel};
