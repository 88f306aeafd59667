//! Semidefinite programs for certificate evaluation and policy improvement.

pub mod assembly;
#[cfg(feature = "clarabel")]
pub mod clarabel_backend;
pub mod expr;
pub mod initial_gain;
pub mod iteration;
pub mod problem;
pub mod verify;

pub use assembly::{assemble_evaluation, assemble_improvement, Assembled, LmiSettings};
#[cfg(feature = "clarabel")]
pub use clarabel_backend::ClarabelBackend;
pub use initial_gain::initial_decay_gain;
pub use iteration::{
    evaluate_policy, improve_policy, policy_iteration, IterationRecord, IterationResult, StepKind,
    SynthesisSettings,
};
pub use problem::{Backend, BlockTag, Family, SdpProblem, SdpSolution, SolveStatus, SolverOptions};
pub use verify::{verify_certificate, VerificationReport, VerifyOptions};
