//! Spectral-element discretization and the instrumented CG work unit.

pub mod basis;
pub mod case;
pub mod field;
pub mod flops;
pub mod gather_scatter;
pub mod operators;
pub mod work;

pub use basis::{PressureBasis, SpectralBasis};
pub use case::{dof_count, memory_estimate, CaseConfig, DEFAULT_BYTES_PER_DOF_COEFFICIENT, WORD_BYTES};
pub use field::{Axis, ElementField};
pub use flops::FlopCounter;
pub use operators::{apply_element_laplacian, tensor_derivative, ElementOperator, ReferenceElement};
pub use work::{
    cg_work_unit, execute_work_unit, run_work_unit, work_unit_flops, Boundary, IterationMode, RankStepReport,
    StepReport, WorkUnitOptions, WorkUnitRun,
};

use thiserror::Error;

use crate::partition::PartitionError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum SemError {
    #[error("polynomial degree {degree} is below the minimum of {min}")]
    DegreeTooSmall { degree: usize, min: usize },
    #[error("GLL node {node} for degree {degree} did not converge")]
    NodeSolve { degree: usize, node: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid element geometry: {0}")]
    Geometry(String),
    #[error("invalid case configuration: {0}")]
    InvalidConfig(String),
    #[error("conjugate gradient diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("rank worker panicked")]
    WorkerPanic,
}
