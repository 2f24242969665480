//! Graph transformations: stencil fusion and multi-device partitioning.
//! Both return new graphs and leave their input untouched.

mod fusion;
mod partition;

use thiserror::Error;

use crate::frontend::FrontendError;

pub use fusion::{find_fusion_candidates, fuse, fuse_all, fuse_program, FusionCandidate};
pub use partition::{partition, DevicePlan, RemoteChannel};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("fusion candidate {producer} -> {consumer} is not valid in this graph")]
    StaleCandidate { producer: String, consumer: String },
    #[error("transformed program is invalid: {0}")]
    Invalid(#[from] FrontendError),
    #[error("device assignment creates a cycle between devices {}", devices.iter().map(usize::to_string).collect::<Vec<_>>().join(" -> "))]
    DeviceCycle { devices: Vec<usize> },
    #[error("cannot split {stencils} stencils over {devices} devices")]
    TooManyDevices { devices: usize, stencils: usize },
    #[error("device count must be at least 1")]
    NoDevices,
    #[error("stencil '{0}' has no device assignment")]
    Unassigned(String),
    #[error("assignment names '{0}', which is not a stencil")]
    UnknownStencil(String),
}
