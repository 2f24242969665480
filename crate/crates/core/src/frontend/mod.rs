//! JSON program description: parsing, validation and canonical output.

mod json;
mod parser;
mod validate;

use thiserror::Error;

pub use json::{devices_to_json, parse_program, program_to_json, serialize_program};

/// Parses a stand-alone device description (the `devices` object).
pub fn parse_devices(text: &str) -> Result<crate::program::DeviceSpec, FrontendError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| FrontendError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    json::parse_devices(&v)
}
pub use parser::{parse_expression, ExprError};
pub use validate::{topological_fields, validate_program};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("JSON syntax error at line {line}, column {column}: {message}")]
    Json { line: usize, column: usize, message: String },
    #[error("invalid program description: {0}")]
    Schema(String),
    #[error("stencil '{node}': {source}")]
    Code {
        node: String,
        #[source]
        source: ExprError,
    },
    #[error("stencil '{node}': dtype mismatch on '{field}' (expected {expected}, found {found})")]
    DtypeMismatch { node: String, field: String, expected: String, found: String },
    #[error("field '{field}': dimension '{dim}' is not an iteration dimension")]
    UnknownDimension { field: String, dim: String },
    #[error("stencil '{node}': input '{field}' is accessed out of bounds but has no boundary condition")]
    MissingBoundary { node: String, field: String },
    #[error("dependency cycle between stencils: {}", nodes.join(" -> "))]
    Cycle { nodes: Vec<String> },
    #[error("field '{field}' has more than one producer")]
    MultipleProducers { field: String },
    #[error("vectorization width {width} does not divide the innermost extent {extent}")]
    Vectorization { width: usize, extent: usize },
}
