//! Compiler front-end, buffer analysis and cycle-level simulation for
//! directed acyclic graphs of stencil computations mapped onto spatial
//! dataflow hardware.

pub mod array;
pub mod buffers;
pub mod eval;
pub mod expr;
pub mod frontend;
pub mod graph;
pub mod oracle;
pub mod perf;
pub mod program;
pub mod sim;
pub mod transform;

#[cfg(test)]
mod testing;
