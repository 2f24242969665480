//! In-memory form of a stencil program.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::expr::{Expression, Printer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Float64,
    Int32,
    Int64,
}

impl DType {
    pub fn parse(s: &str) -> Option<DType> {
        Some(match s {
            "float32" => DType::Float32,
            "float64" => DType::Float64,
            "int32" => DType::Int32,
            "int64" => DType::Int64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Float32 => "float32",
            DType::Float64 => "float64",
            DType::Int32 => "int32",
            DType::Int64 => "int64",
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DType::Float32 | DType::Int32 => 4,
            DType::Float64 | DType::Int64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::Float32 | DType::Float64)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<String>,
}

/// Where the values of an input field come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Raw little-endian row-major binary file.
    File(PathBuf),
    Constant(f64),
    /// Uniform pseudo-random values from a seeded generator.
    Random(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputField {
    pub spec: FieldSpec,
    pub data: Option<DataSource>,
}

/// Out-of-bounds handling for one input of a stencil.
#[derive(Clone, Debug, PartialEq)]
pub enum InputBoundary {
    Constant(f64),
    Copy,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Boundary {
    /// Outputs that read out of bounds are dropped.
    Shrink,
    PerInput(BTreeMap<String, InputBoundary>),
}

impl Boundary {
    pub fn none() -> Boundary {
        Boundary::PerInput(BTreeMap::new())
    }

    pub fn for_input(&self, field: &str) -> Option<&InputBoundary> {
        match self {
            Boundary::Shrink => None,
            Boundary::PerInput(map) => map.get(field),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilNode {
    pub name: String,
    pub dtype: DType,
    pub expression: Expression,
    pub boundary: Boundary,
}

impl StencilNode {
    pub fn inputs(&self) -> Vec<&str> {
        self.expression.fields()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dimension {
    pub name: String,
    pub extent: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteParams {
    pub latency: u64,
    /// Elements per cycle per link; `None` is unlimited.
    pub bandwidth: Option<f64>,
    pub links: u32,
}

impl Default for RemoteParams {
    fn default() -> Self {
        RemoteParams { latency: 0, bandwidth: None, links: 1 }
    }
}

impl RemoteParams {
    pub fn effective_bandwidth(&self) -> Option<f64> {
        self.bandwidth.map(|b| b * f64::from(self.links))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DevicePlacement {
    Count(usize),
    Assignment(BTreeMap<String, usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceSpec {
    pub placement: DevicePlacement,
    pub remote: RemoteParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilProgram {
    pub dimensions: Vec<Dimension>,
    pub inputs: Vec<InputField>,
    pub outputs: Vec<String>,
    pub nodes: Vec<StencilNode>,
    pub vectorization: usize,
    pub devices: Option<DeviceSpec>,
}

impl StencilProgram {
    pub fn shape(&self) -> Vec<usize> {
        self.dimensions.iter().map(|d| d.extent).collect()
    }

    pub fn dim_names(&self) -> Vec<String> {
        self.dimensions.iter().map(|d| d.name.clone()).collect()
    }

    pub fn cells(&self) -> usize {
        self.dimensions.iter().map(|d| d.extent).product()
    }

    /// Vector iterations of the shared iteration space.
    pub fn iterations(&self) -> usize {
        self.cells() / self.vectorization.max(1)
    }

    pub fn input(&self, name: &str) -> Option<&InputField> {
        self.inputs.iter().find(|i| i.spec.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&StencilNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Spec of any field: an input or a stencil output (full rank).
    pub fn field(&self, name: &str) -> Option<FieldSpec> {
        if let Some(i) = self.input(name) {
            return Some(i.spec.clone());
        }
        self.node(name).map(|n| FieldSpec { name: n.name.clone(), dtype: n.dtype, dims: self.dim_names() })
    }

    pub fn field_dims(&self, name: &str) -> Option<Vec<String>> {
        self.field(name).map(|f| f.dims)
    }

    /// Extents of a field in its own dimensions.
    pub fn field_shape(&self, name: &str) -> Option<Vec<usize>> {
        let dims = self.field_dims(name)?;
        Some(dims.iter().map(|d| self.dimensions.iter().find(|g| &g.name == d).map_or(1, |g| g.extent)).collect())
    }

    /// For each field dimension, its index among the iteration dimensions.
    pub fn field_axes(&self, name: &str) -> Option<Vec<usize>> {
        let dims = self.field_dims(name)?;
        dims.iter().map(|d| self.dimensions.iter().position(|g| &g.name == d)).collect()
    }

    /// Stencils consuming `field`, in program order.
    pub fn consumers(&self, field: &str) -> Vec<&StencilNode> {
        self.nodes.iter().filter(|n| n.inputs().contains(&field)).collect()
    }

    pub fn render(&self, e: &Expression) -> String {
        let dims = self.dim_names();
        let lookup = |f: &str| self.field_dims(f);
        Printer { dims: &dims, field_dims: &lookup }.render(e)
    }
}
