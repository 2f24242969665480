//! Analytic cycle prediction, static operation counts and roofline bounds.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::buffers::BufferReport;
use crate::expr::{BinaryOp, Expression, Function, GuardFallback};
use crate::graph::DataflowGraph;
use crate::program::StencilProgram;

/// `C = L + I * N` with `I = 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CyclePrediction {
    /// Pipeline latency: longest source-to-sink delay in cycles.
    pub latency: u64,
    /// Vector iterations.
    pub iterations: u64,
    pub initiation_interval: u64,
    pub cycles: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

impl CyclePrediction {
    /// Share of the runtime spent filling the pipeline.
    pub fn latency_fraction(&self) -> f64 {
        self.latency as f64 / self.cycles as f64
    }
}

pub fn predict_from(latency: u64, iterations: u64, frequency_hz: Option<f64>) -> CyclePrediction {
    let cycles = latency + iterations;
    CyclePrediction {
        latency,
        iterations,
        initiation_interval: 1,
        cycles,
        frequency_hz,
        seconds: frequency_hz.map(|f| cycles as f64 / f),
    }
}

pub fn predict_cycles(graph: &DataflowGraph, report: &BufferReport, frequency_hz: Option<f64>) -> CyclePrediction {
    predict_from(report.critical_path, graph.program.iterations() as u64, frequency_hz)
}

/// Fields of one dimensionality and their total element volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VolumeTerm {
    pub dims: Vec<String>,
    pub fields: u64,
    pub elements: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProgramCounts {
    /// Operations per iteration point, by kind.
    pub ops: BTreeMap<String, u64>,
    pub ops_per_point: u64,
    pub branches: u64,
    pub points: u64,
    pub reads: Vec<VolumeTerm>,
    pub writes: Vec<VolumeTerm>,
}

impl ProgramCounts {
    pub fn total_ops(&self) -> u64 {
        self.ops_per_point * self.points
    }

    pub fn operand_volume(&self) -> u64 {
        self.reads.iter().chain(&self.writes).map(|t| t.elements).sum()
    }
}

fn op_kind(e: &Expression) -> Option<&'static str> {
    match e {
        Expression::Neg(_) => Some("neg"),
        Expression::Binary { op, .. } => Some(match op {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }),
        Expression::Call { func, .. } => Some(match func {
            Function::Sqrt => "sqrt",
            Function::Exp => "exp",
            Function::Log => "log",
            Function::Abs => "abs",
            Function::Min => "min",
            Function::Max => "max",
            Function::Pow => "pow",
        }),
        Expression::Ternary { .. } => Some("compare"),
        _ => None,
    }
}

/// Adds every operation of `e` to `ops`; both sides of a ternary and of a
/// guard count. Returns the number of ternaries.
pub fn count_expression(e: &Expression, ops: &mut BTreeMap<String, u64>) -> u64 {
    if let Some(kind) = op_kind(e) {
        *ops.entry(kind.to_string()).or_default() += 1;
    }
    match e {
        Expression::Literal(_) | Expression::Access(_) => 0,
        Expression::Neg(x) => count_expression(x, ops),
        Expression::Binary { lhs, rhs, .. } => count_expression(lhs, ops) + count_expression(rhs, ops),
        Expression::Call { args, .. } => args.iter().map(|a| count_expression(a, ops)).sum(),
        Expression::Ternary { cond, then_branch, else_branch } => {
            1 + count_expression(&cond.lhs, ops)
                + count_expression(&cond.rhs, ops)
                + count_expression(then_branch, ops)
                + count_expression(else_branch, ops)
        }
        Expression::Guard(g) => {
            count_expression(&g.body, ops)
                + match &g.fallback {
                    GuardFallback::Invalid => 0,
                    GuardFallback::Value(v) => count_expression(v, ops),
                }
        }
    }
}

/// Total operations of one expression.
pub fn operation_count(e: &Expression) -> u64 {
    let mut ops = BTreeMap::new();
    count_expression(e, &mut ops);
    ops.values().sum()
}

fn volume_terms<'a>(program: &StencilProgram, fields: impl Iterator<Item = &'a str>) -> Vec<VolumeTerm> {
    let mut terms: BTreeMap<Vec<String>, VolumeTerm> = BTreeMap::new();
    for f in fields {
        let dims = program.field_dims(f).expect("declared field");
        let volume: usize = program.field_shape(f).expect("declared field").iter().product();
        let t = terms.entry(dims.clone()).or_insert(VolumeTerm { dims, fields: 0, elements: 0 });
        t.fields += 1;
        t.elements += volume as u64;
    }
    let mut out: Vec<VolumeTerm> = terms.into_values().collect();
    // highest dimensionality first
    out.sort_by(|a, b| b.dims.len().cmp(&a.dims.len()).then(a.dims.cmp(&b.dims)));
    out
}

/// Static counts assuming every input is loaded once and every output
/// written once.
pub fn count_program(program: &StencilProgram) -> ProgramCounts {
    let mut ops = BTreeMap::new();
    let mut branches = 0;
    for n in &program.nodes {
        branches += count_expression(&n.expression, &mut ops);
    }
    let read: Vec<&str> =
        program.inputs.iter().map(|i| i.spec.name.as_str()).filter(|f| !program.consumers(f).is_empty()).collect();
    ProgramCounts {
        ops_per_point: ops.values().sum(),
        ops,
        branches,
        points: program.cells() as u64,
        reads: volume_terms(program, read.into_iter()),
        writes: volume_terms(program, program.outputs.iter().map(String::as_str)),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PerfError {
    #[error("operand volume is zero")]
    ZeroOperands,
    #[error("bytes per operand must be positive")]
    ZeroBytes,
}

fn ratio_string<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

fn to_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RooflineResult {
    #[serde(serialize_with = "ratio_string")]
    pub ops_per_operand: Ratio<u64>,
    #[serde(serialize_with = "ratio_string")]
    pub ops_per_byte: Ratio<u64>,
    pub ops_per_byte_value: f64,
    /// Bandwidth-bound performance in GOp/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound_gops: Option<f64>,
    /// Bandwidth in GB/s needed to sustain the requested rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub required_gbs: Option<f64>,
}

/// Arithmetic intensity and bandwidth relations for `ops` operations over
/// `operands` operands of `bytes_per_operand` bytes each.
pub fn roofline(
    ops: u64,
    operands: u64,
    bytes_per_operand: u64,
    bandwidth_gbs: Option<f64>,
    rate_gops: Option<f64>,
) -> Result<RooflineResult, PerfError> {
    if operands == 0 {
        return Err(PerfError::ZeroOperands);
    }
    if bytes_per_operand == 0 {
        return Err(PerfError::ZeroBytes);
    }
    let per_operand = Ratio::new(ops, operands);
    let per_byte = per_operand / bytes_per_operand;
    let ai = to_f64(&per_byte);
    Ok(RooflineResult {
        ops_per_operand: per_operand,
        ops_per_byte: per_byte,
        ops_per_byte_value: ai,
        bound_gops: bandwidth_gbs.map(|b| ai * b),
        required_gbs: rate_gops.map(|r| r / ai),
    })
}

/// Roofline of a whole program from its static counts.
pub fn program_roofline(
    counts: &ProgramCounts,
    bytes_per_operand: u64,
    bandwidth_gbs: Option<f64>,
    rate_gops: Option<f64>,
) -> Result<RooflineResult, PerfError> {
    roofline(counts.total_ops(), counts.operand_volume(), bytes_per_operand, bandwidth_gbs, rate_gops)
}
