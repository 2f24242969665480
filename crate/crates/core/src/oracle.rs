//! Sequential reference interpreter and array comparison.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::array::{match_inputs, DataError, FieldArray};
use crate::eval::{Cell, CompiledStencil, EvalError, Evaluator, Operand};
use crate::frontend::topological_fields;
use crate::program::StencilProgram;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Per-iteration-axis strides into a field's own row-major layout; axes
/// the field lacks get stride 0 (broadcast).
pub(crate) fn broadcast_strides(program: &StencilProgram, field: &str) -> Vec<usize> {
    let axes = program.field_axes(field).expect("declared field");
    let own = program.field_shape(field).expect("declared field");
    let mut strides = vec![0usize; program.dimensions.len()];
    let mut s = 1;
    for (d, &a) in axes.iter().enumerate().rev() {
        strides[a] = s;
        s *= own[d];
    }
    strides
}

/// Evaluates one stencil over the whole iteration space given its
/// materialized inputs (ordered as `stencil.fields`).
pub fn evaluate_stencil(
    program: &StencilProgram,
    stencil: &CompiledStencil,
    inputs: &[&FieldArray],
) -> Result<FieldArray, EvalError> {
    let shape = program.shape();
    let strides: Vec<Vec<usize>> = stencil.fields.iter().map(|f| broadcast_strides(program, f)).collect();
    let n = program.cells();
    let mut values = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut evaluator = Evaluator::new(stencil);
    let mut pos = vec![0usize; shape.len()];
    for _ in 0..n {
        let cell = {
            let p = &pos;
            let mut fetch = |o: Operand<'_>| {
                let idx: usize = p
                    .iter()
                    .zip(o.offsets)
                    .zip(&strides[o.field])
                    .map(|((&x, &off), &s)| (x as i64 + off) as usize * s)
                    .sum();
                let a = inputs[o.field];
                Cell { value: a.values[idx], valid: a.mask[idx] }
            };
            evaluator.eval(p, &mut fetch)?
        };
        values.push(cell.value);
        mask.push(cell.valid);
        // advance row-major
        for d in (0..shape.len()).rev() {
            pos[d] += 1;
            if pos[d] < shape[d] {
                break;
            }
            pos[d] = 0;
        }
    }
    Ok(FieldArray { name: stencil.name.clone(), dtype: stencil.dtype, shape, values, mask })
}

/// Every field of the program, inputs included, fully materialized.
pub fn interpret_all(
    program: &StencilProgram,
    inputs: &[FieldArray],
) -> Result<BTreeMap<String, FieldArray>, OracleError> {
    let mut fields: BTreeMap<String, FieldArray> =
        match_inputs(program, inputs)?.into_iter().map(|a| (a.name.clone(), a.clone())).collect();
    let order = topological_fields(program).expect("interpret needs a validated program");
    for n in order {
        let stencil = CompiledStencil::new(program, &program.nodes[n]);
        let args: Vec<&FieldArray> = stencil.fields.iter().map(|f| &fields[f]).collect();
        let out = evaluate_stencil(program, &stencil, &args)?;
        fields.insert(out.name.clone(), out);
    }
    Ok(fields)
}

/// Program outputs in declaration order.
pub fn interpret(program: &StencilProgram, inputs: &[FieldArray]) -> Result<Vec<FieldArray>, OracleError> {
    let mut all = interpret_all(program, inputs)?;
    Ok(program.outputs.iter().map(|o| all.remove(o).expect("outputs are produced")).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CompareMode {
    BitExact,
    Relative { epsilon: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub index: Vec<usize>,
    pub expected: String,
    pub actual: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub field: String,
    #[serde(flatten)]
    pub mode: CompareMode,
    pub cells: usize,
    pub valid_cells: usize,
    pub value_mismatches: usize,
    pub mask_mismatches: usize,
    pub max_abs_diff: f64,
    /// The first few differing cells.
    pub examples: Vec<Mismatch>,
    pub passed: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot compare '{field}': shape {a:?}/{a_dtype} vs {b:?}/{b_dtype}")]
pub struct CompareError {
    pub field: String,
    pub a: Vec<usize>,
    pub a_dtype: String,
    pub b: Vec<usize>,
    pub b_dtype: String,
}

const MAX_EXAMPLES: usize = 10;

/// Compares `actual` against `expected`. Masks must agree in both modes;
/// values are compared on valid cells.
pub fn compare(expected: &FieldArray, actual: &FieldArray, mode: CompareMode) -> Result<CompareReport, CompareError> {
    if expected.shape != actual.shape || expected.dtype != actual.dtype || expected.name != actual.name {
        return Err(CompareError {
            field: expected.name.clone(),
            a: expected.shape.clone(),
            a_dtype: expected.dtype.to_string(),
            b: actual.shape.clone(),
            b_dtype: actual.dtype.to_string(),
        });
    }
    let mut report = CompareReport {
        field: expected.name.clone(),
        mode,
        cells: expected.len(),
        valid_cells: 0,
        value_mismatches: 0,
        mask_mismatches: 0,
        max_abs_diff: 0.0,
        examples: Vec::new(),
        passed: false,
    };
    let mut pos = vec![0usize; expected.shape.len()];
    for i in 0..expected.len() {
        let (ea, eb) = (expected.mask[i], actual.mask[i]);
        let (va, vb) = (expected.values[i], actual.values[i]);
        let differs = if ea != eb {
            report.mask_mismatches += 1;
            true
        } else if ea {
            report.valid_cells += 1;
            let diff = (va.to_f64() - vb.to_f64()).abs();
            if diff.is_finite() {
                report.max_abs_diff = report.max_abs_diff.max(diff);
            }
            let same = match mode {
                CompareMode::BitExact => va.bits() == vb.bits(),
                CompareMode::Relative { epsilon } => {
                    let (a, b) = (va.to_f64(), vb.to_f64());
                    a.to_bits() == b.to_bits() || diff <= epsilon * a.abs().max(b.abs())
                }
            };
            if !same {
                report.value_mismatches += 1;
            }
            !same
        } else {
            false
        };
        if differs && report.examples.len() < MAX_EXAMPLES {
            crate::eval::unflatten(i, &expected.shape, &mut pos);
            let show = |valid: bool, v: crate::eval::Value| if valid { v.to_string() } else { "invalid".into() };
            report.examples.push(Mismatch { index: pos.clone(), expected: show(ea, va), actual: show(eb, vb) });
        }
    }
    report.passed = report.value_mismatches == 0 && report.mask_mismatches == 0;
    Ok(report)
}
