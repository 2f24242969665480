use std::collections::BTreeMap;

use serde::Serialize;

use super::TransformError;
use crate::expr::{Access, Condition, Expression, Guard, GuardFallback};
use crate::frontend::validate_program;
use crate::graph::{build_graph_with, topological_order, DataflowGraph};
use crate::program::{Boundary, InputBoundary, RemoteParams, StencilNode, StencilProgram};

/// A producer whose only consumer can absorb it. `via` is the
/// intermediate field written by `producer`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FusionCandidate {
    pub producer: String,
    pub consumer: String,
    pub via: String,
}

/// Both shrink, or per-input conditions that agree on every shared field.
fn same_boundaries(a: &Boundary, b: &Boundary) -> bool {
    match (a, b) {
        (Boundary::Shrink, Boundary::Shrink) => true,
        (Boundary::PerInput(x), Boundary::PerInput(y)) => x.iter().all(|(f, bc)| y.get(f).is_none_or(|o| o == bc)),
        _ => false,
    }
}

fn program_candidates(program: &StencilProgram, order: &[&str]) -> Vec<FusionCandidate> {
    let mut out = Vec::new();
    for &name in order {
        let producer = program.node(name).expect("ordered stencil");
        if program.outputs.iter().any(|o| o == name) {
            continue;
        }
        let consumers = program.consumers(name);
        let [consumer] = consumers.as_slice() else { continue };
        if same_boundaries(&producer.boundary, &consumer.boundary)
            && program.field_dims(&consumer.name) == program.field_dims(name)
        {
            out.push(FusionCandidate {
                producer: name.to_string(),
                consumer: consumer.name.clone(),
                via: name.to_string(),
            });
        }
    }
    out
}

/// All fusible producer/consumer pairs, producers in topological order.
pub fn find_fusion_candidates(graph: &DataflowGraph) -> Vec<FusionCandidate> {
    let order: Vec<&str> = topological_order(graph).into_iter().filter_map(|v| graph.nodes[v].stencil()).collect();
    program_candidates(&graph.program, &order)
}

/// Whether every dimension the shift moves along is already tested by an
/// access that goes at least as far in the same direction: if the shifted
/// cell leaves the domain, that access does too and shrink drops the cell.
fn shift_is_self_guarded(program: &StencilProgram, producer: &Expression, delta: &[i64]) -> bool {
    let accesses = producer.unconditional_accesses();
    delta.iter().enumerate().filter(|(_, &d)| d != 0).all(|(axis, &d)| {
        accesses.iter().any(|a| {
            let axes = program.field_axes(&a.field).unwrap_or_default();
            axes.iter().position(|&x| x == axis).is_some_and(|k| a.offsets[k] * d >= 0)
        })
    })
}

/// The producer's expression evaluated at an offset of `delta` cells.
fn shifted(program: &StencilProgram, e: &Expression, delta: &[i64]) -> Expression {
    let mut e = e.clone();
    e.map_accesses(&mut |a| {
        let axes = program.field_axes(&a.field).expect("declared field");
        for (o, &axis) in a.offsets.iter_mut().zip(&axes) {
            *o += delta[axis];
        }
    });
    e.map_guards(&mut |g| {
        for (o, d) in g.iter_mut().zip(delta) {
            *o += d;
        }
    });
    e
}

/// Like [`Expression::substitute`], also passing the cell of the innermost
/// enclosing guard (zero outside any guard).
fn substitute_in_context(
    e: &Expression,
    center: &[i64],
    f: &mut impl FnMut(&Access, &[i64]) -> Option<Expression>,
) -> Expression {
    match e {
        Expression::Access(a) => f(a, center).unwrap_or_else(|| e.clone()),
        Expression::Guard(g) => Expression::Guard(Box::new(Guard {
            offsets: g.offsets.clone(),
            body: substitute_in_context(&g.body, &g.offsets, f),
            fallback: match &g.fallback {
                GuardFallback::Invalid => GuardFallback::Invalid,
                GuardFallback::Value(v) => GuardFallback::Value(substitute_in_context(v, center, f)),
            },
        })),
        Expression::Literal(_) => e.clone(),
        Expression::Neg(x) => Expression::Neg(Box::new(substitute_in_context(x, center, f))),
        Expression::Binary { op, lhs, rhs } => Expression::Binary {
            op: *op,
            lhs: Box::new(substitute_in_context(lhs, center, f)),
            rhs: Box::new(substitute_in_context(rhs, center, f)),
        },
        Expression::Call { func, args } => {
            Expression::Call { func: *func, args: args.iter().map(|a| substitute_in_context(a, center, f)).collect() }
        }
        Expression::Ternary { cond, then_branch, else_branch } => Expression::Ternary {
            cond: Box::new(Condition {
                op: cond.op,
                lhs: substitute_in_context(&cond.lhs, center, f),
                rhs: substitute_in_context(&cond.rhs, center, f),
            }),
            then_branch: Box::new(substitute_in_context(then_branch, center, f)),
            else_branch: Box::new(substitute_in_context(else_branch, center, f)),
        },
    }
}

fn fused_node(program: &StencilProgram, producer: &StencilNode, consumer: &StencilNode) -> StencilNode {
    let u = &producer.name;
    let zero = vec![0i64; program.dimensions.len()];
    let expression = substitute_in_context(&consumer.expression, &zero, &mut |a, center| {
        if &a.field != u {
            return None;
        }
        let delta = &a.offsets;
        let body = shifted(program, &producer.expression, delta);
        // the context's center is known to be inside the domain
        if delta.as_slice() == center {
            return Some(body);
        }
        let fallback = match &consumer.boundary {
            Boundary::Shrink if shift_is_self_guarded(program, &producer.expression, delta) => return Some(body),
            Boundary::Shrink => GuardFallback::Invalid,
            Boundary::PerInput(map) => match map.get(u) {
                Some(InputBoundary::Constant(v)) => GuardFallback::Value(Expression::Literal(*v)),
                Some(InputBoundary::Copy) => GuardFallback::Value(shifted(program, &producer.expression, center)),
                None => GuardFallback::Invalid,
            },
        };
        Some(Expression::Guard(Box::new(Guard { offsets: delta.clone(), body, fallback })))
    });
    let boundary = match (&producer.boundary, &consumer.boundary) {
        (Boundary::PerInput(p), Boundary::PerInput(c)) => {
            let mut merged: BTreeMap<_, _> =
                c.iter().filter(|(f, _)| *f != u).map(|(f, b)| (f.clone(), b.clone())).collect();
            for (f, b) in p {
                merged.entry(f.clone()).or_insert_with(|| b.clone());
            }
            Boundary::PerInput(merged)
        }
        _ => Boundary::Shrink,
    };
    StencilNode { name: consumer.name.clone(), dtype: consumer.dtype, expression, boundary }
}

/// Fuses one candidate at the program level. The fused stencil keeps the
/// consumer's name and position.
pub fn fuse_program(program: &StencilProgram, candidate: &FusionCandidate) -> Result<StencilProgram, TransformError> {
    let order: Vec<&str> = program.nodes.iter().map(|n| n.name.as_str()).collect();
    if !program_candidates(program, &order).contains(candidate) {
        return Err(TransformError::StaleCandidate {
            producer: candidate.producer.clone(),
            consumer: candidate.consumer.clone(),
        });
    }
    let producer = program.node(&candidate.producer).expect("candidate producer");
    let consumer = program.node(&candidate.consumer).expect("candidate consumer");
    let fused = fused_node(program, producer, consumer);
    let mut out = program.clone();
    out.nodes = program
        .nodes
        .iter()
        .filter(|n| n.name != producer.name)
        .map(|n| if n.name == consumer.name { fused.clone() } else { n.clone() })
        .collect();
    Ok(validate_program(out)?)
}

fn rebuild(graph: &DataflowGraph, program: &StencilProgram) -> DataflowGraph {
    let assignment: BTreeMap<String, usize> =
        graph.nodes.iter().filter_map(|n| n.stencil().map(|s| (s.to_string(), n.device))).collect();
    let remote = graph.channels.iter().find_map(|c| c.remote.clone()).unwrap_or_else(RemoteParams::default);
    build_graph_with(program, &assignment, &remote, graph.min_depth)
}

pub fn fuse(graph: &DataflowGraph, candidate: &FusionCandidate) -> Result<DataflowGraph, TransformError> {
    let program = fuse_program(&graph.program, candidate)?;
    Ok(rebuild(graph, &program))
}

/// Fuses the first candidate in producer topological order until none is
/// left.
pub fn fuse_all(graph: &DataflowGraph) -> DataflowGraph {
    let mut g = graph.clone();
    while let Some(c) = find_fusion_candidates(&g).into_iter().next() {
        g = fuse(&g, &c).expect("fresh candidates always fuse");
    }
    g
}
