use std::collections::{BTreeSet, HashMap};

use super::FrontendError;
use crate::program::StencilProgram;

/// Stencil indices ordered so producers precede consumers; ties go to the
/// lexicographically smaller name. Errors with one cycle if none exists.
pub fn topological_fields(program: &StencilProgram) -> Result<Vec<usize>, FrontendError> {
    let index: HashMap<&str, usize> =
        program.nodes.iter().enumerate().map(|(n, node)| (node.name.as_str(), n)).collect();
    let deps: Vec<Vec<usize>> =
        program.nodes.iter().map(|node| node.inputs().iter().filter_map(|f| index.get(f).copied()).collect()).collect();
    let mut indegree: Vec<usize> = deps.iter().map(Vec::len).collect();
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); program.nodes.len()];
    for (n, ds) in deps.iter().enumerate() {
        for &d in ds {
            users[d].push(n);
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(n, _)| (program.nodes[n].name.as_str(), n))
        .collect();
    let mut order = Vec::with_capacity(program.nodes.len());
    while let Some(first) = ready.pop_first() {
        let n = first.1;
        order.push(n);
        for &u in &users[n] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.insert((program.nodes[u].name.as_str(), u));
            }
        }
    }
    if order.len() == program.nodes.len() {
        return Ok(order);
    }
    // walk dependencies among the leftover nodes until one repeats
    let mut path: Vec<usize> = Vec::new();
    let mut cur = (0..program.nodes.len()).find(|&n| indegree[n] > 0).expect("leftover node");
    loop {
        if let Some(pos) = path.iter().position(|&p| p == cur) {
            let mut cycle: Vec<String> = path[pos..].iter().rev().map(|&n| program.nodes[n].name.clone()).collect();
            cycle.push(cycle[0].clone());
            return Err(FrontendError::Cycle { nodes: cycle });
        }
        path.push(cur);
        cur = *deps[cur].iter().find(|&&d| indegree[d] > 0).expect("cyclic node has cyclic dependency");
    }
}

/// Checks the program-level invariants and hands the program back.
pub fn validate_program(program: StencilProgram) -> Result<StencilProgram, FrontendError> {
    for node in &program.nodes {
        if program.input(&node.name).is_some() {
            return Err(FrontendError::MultipleProducers { field: node.name.clone() });
        }
        for access in node.expression.accesses() {
            let Some(spec) = program.field(&access.field) else {
                return Err(FrontendError::Code {
                    node: node.name.clone(),
                    source: super::ExprError::UnknownField(access.field.clone()),
                });
            };
            if spec.dims.len() != access.offsets.len() {
                return Err(FrontendError::Schema(format!(
                    "stencil '{}': access to '{}' has {} offsets, field has rank {}",
                    node.name,
                    access.field,
                    access.offsets.len(),
                    spec.dims.len()
                )));
            }
            if spec.dtype != node.dtype {
                return Err(FrontendError::DtypeMismatch {
                    node: node.name.clone(),
                    field: access.field.clone(),
                    expected: node.dtype.to_string(),
                    found: spec.dtype.to_string(),
                });
            }
        }
    }
    for (n, name) in program.outputs.iter().enumerate() {
        if program.node(name).is_none() {
            return Err(FrontendError::Schema(format!("output '{name}' is not produced by any stencil")));
        }
        if program.outputs[..n].contains(name) {
            return Err(FrontendError::Schema(format!("output '{name}' listed twice")));
        }
    }
    let innermost = program.dimensions.last().map_or(1, |d| d.extent);
    if program.vectorization == 0 || !innermost.is_multiple_of(program.vectorization) {
        return Err(FrontendError::Vectorization { width: program.vectorization, extent: innermost });
    }
    topological_fields(&program)?;
    Ok(program)
}
