use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::TransformError;
use crate::frontend::topological_fields;
use crate::graph::{build_graph_with, DataflowGraph, NodeKind};
use crate::perf::operation_count;
use crate::program::{DevicePlacement, RemoteParams, StencilProgram};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemoteChannel {
    pub channel: String,
    pub latency: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    pub links: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DevicePlan {
    pub devices: usize,
    pub assignment: BTreeMap<String, usize>,
    /// Inputs read on more than one device, with those devices.
    pub replicated_inputs: BTreeMap<String, Vec<usize>>,
    pub remote_channels: Vec<RemoteChannel>,
}

/// Contiguous slices of the topological order with roughly equal
/// operation counts; every device gets at least one stencil.
fn greedy_split(program: &StencilProgram, k: usize) -> Result<BTreeMap<String, usize>, TransformError> {
    let n = program.nodes.len();
    if k == 0 {
        return Err(TransformError::NoDevices);
    }
    if k > n.max(1) {
        return Err(TransformError::TooManyDevices { devices: k, stencils: n });
    }
    let order = topological_fields(program)?;
    let cost = |i: usize| operation_count(&program.nodes[i].expression).max(1);
    let total: u64 = order.iter().map(|&i| cost(i)).sum();
    let mut assignment = BTreeMap::new();
    let (mut device, mut acc) = (0usize, 0u64);
    for (pos, &i) in order.iter().enumerate() {
        assignment.insert(program.nodes[i].name.clone(), device);
        acc += cost(i);
        let nodes_left = n - pos - 1;
        let devices_left = k - 1 - device;
        if devices_left > 0 && (acc * k as u64 >= total * (device as u64 + 1) || nodes_left == devices_left) {
            device += 1;
        }
    }
    Ok(assignment)
}

fn device_cycle(program: &StencilProgram, assignment: &BTreeMap<String, usize>, devices: usize) -> Option<Vec<usize>> {
    let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); devices];
    for node in &program.nodes {
        let to = assignment[&node.name];
        for f in node.inputs() {
            if let Some(&from) = assignment.get(f) {
                if from != to {
                    edges[from].insert(to);
                }
            }
        }
    }
    // depth-first search for a back edge
    fn visit(d: usize, edges: &[BTreeSet<usize>], state: &mut [u8], path: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[d] = 1;
        path.push(d);
        for &e in &edges[d] {
            if state[e] == 1 {
                let at = path.iter().position(|&p| p == e).unwrap();
                let mut cycle = path[at..].to_vec();
                cycle.push(e);
                return Some(cycle);
            }
            if state[e] == 0 {
                if let Some(c) = visit(e, edges, state, path) {
                    return Some(c);
                }
            }
        }
        path.pop();
        state[d] = 2;
        None
    }
    let mut state = vec![0u8; devices];
    (0..devices).find_map(|d| if state[d] == 0 { visit(d, &edges, &mut state, &mut Vec::new()) } else { None })
}

/// Places stencils on devices, replicates input readers per device and
/// marks cross-device channels remote.
pub fn partition(
    graph: &DataflowGraph,
    placement: &DevicePlacement,
    remote: &RemoteParams,
) -> Result<(DataflowGraph, DevicePlan), TransformError> {
    let program = &graph.program;
    let assignment = match placement {
        DevicePlacement::Count(k) => greedy_split(program, *k)?,
        DevicePlacement::Assignment(map) => {
            if let Some(unknown) = map.keys().find(|s| program.node(s).is_none()) {
                return Err(TransformError::UnknownStencil(unknown.clone()));
            }
            if let Some(missing) = program.nodes.iter().find(|n| !map.contains_key(&n.name)) {
                return Err(TransformError::Unassigned(missing.name.clone()));
            }
            map.clone()
        }
    };
    let devices = assignment.values().map(|&d| d + 1).max().unwrap_or(1);
    if let Some(devices) = device_cycle(program, &assignment, devices) {
        return Err(TransformError::DeviceCycle { devices });
    }
    let g = build_graph_with(program, &assignment, remote, graph.min_depth);

    let mut readers: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for n in &g.nodes {
        if let NodeKind::MemoryReader { field } = &n.kind {
            readers.entry(field.clone()).or_default().push(n.device);
        }
    }
    readers.retain(|_, d| d.len() > 1);
    let remote_channels = g
        .channels
        .iter()
        .enumerate()
        .filter_map(|(c, ch)| {
            ch.remote.as_ref().map(|r| RemoteChannel {
                channel: g.channel_label(c),
                latency: r.latency,
                bandwidth: r.effective_bandwidth(),
                links: r.links,
            })
        })
        .collect();
    let plan = DevicePlan { devices, assignment, replicated_inputs: readers, remote_channels };
    Ok((g, plan))
}
