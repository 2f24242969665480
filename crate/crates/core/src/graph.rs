//! Dataflow graph of memory readers, stencil units and memory writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use crate::frontend::topological_fields;
use crate::program::{RemoteParams, StencilProgram};

pub const DEFAULT_MIN_DEPTH: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    MemoryReader { field: String },
    StencilUnit { stencil: String },
    MemoryWriter { field: String },
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::MemoryReader { .. } => "reader",
            NodeKind::StencilUnit { .. } => "stencil",
            NodeKind::MemoryWriter { .. } => "writer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataflowNode {
    pub id: String,
    pub kind: NodeKind,
    pub device: usize,
}

impl DataflowNode {
    pub fn stencil(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::StencilUnit { stencil } => Some(stencil),
            _ => None,
        }
    }
}

/// A FIFO between two nodes. `depth` is in elements.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub producer: usize,
    pub consumer: usize,
    pub field: String,
    pub depth: usize,
    pub remote: Option<RemoteParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataflowGraph {
    pub program: StencilProgram,
    pub nodes: Vec<DataflowNode>,
    pub channels: Vec<Channel>,
    pub min_depth: usize,
}

pub fn reader_id(field: &str, device: usize) -> String {
    if device == 0 {
        format!("read:{field}")
    } else {
        format!("read:{field}@{device}")
    }
}

pub fn writer_id(field: &str) -> String {
    format!("write:{field}")
}

/// Lowers a validated program onto a single device.
pub fn build_graph(program: &StencilProgram) -> DataflowGraph {
    build_graph_with(program, &BTreeMap::new(), &RemoteParams::default(), DEFAULT_MIN_DEPTH)
}

/// Lowers a program with stencils placed per `assignment` (missing entries
/// go to device 0). Inputs get one reader per device that consumes them.
pub fn build_graph_with(
    program: &StencilProgram,
    assignment: &BTreeMap<String, usize>,
    remote: &RemoteParams,
    min_depth: usize,
) -> DataflowGraph {
    let order = topological_fields(program).expect("build_graph needs a validated program");
    let device_of = |stencil: &str| assignment.get(stencil).copied().unwrap_or(0);

    let mut nodes = Vec::new();
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    let mut push = |nodes: &mut Vec<DataflowNode>, id: String, kind: NodeKind, device: usize| {
        by_id.insert(id.clone(), nodes.len());
        nodes.push(DataflowNode { id, kind, device });
        nodes.len() - 1
    };

    // readers: one per (input, consuming device)
    let mut readers: BTreeMap<(String, usize), usize> = BTreeMap::new();
    for input in &program.inputs {
        let devices: BTreeSet<usize> = program.consumers(&input.spec.name).iter().map(|n| device_of(&n.name)).collect();
        for dev in devices {
            let idx = push(
                &mut nodes,
                reader_id(&input.spec.name, dev),
                NodeKind::MemoryReader { field: input.spec.name.clone() },
                dev,
            );
            readers.insert((input.spec.name.clone(), dev), idx);
        }
    }
    let mut units: BTreeMap<String, usize> = BTreeMap::new();
    for &n in &order {
        let name = &program.nodes[n].name;
        let idx = push(&mut nodes, name.clone(), NodeKind::StencilUnit { stencil: name.clone() }, device_of(name));
        units.insert(name.clone(), idx);
    }
    let mut writers = Vec::new();
    for out in &program.outputs {
        let dev = device_of(out);
        writers.push(push(&mut nodes, writer_id(out), NodeKind::MemoryWriter { field: out.clone() }, dev));
    }

    let mut channels = Vec::new();
    let mut link = |producer: usize, consumer: usize, field: &str, nodes: &[DataflowNode]| {
        let crosses = nodes[producer].device != nodes[consumer].device;
        channels.push(Channel {
            producer,
            consumer,
            field: field.to_string(),
            depth: min_depth,
            remote: crosses.then(|| remote.clone()),
        });
    };
    for &n in &order {
        let node = &program.nodes[n];
        let consumer = units[&node.name];
        for field in node.inputs() {
            let producer = match units.get(field) {
                Some(&u) => u,
                None => readers[&(field.to_string(), device_of(&node.name))],
            };
            link(producer, consumer, field, &nodes);
        }
    }
    for (out, &w) in program.outputs.iter().zip(&writers) {
        link(units[out], w, out, &nodes);
    }

    DataflowGraph { program: program.clone(), nodes, channels, min_depth }
}

impl DataflowGraph {
    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn incoming(&self, node: usize) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels.iter().enumerate().filter(move |(_, c)| c.consumer == node)
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels.iter().enumerate().filter(move |(_, c)| c.producer == node)
    }

    /// `producer->consumer` label used in reports and `--force-depth`.
    pub fn channel_label(&self, c: usize) -> String {
        let ch = &self.channels[c];
        format!("{}->{}", self.nodes[ch.producer].id, self.nodes[ch.consumer].id)
    }

    pub fn channel_by_label(&self, label: &str) -> Option<usize> {
        (0..self.channels.len()).find(|&c| self.channel_label(c) == label)
    }

    pub fn device_count(&self) -> usize {
        self.nodes.iter().map(|n| n.device + 1).max().unwrap_or(1)
    }

    pub fn vectorization(&self) -> usize {
        self.program.vectorization
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph dataflow {\n  rankdir=TB;\n");
        for n in &self.nodes {
            let shape = match n.kind {
                NodeKind::StencilUnit { .. } => "box",
                _ => "ellipse",
            };
            let _ = writeln!(
                s,
                "  \"{}\" [label=\"{}\\n{} @dev{}\", shape={}];",
                n.id,
                n.id,
                n.kind.label(),
                n.device,
                shape
            );
        }
        for c in &self.channels {
            let style = if c.remote.is_some() { ", style=dashed" } else { "" };
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [label=\"{} [{}]\"{}];",
                self.nodes[c.producer].id, self.nodes[c.consumer].id, c.field, c.depth, style
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Deterministic topological order of graph nodes; ties are broken by
/// node id.
pub fn topological_order(graph: &DataflowGraph) -> Vec<usize> {
    let n = graph.nodes.len();
    let mut indegree = vec![0usize; n];
    for c in &graph.channels {
        indegree[c.consumer] += 1;
    }
    let mut ready: BTreeSet<(&str, usize)> =
        (0..n).filter(|&v| indegree[v] == 0).map(|v| (graph.nodes[v].id.as_str(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = ready.pop_first() {
        order.push(v);
        for c in graph.channels.iter().filter(|c| c.producer == v) {
            indegree[c.consumer] -= 1;
            if indegree[c.consumer] == 0 {
                ready.insert((graph.nodes[c.consumer].id.as_str(), c.consumer));
            }
        }
    }
    assert_eq!(order.len(), n, "dataflow graph must be acyclic");
    order
}
