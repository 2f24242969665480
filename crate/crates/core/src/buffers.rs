//! Internal buffers, initialization phases, circuit latencies and the
//! delay buffers that keep joins from deadlocking.
//!
//! All streams carry the full iteration space in row-major order (inputs of
//! lower rank are broadcast by their reader), one W-wide vector per cycle.
//! Delays are therefore counted in cycles, and a delay difference of `d`
//! cycles on an edge needs `d * W` elements of FIFO capacity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::expr::{BinaryOp, CompareOp, Expression, Function, GuardFallback};
use crate::frontend::FrontendError;
use crate::graph::{topological_order, DataflowGraph, NodeKind};
use crate::program::{InputBoundary, StencilNode, StencilProgram};

/// Row-major flattening over `extents`, last dimension fastest.
pub fn flatten_offset(offsets: &[i64], extents: &[usize]) -> i64 {
    debug_assert_eq!(offsets.len(), extents.len());
    offsets.iter().zip(extents).fold(0i64, |acc, (&o, &e)| acc * e as i64 + o)
}

/// Offset of an access within the broadcast iteration-space stream: each
/// field offset lands on its iteration axis, the rest are zero.
pub fn stream_offset(offsets: &[i64], axes: &[usize], shape: &[usize]) -> i64 {
    let mut full = vec![0i64; shape.len()];
    for (&o, &a) in offsets.iter().zip(axes) {
        full[a] = o;
    }
    flatten_offset(&full, shape)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InternalBuffer {
    pub field: String,
    /// Elements held: distance between the extreme accesses plus W.
    pub size: usize,
    /// Position of each distinct access relative to the lowest one.
    pub taps: Vec<usize>,
    #[serde(skip)]
    pub min_offset: i64,
    #[serde(skip)]
    pub max_offset: i64,
}

/// Sizes the buffer for a set of flattened accesses to one field.
pub fn internal_buffer_size(field: &str, flat_offsets: &[i64], vector_width: usize) -> InternalBuffer {
    assert!(!flat_offsets.is_empty(), "a buffered field needs at least one access");
    let min = *flat_offsets.iter().min().unwrap();
    let max = *flat_offsets.iter().max().unwrap();
    let mut taps: Vec<usize> = flat_offsets.iter().map(|&o| (o - min) as usize).collect();
    taps.sort_unstable();
    taps.dedup();
    InternalBuffer {
        field: field.to_string(),
        size: (max - min) as usize + vector_width,
        taps,
        min_offset: min,
        max_offset: max,
    }
}

/// Per-operation pipeline latencies in cycles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub add: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mul: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub div: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sqrt: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exp: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pow: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neg: Option<u64>,
    #[serde(default = "LatencyConfig::conservative_default")]
    pub default: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig::uniform(Self::conservative_default())
    }
}

impl LatencyConfig {
    fn conservative_default() -> u64 {
        40
    }

    /// Every operation takes `cycles`.
    pub fn uniform(cycles: u64) -> Self {
        LatencyConfig {
            add: None,
            mul: None,
            div: None,
            sqrt: None,
            min: None,
            max: None,
            compare: None,
            select: None,
            exp: None,
            log: None,
            abs: None,
            pow: None,
            neg: None,
            default: cycles,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn or_default(&self, v: Option<u64>) -> u64 {
        v.unwrap_or(self.default)
    }

    pub fn binary(&self, op: BinaryOp) -> u64 {
        match op {
            BinaryOp::Add | BinaryOp::Sub => self.or_default(self.add),
            BinaryOp::Mul => self.or_default(self.mul),
            BinaryOp::Div => self.or_default(self.div),
        }
    }

    pub fn function(&self, f: Function) -> u64 {
        self.or_default(match f {
            Function::Sqrt => self.sqrt,
            Function::Exp => self.exp,
            Function::Log => self.log,
            Function::Abs => self.abs,
            Function::Min => self.min,
            Function::Max => self.max,
            Function::Pow => self.pow,
        })
    }

    pub fn compare(&self, _op: CompareOp) -> u64 {
        self.or_default(self.compare)
    }
}

/// Critical-path latency of an expression tree. Accesses and literals are
/// free; a ternary costs compare + select on top of its slowest operand.
pub fn ast_latency(e: &Expression, config: &LatencyConfig) -> u64 {
    match e {
        Expression::Literal(_) | Expression::Access(_) => 0,
        Expression::Neg(x) => config.or_default(config.neg) + ast_latency(x, config),
        Expression::Binary { op, lhs, rhs } => {
            config.binary(*op) + ast_latency(lhs, config).max(ast_latency(rhs, config))
        }
        Expression::Call { func, args } => {
            config.function(*func) + args.iter().map(|a| ast_latency(a, config)).max().unwrap_or(0)
        }
        Expression::Ternary { cond, then_branch, else_branch } => {
            let operands = [&cond.lhs, &cond.rhs, then_branch.as_ref(), else_branch.as_ref()]
                .into_iter()
                .map(|x| ast_latency(x, config))
                .max()
                .unwrap_or(0);
            config.compare(cond.op) + config.or_default(config.select) + operands
        }
        Expression::Guard(g) => {
            let fallback = match &g.fallback {
                GuardFallback::Invalid => 0,
                GuardFallback::Value(v) => ast_latency(v, config),
            };
            ast_latency(&g.body, config).max(fallback)
        }
    }
}

/// Buffering and timing of one stencil unit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StencilTiming {
    pub name: String,
    pub buffers: Vec<InternalBuffer>,
    /// Vector iterations consumed before the first output.
    pub init_phase: usize,
    /// Per input field: vector iterations after which that field starts
    /// filling.
    pub fill_start: BTreeMap<String, usize>,
    pub latency: u64,
}

impl StencilTiming {
    /// How many vectors of `field` are read ahead of the output vector.
    pub fn lead(&self, field: &str) -> usize {
        self.init_phase - self.fill_start.get(field).copied().unwrap_or(self.init_phase)
    }
}

/// Flattened stream offsets per input field, in first-use order. Fields
/// with a copy boundary also need the center each access falls back to:
/// the output cell, or the cell of the innermost enclosing guard.
pub fn stream_accesses(program: &StencilProgram, node: &StencilNode) -> Vec<(String, Vec<i64>)> {
    let shape = program.shape();
    let mut out: Vec<(String, Vec<i64>)> = Vec::new();
    for (a, guards) in node.expression.accesses_with_guards() {
        let axes = program.field_axes(&a.field).expect("validated access");
        let mut flat = vec![stream_offset(&a.offsets, &axes, &shape)];
        if matches!(node.boundary.for_input(&a.field), Some(InputBoundary::Copy)) {
            let center: Vec<i64> = match guards.last() {
                Some(g) => axes.iter().map(|&x| g[x]).collect(),
                None => vec![0; axes.len()],
            };
            flat.push(stream_offset(&center, &axes, &shape));
        }
        match out.iter_mut().find(|(f, _)| f == &a.field) {
            Some((_, offs)) => offs.extend(flat),
            None => out.push((a.field.clone(), flat)),
        }
    }
    for (_, offs) in &mut out {
        offs.sort_unstable();
        offs.dedup();
    }
    out
}

/// Initialization phase and per-field fill starts for a set of buffers.
///
/// The phase is the largest buffer in vector iterations (zero when every
/// access is at the center). A field whose accesses all lie ahead of the
/// center additionally needs its furthest access to have arrived, which can
/// exceed its buffer size.
pub fn initialization_phase(buffers: &[InternalBuffer], vector_width: usize) -> (usize, BTreeMap<String, usize>) {
    let w = vector_width as i64;
    let center_only = buffers.iter().all(|b| b.min_offset == 0 && b.max_offset == 0);
    let leads: Vec<usize> = buffers
        .iter()
        .map(|b| {
            if center_only {
                return 0;
            }
            let by_size = b.size.div_ceil(vector_width);
            let needed = (w - 1 + b.max_offset).div_euclid(w).max(0) as usize;
            by_size.max(needed)
        })
        .collect();
    let phase = leads.iter().copied().max().unwrap_or(0);
    let fill = buffers.iter().zip(&leads).map(|(b, &l)| (b.field.clone(), phase - l)).collect();
    (phase, fill)
}

pub fn stencil_timing(program: &StencilProgram, node: &StencilNode, config: &LatencyConfig) -> StencilTiming {
    let w = program.vectorization;
    let buffers: Vec<InternalBuffer> =
        stream_accesses(program, node).iter().map(|(f, offs)| internal_buffer_size(f, offs, w)).collect();
    let (init_phase, fill_start) = initialization_phase(&buffers, w);
    StencilTiming {
        name: node.name.clone(),
        buffers,
        init_phase,
        fill_start,
        latency: ast_latency(&node.expression, config),
    }
}

/// Sets the vectorization width after checking it divides the innermost
/// extent. Element semantics do not change.
pub fn apply_vectorization(mut program: StencilProgram, width: usize) -> Result<StencilProgram, FrontendError> {
    let extent = program.dimensions.last().map_or(1, |d| d.extent);
    if width == 0 || !extent.is_multiple_of(width) {
        return Err(FrontendError::Vectorization { width, extent });
    }
    program.vectorization = width;
    Ok(program)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelReport {
    pub channel: String,
    pub field: String,
    /// Worst-case cycles from the sources until this edge's data is
    /// consumed, including the consumer's read-ahead for this field.
    pub delay: u64,
    /// FIFO depth in elements.
    pub depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote_latency: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BufferReport {
    pub vectorization: usize,
    pub min_depth: usize,
    pub stencils: Vec<StencilTiming>,
    pub channels: Vec<ChannelReport>,
    /// Cycle offset of each node's first output (by node id).
    pub output_delay: BTreeMap<String, u64>,
    /// Longest source-to-sink path delay in cycles.
    pub critical_path: u64,
    pub internal_buffer_elements: usize,
    pub delay_buffer_elements: usize,
    pub fast_memory_elements: usize,
}

impl BufferReport {
    pub fn timing(&self, stencil: &str) -> Option<&StencilTiming> {
        self.stencils.iter().find(|s| s.name == stencil)
    }

    /// Writes the analyzed depths into the graph's channels.
    pub fn apply(&self, graph: &mut DataflowGraph) {
        for (c, r) in graph.channels.iter_mut().zip(&self.channels) {
            c.depth = r.depth;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Delay and depth of every channel from per-stencil timings.
///
/// Walking in topological order, an edge's delay is its producer's output
/// delay plus any remote latency plus the consumer's read-ahead on that
/// field; a node's output delay is its largest incoming delay plus its
/// circuit latency. Each edge then gets the shortfall against the largest
/// incoming delay of its consumer, so at least one edge per node stays at
/// the minimum depth. The consumer's own phase is part of every incoming
/// delay and cancels in the difference.
pub fn compute_delay_buffers(graph: &DataflowGraph, timings: &[StencilTiming]) -> (Vec<u64>, Vec<usize>, Vec<u64>) {
    let w = graph.vectorization() as u64;
    let timing: BTreeMap<&str, &StencilTiming> = timings.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut out_delay = vec![0u64; graph.nodes.len()];
    let mut delay = vec![0u64; graph.channels.len()];
    let mut depth = vec![graph.min_depth; graph.channels.len()];
    for v in topological_order(graph) {
        let incoming: Vec<usize> = graph.incoming(v).map(|(c, _)| c).collect();
        let unit = graph.nodes[v].stencil().map(|s| timing[s]);
        for &c in &incoming {
            let ch = &graph.channels[c];
            let remote = ch.remote.as_ref().map_or(0, |r| r.latency);
            // phase included on every edge, then cancelled by the subtraction below
            let own = unit.map_or(0, |t| t.init_phase as u64);
            let lead = unit.map_or(0, |t| t.lead(&ch.field) as u64);
            delay[c] = out_delay[ch.producer] + remote + own + lead - own;
        }
        let worst = incoming.iter().map(|&c| delay[c]).max().unwrap_or(0);
        for &c in &incoming {
            depth[c] = (worst - delay[c]) as usize * w as usize + graph.min_depth;
        }
        out_delay[v] = match &graph.nodes[v].kind {
            NodeKind::MemoryReader { .. } => 0,
            NodeKind::StencilUnit { .. } => worst + unit.map_or(0, |t| t.latency),
            NodeKind::MemoryWriter { .. } => worst,
        };
    }
    (delay, depth, out_delay)
}

/// Full buffer analysis of a graph.
pub fn analyze(graph: &DataflowGraph, config: &LatencyConfig) -> BufferReport {
    let program = &graph.program;
    let order = topological_order(graph);
    let stencils: Vec<StencilTiming> = order
        .iter()
        .filter_map(|&v| graph.nodes[v].stencil())
        .map(|s| stencil_timing(program, program.node(s).expect("unit has a stencil"), config))
        .collect();
    let (delay, depth, out_delay) = compute_delay_buffers(graph, &stencils);
    let channels: Vec<ChannelReport> = graph
        .channels
        .iter()
        .enumerate()
        .map(|(c, ch)| ChannelReport {
            channel: graph.channel_label(c),
            field: ch.field.clone(),
            delay: delay[c],
            depth: depth[c],
            remote_latency: ch.remote.as_ref().map(|r| r.latency),
        })
        .collect();
    let critical_path = graph
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.kind, NodeKind::MemoryWriter { .. }))
        .map(|(v, _)| out_delay[v])
        .max()
        .unwrap_or(0);
    let internal: usize = stencils.iter().flat_map(|s| &s.buffers).map(|b| b.size).sum();
    let delays: usize = depth.iter().sum();
    BufferReport {
        vectorization: program.vectorization,
        min_depth: graph.min_depth,
        stencils,
        channels,
        output_delay: graph.nodes.iter().zip(&out_delay).map(|(n, &d)| (n.id.clone(), d)).collect(),
        critical_path,
        internal_buffer_elements: internal,
        delay_buffer_elements: delays,
        fast_memory_elements: internal + delays,
    }
}

/// Analyzes the graph and stores the resulting depths in it.
pub fn analyze_graph(graph: &mut DataflowGraph, config: &LatencyConfig) -> BufferReport {
    let report = analyze(graph, config);
    report.apply(graph);
    report
}
