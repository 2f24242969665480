//! Cycle-stepped execution of an analyzed dataflow graph over bounded FIFO
//! channels.
//!
//! Every cycle visits the nodes in topological order and lets each one take
//! at most one atomic step. A push to a local channel is visible to its
//! consumer within the same cycle, so a chain hands a vector from reader to
//! writer in one cycle and its runtime is exactly `L + N`. Remote channels
//! deliver `latency` cycles later and may be bandwidth-limited.

mod deadlock;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::array::{match_inputs, DataError, FieldArray};
use crate::buffers::BufferReport;
use crate::eval::{unflatten, Cell, CompiledStencil, EvalError, Evaluator, Operand};
use crate::graph::{topological_order, DataflowGraph, NodeKind};
use crate::oracle::broadcast_strides;

pub use crate::eval::evaluate_cell;
pub use deadlock::{detect_deadlock, BlockedNode, BlockedOn, DeadlockWitness, Wait, WaitKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("channel {0} has depth 0 and can never carry data")]
    ZeroDepth(String),
    #[error("no buffer analysis for stencil '{0}'")]
    MissingTiming(String),
}

#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Give up after this many cycles.
    pub limit: u64,
    /// Record per-cycle channel occupancy.
    pub trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { limit: 10_000_000, trace: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Deadlock { witness: DeadlockWitness },
    LimitExceeded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChannelStats {
    pub channel: String,
    /// Capacity in vectors, including in-flight slots of remote links.
    pub capacity: usize,
    pub max_occupancy: usize,
    pub pushed: usize,
    pub popped: usize,
    /// Cycles a producer could not push because the channel was full.
    pub full_stalls: u64,
    /// Cycles a consumer waited because no vector was ready.
    pub empty_stalls: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationResult {
    pub cycles: u64,
    pub outcome: Outcome,
    pub channels: Vec<ChannelStats>,
    /// Program outputs; cells never written stay invalid.
    #[serde(skip)]
    pub outputs: Vec<FieldArray>,
    /// Occupancy of every channel after each cycle.
    #[serde(skip)]
    pub trace: Option<Vec<Vec<usize>>>,
}

impl SimulationResult {
    pub fn completed(&self) -> bool {
        self.outcome == Outcome::Completed
    }

    /// CSV with one row per cycle and one column per channel.
    pub fn trace_csv(&self, graph: &DataflowGraph) -> Option<String> {
        let trace = self.trace.as_ref()?;
        let mut s = String::from("cycle");
        for c in 0..graph.channels.len() {
            let _ = write!(s, ",{}", graph.channel_label(c));
        }
        s.push('\n');
        for (cycle, row) in trace.iter().enumerate() {
            let _ = write!(s, "{cycle}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        Some(s)
    }
}

type Vector = Rc<[Cell]>;

struct Fifo {
    queue: VecDeque<(Vector, u64)>,
    capacity: usize,
    latency: u64,
    /// Elements per cycle and current credit, for bandwidth-limited links.
    bandwidth: Option<(f64, f64)>,
    width: f64,
    stats: ChannelStats,
}

impl Fifo {
    fn refill(&mut self) {
        if let Some((rate, tokens)) = &mut self.bandwidth {
            *tokens = (*tokens + *rate).min(rate.max(self.width));
        }
    }

    fn throttled(&self) -> bool {
        matches!(self.bandwidth, Some((_, tokens)) if tokens < self.width)
    }

    fn can_push(&self) -> bool {
        self.queue.len() < self.capacity && !self.throttled()
    }

    fn push(&mut self, v: Vector, now: u64) {
        self.queue.push_back((v, now + self.latency));
        if let Some((_, tokens)) = &mut self.bandwidth {
            *tokens -= self.width;
        }
        self.stats.pushed += 1;
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.queue.len());
    }

    fn ready(&self, now: u64) -> bool {
        matches!(self.queue.front(), Some((_, at)) if *at <= now)
    }

    fn pop(&mut self) -> Vector {
        self.stats.popped += 1;
        self.queue.pop_front().expect("checked ready").0
    }

    fn in_flight(&self, now: u64) -> bool {
        matches!(self.queue.front(), Some((_, at)) if *at > now)
    }
}

struct Reader<'a> {
    array: &'a FieldArray,
    strides: Vec<usize>,
    next: usize,
}

/// Received vectors of one input field, oldest first.
struct Window {
    channel: usize,
    fill_start: usize,
    min_offset: i64,
    base: usize,
    vectors: VecDeque<Vector>,
}

struct Unit {
    stencil: CompiledStencil,
    init_phase: usize,
    t: usize,
    windows: Vec<Window>,
    pipe: VecDeque<Option<Vector>>,
}

struct Writer {
    array: FieldArray,
    received: usize,
}

enum State<'a> {
    Reader(Reader<'a>),
    Unit(Box<Unit>),
    Writer(Writer),
}

struct Machine<'a> {
    graph: &'a DataflowGraph,
    shape: Vec<usize>,
    width: usize,
    iterations: usize,
    fifos: Vec<Fifo>,
    outs: Vec<Vec<usize>>,
    states: Vec<State<'a>>,
    waits: Vec<Vec<Wait>>,
}

/// Simulates `graph` on `inputs` with the depths stored in the graph and the
/// per-stencil timing from `report`.
pub fn simulate(
    graph: &DataflowGraph,
    report: &BufferReport,
    inputs: &[FieldArray],
    options: &SimOptions,
) -> Result<SimulationResult, SimError> {
    let program = &graph.program;
    let provided = match_inputs(program, inputs)?;
    let width = program.vectorization;
    let fifos = graph
        .channels
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            if ch.depth == 0 {
                return Err(SimError::ZeroDepth(graph.channel_label(c)));
            }
            let latency = ch.remote.as_ref().map_or(0, |r| r.latency);
            let capacity = ch.depth.div_ceil(width) + latency as usize;
            Ok(Fifo {
                queue: VecDeque::new(),
                capacity,
                latency,
                bandwidth: ch.remote.as_ref().and_then(|r| r.effective_bandwidth()).map(|b| (b, b.max(width as f64))),
                width: width as f64,
                stats: ChannelStats {
                    channel: graph.channel_label(c),
                    capacity,
                    max_occupancy: 0,
                    pushed: 0,
                    popped: 0,
                    full_stalls: 0,
                    empty_stalls: 0,
                },
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut states = Vec::with_capacity(graph.nodes.len());
    for (v, node) in graph.nodes.iter().enumerate() {
        states.push(match &node.kind {
            NodeKind::MemoryReader { field } => {
                let array = provided.iter().find(|a| &a.name == field).expect("matched input");
                State::Reader(Reader { array, strides: broadcast_strides(program, field), next: 0 })
            }
            NodeKind::StencilUnit { stencil } => {
                let timing = report.timing(stencil).ok_or_else(|| SimError::MissingTiming(stencil.clone()))?;
                let compiled = CompiledStencil::new(program, program.node(stencil).expect("unit has a stencil"));
                let windows = compiled
                    .fields
                    .iter()
                    .map(|f| {
                        let channel = graph
                            .incoming(v)
                            .find(|(_, c)| &c.field == f)
                            .map(|(c, _)| c)
                            .expect("every input has a channel");
                        let buffer = timing.buffers.iter().find(|b| &b.field == f);
                        Window {
                            channel,
                            fill_start: timing.fill_start.get(f).copied().unwrap_or(0),
                            min_offset: buffer.map_or(0, |b| b.min_offset),
                            base: 0,
                            vectors: VecDeque::new(),
                        }
                    })
                    .collect();
                State::Unit(Box::new(Unit {
                    stencil: compiled,
                    init_phase: timing.init_phase,
                    t: 0,
                    windows,
                    pipe: (0..timing.latency).map(|_| None).collect(),
                }))
            }
            NodeKind::MemoryWriter { field } => State::Writer(Writer {
                array: FieldArray {
                    name: field.clone(),
                    dtype: program.node(field).expect("output stencil").dtype,
                    shape: program.shape(),
                    values: vec![crate::eval::Value::sentinel(program.node(field).unwrap().dtype); program.cells()],
                    mask: vec![false; program.cells()],
                },
                received: 0,
            }),
        });
    }

    let m = Machine {
        graph,
        shape: program.shape(),
        width,
        iterations: program.iterations(),
        fifos,
        outs: (0..graph.nodes.len()).map(|v| graph.outgoing(v).map(|(c, _)| c).collect()).collect(),
        states,
        waits: vec![Vec::new(); graph.nodes.len()],
    };
    m.run(options)
}

impl Machine<'_> {
    fn done(&self) -> bool {
        self.states.iter().all(|s| match s {
            State::Writer(w) => w.received == self.iterations,
            _ => true,
        })
    }

    fn run(mut self, options: &SimOptions) -> Result<SimulationResult, SimError> {
        let order = topological_order(self.graph);
        let mut trace = options.trace.then(Vec::new);
        let mut cycle: u64 = 0;
        let mut last_output_cycle: u64 = 0;
        let outcome = loop {
            if self.done() {
                break Outcome::Completed;
            }
            if cycle >= options.limit {
                break Outcome::LimitExceeded;
            }
            for f in &mut self.fifos {
                f.refill();
            }
            let mut progress = false;
            for &v in &order {
                self.waits[v].clear();
                let (moved, wrote) = self.step(v, cycle)?;
                progress |= moved;
                if wrote {
                    last_output_cycle = cycle;
                }
            }
            if let Some(t) = trace.as_mut() {
                t.push(self.fifos.iter().map(|f| f.queue.len()).collect());
            }
            let pending = self.fifos.iter().any(|f| f.in_flight(cycle) || f.throttled());
            if !progress && !pending {
                let witness = detect_deadlock(self.graph, &self.waits, cycle)
                    .unwrap_or_else(|| DeadlockWitness::without_cycle(self.graph, &self.waits, cycle));
                cycle += 1;
                break Outcome::Deadlock { witness };
            }
            cycle += 1;
        };
        let has_writers = self.states.iter().any(|s| matches!(s, State::Writer(_)));
        let cycles = match outcome {
            // the run ends with the cycle in which the last vector was written
            Outcome::Completed if has_writers && self.iterations > 0 => last_output_cycle + 1,
            _ => cycle,
        };
        let outputs = self
            .graph
            .program
            .outputs
            .iter()
            .map(|o| {
                self.states
                    .iter()
                    .find_map(|s| match s {
                        State::Writer(w) if &w.array.name == o => Some(w.array.clone()),
                        _ => None,
                    })
                    .expect("every output has a writer")
            })
            .collect();
        Ok(SimulationResult {
            cycles,
            outcome,
            channels: self.fifos.into_iter().map(|f| f.stats).collect(),
            outputs,
            trace,
        })
    }

    /// Outputs of `v` can all take a vector; records stalls otherwise.
    fn outputs_free(&mut self, v: usize) -> bool {
        let mut free = true;
        for &c in &self.outs[v] {
            if !self.fifos[c].can_push() {
                free = false;
                if !self.fifos[c].throttled() {
                    self.fifos[c].stats.full_stalls += 1;
                }
                self.waits[v].push(Wait { channel: c, kind: WaitKind::Full });
            }
        }
        free
    }

    fn broadcast(&mut self, v: usize, vector: Vector, now: u64) {
        for i in 0..self.outs[v].len() {
            let c = self.outs[v][i];
            self.fifos[c].push(vector.clone(), now);
        }
    }

    fn empty_wait(&mut self, v: usize, c: usize) {
        self.fifos[c].stats.empty_stalls += 1;
        self.waits[v].push(Wait { channel: c, kind: WaitKind::Empty });
    }

    /// One step of node `v`; returns (made progress, popped into a writer).
    fn step(&mut self, v: usize, now: u64) -> Result<(bool, bool), SimError> {
        let w = self.width;
        match &self.states[v] {
            State::Reader(r) => {
                if r.next == self.iterations || !self.outputs_free(v) {
                    return Ok((false, false));
                }
                let State::Reader(r) = &mut self.states[v] else { unreachable!() };
                let mut pos = vec![0usize; self.shape.len()];
                let vector: Vector = (0..w)
                    .map(|e| {
                        unflatten(r.next * w + e, &self.shape, &mut pos);
                        let idx: usize = pos.iter().zip(&r.strides).map(|(p, s)| p * s).sum();
                        Cell { value: r.array.values[idx], valid: r.array.mask[idx] }
                    })
                    .collect();
                r.next += 1;
                self.broadcast(v, vector, now);
                Ok((true, false))
            }
            State::Writer(wr) => {
                if wr.received == self.iterations {
                    return Ok((false, false));
                }
                let c = self.graph.incoming(v).next().expect("writer has an input").0;
                if !self.fifos[c].ready(now) {
                    self.empty_wait(v, c);
                    return Ok((false, false));
                }
                let vector = self.fifos[c].pop();
                let State::Writer(wr) = &mut self.states[v] else { unreachable!() };
                for (e, cell) in vector.iter().enumerate() {
                    let idx = wr.received * w + e;
                    wr.array.values[idx] = cell.value;
                    wr.array.mask[idx] = cell.valid;
                }
                wr.received += 1;
                Ok((true, true))
            }
            State::Unit(_) => self.step_unit(v, now),
        }
    }

    fn step_unit(&mut self, v: usize, now: u64) -> Result<(bool, bool), SimError> {
        let n = self.iterations;
        let State::Unit(u) = &self.states[v] else { unreachable!() };
        let exiting = u.pipe.front().is_some_and(|x| x.is_some());
        let pipe_busy = u.pipe.iter().any(|x| x.is_some());
        let total = n + u.init_phase;
        let producing = u.t < total && u.t >= u.init_phase;
        let direct = u.pipe.is_empty();

        // inputs for this iteration
        let needed: Vec<usize> = if u.t < total {
            u.windows
                .iter()
                .filter(|win| u.t >= win.fill_start && u.t - win.fill_start < n)
                .map(|win| win.channel)
                .collect()
        } else {
            Vec::new()
        };
        let mut ready = u.t < total;
        // the vector leaving the latency pipe must be pushed before anything moves
        if exiting && !self.outputs_free(v) {
            return Ok((false, false));
        }
        for c in needed.iter().copied() {
            if !self.fifos[c].ready(now) {
                ready = false;
                self.empty_wait(v, c);
            }
        }
        if ready && direct && producing && !self.outputs_free(v) {
            ready = false;
        }

        let State::Unit(u) = &mut self.states[v] else { unreachable!() };
        let mut progress = false;
        if !direct {
            if let Some(Some(out)) = u.pipe.pop_front() {
                for i in 0..self.outs[v].len() {
                    let c = self.outs[v][i];
                    self.fifos[c].push(out.clone(), now);
                }
                progress = true;
            }
        }
        let mut result = None;
        if ready {
            for win in u.windows.iter_mut() {
                if u.t >= win.fill_start && u.t - win.fill_start < n {
                    win.vectors.push_back(self.fifos[win.channel].pop());
                }
            }
            if producing {
                let out = u.t - u.init_phase;
                result = Some(compute_vector(u, out, &self.shape, self.width)?);
                // drop vectors no later output can reach
                let next_low = ((out + 1) * self.width) as i64;
                for win in u.windows.iter_mut() {
                    while !win.vectors.is_empty() && ((win.base + 1) * self.width) as i64 <= next_low + win.min_offset {
                        win.vectors.pop_front();
                        win.base += 1;
                    }
                }
            }
            u.t += 1;
            progress = true;
        }
        if direct {
            if let Some(out) = result {
                self.broadcast(v, out, now);
            }
        } else {
            u.pipe.push_back(result);
            progress |= pipe_busy;
        }
        Ok((progress, false))
    }
}

fn compute_vector(u: &mut Unit, out: usize, shape: &[usize], width: usize) -> Result<Vector, EvalError> {
    let mut evaluator = Evaluator::new(&u.stencil);
    let mut pos = vec![0usize; shape.len()];
    let windows = &u.windows;
    let mut cells = Vec::with_capacity(width);
    for e in 0..width {
        let g = out * width + e;
        unflatten(g, shape, &mut pos);
        let mut fetch = |o: Operand<'_>| {
            let win = &windows[o.field];
            let idx = (g as i64 + o.stream) as usize;
            let vector = &win.vectors[idx / width - win.base];
            vector[idx % width]
        };
        cells.push(evaluator.eval(&pos, &mut fetch)?);
    }
    Ok(cells.into())
}
