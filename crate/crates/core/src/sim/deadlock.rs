//! Wait-for analysis of a stalled simulation.

use serde::Serialize;

use crate::graph::DataflowGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WaitKind {
    /// Waiting for data on an empty channel.
    Empty,
    /// Waiting for space on a full channel.
    Full,
}

/// One blocking condition of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wait {
    pub channel: usize,
    pub kind: WaitKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockedOn {
    pub channel: String,
    pub condition: WaitKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockedNode {
    pub node: String,
    pub waits: Vec<BlockedOn>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DeadlockWitness {
    /// Cycle in which no node could move.
    pub cycle: u64,
    pub blocked: Vec<BlockedNode>,
    /// Node ids around one circular wait, first node repeated at the end.
    pub wait_cycle: Vec<String>,
}

impl DeadlockWitness {
    pub(crate) fn without_cycle(graph: &DataflowGraph, waits: &[Vec<Wait>], cycle: u64) -> Self {
        DeadlockWitness { cycle, blocked: blocked_nodes(graph, waits), wait_cycle: Vec::new() }
    }
}

fn blocked_nodes(graph: &DataflowGraph, waits: &[Vec<Wait>]) -> Vec<BlockedNode> {
    waits
        .iter()
        .enumerate()
        .filter(|(_, w)| !w.is_empty())
        .map(|(v, w)| BlockedNode {
            node: graph.nodes[v].id.clone(),
            waits: w.iter().map(|w| BlockedOn { channel: graph.channel_label(w.channel), condition: w.kind }).collect(),
        })
        .collect()
}

/// Looks for a circular wait: a node waiting on an empty channel waits for
/// its producer, a node waiting on a full channel waits for its consumer.
/// `waits[v]` lists the blocking conditions of node `v`.
pub fn detect_deadlock(graph: &DataflowGraph, waits: &[Vec<Wait>], cycle: u64) -> Option<DeadlockWitness> {
    let succ = |v: usize| -> Vec<usize> {
        waits[v]
            .iter()
            .map(|w| {
                let ch = &graph.channels[w.channel];
                match w.kind {
                    WaitKind::Empty => ch.producer,
                    WaitKind::Full => ch.consumer,
                }
            })
            .collect()
    };
    // 0 unvisited, 1 on the current path, 2 finished
    let mut color = vec![0u8; waits.len()];
    for start in 0..waits.len() {
        if color[start] != 0 || waits[start].is_empty() {
            continue;
        }
        let mut path = vec![start];
        let mut stack = vec![(start, succ(start), 0usize)];
        color[start] = 1;
        while let Some((_, next, i)) = stack.last_mut() {
            if *i == next.len() {
                let (v, _, _) = stack.pop().unwrap();
                color[v] = 2;
                path.pop();
                continue;
            }
            let to = next[*i];
            *i += 1;
            match color[to] {
                1 => {
                    let at = path.iter().position(|&p| p == to).unwrap();
                    let mut ids: Vec<String> = path[at..].iter().map(|&p| graph.nodes[p].id.clone()).collect();
                    ids.push(graph.nodes[to].id.clone());
                    return Some(DeadlockWitness { cycle, blocked: blocked_nodes(graph, waits), wait_cycle: ids });
                }
                0 => {
                    color[to] = 1;
                    path.push(to);
                    stack.push((to, succ(to), 0));
                }
                _ => {}
            }
        }
    }
    None
}
