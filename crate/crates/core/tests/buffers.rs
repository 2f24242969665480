mod common;

use std::collections::BTreeSet;

use common::{program, random_latencies, random_program, GenConfig, DIAMOND, LISTING};
use proptest::prelude::*;
use stencilpipe_core::buffers::{analyze, compute_delay_buffers, flatten_offset, internal_buffer_size, LatencyConfig};
use stencilpipe_core::graph::{build_graph, topological_order, DataflowGraph};

/// Row-major stream index of a cell.
fn stream_index(cell: &[i64], shape: &[usize]) -> i64 {
    cell.iter().zip(shape).fold(0, |acc, (&c, &e)| acc * e as i64 + c)
}

/// Smallest window length found by trying every start and length.
fn brute_force_window(needed: &BTreeSet<i64>, stream_len: i64) -> i64 {
    for len in 1..=stream_len {
        for start in 0..=(stream_len - len) {
            if needed.iter().all(|&p| p >= start && p < start + len) {
                return len;
            }
        }
    }
    unreachable!("the whole stream holds every element")
}

/// Largest window any interior output vector needs, or `None` when no
/// vector has all of its operands in bounds.
fn sliding_window_oracle(shape: &[usize], offsets: &[Vec<i64>], w: usize) -> Option<i64> {
    let total = shape.iter().product::<usize>() as i64;
    let mut best = None;
    for v in 0..(total as usize / w) {
        let mut needed = BTreeSet::new();
        let mut interior = true;
        for lane in 0..w {
            let mut flat = v * w + lane;
            let mut cell = vec![0i64; shape.len()];
            for d in (0..shape.len()).rev() {
                cell[d] = (flat % shape[d]) as i64;
                flat /= shape[d];
            }
            for o in offsets {
                let at: Vec<i64> = cell.iter().zip(o).map(|(c, o)| c + o).collect();
                if at.iter().zip(shape).any(|(&a, &e)| a < 0 || a >= e as i64) {
                    interior = false;
                }
                needed.insert(stream_index(&at, shape));
            }
        }
        if interior {
            let wnd = brute_force_window(&needed, total);
            best = Some(best.map_or(wnd, |b: i64| b.max(wnd)));
        }
    }
    best
}

fn access_set() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<i64>>, usize)> {
    (prop::collection::vec(3usize..=8, 3), 1usize..=4, prop::sample::select(vec![1usize, 2, 4])).prop_flat_map(
        |(shape, n, w)| {
            let offs = prop::collection::vec(prop::collection::vec(-1i64..=1, 3), n);
            (Just(shape), offs, Just(w))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn buffer_size_matches_sliding_window((shape, offsets, w) in access_set()) {
        prop_assume!(shape[2] % w == 0);
        let Some(window) = sliding_window_oracle(&shape, &offsets, w) else {
            return Err(TestCaseError::reject("no interior vector"));
        };
        let flat: Vec<i64> = offsets.iter().map(|o| flatten_offset(o, &shape)).collect();
        let buffer = internal_buffer_size("f", &flat, w);
        prop_assert_eq!(buffer.size as i64, window);
    }
}

#[test]
fn two_row_buffer_is_two_rows_plus_one() {
    // a[i,j-1,k] and a[i,j+1,k] on a 32-wide innermost dimension
    let shape = [32, 32, 32];
    let flat: Vec<i64> = [[0, -1, 0], [0, 1, 0]].iter().map(|o| flatten_offset(o, &shape)).collect();
    assert_eq!(internal_buffer_size("a", &flat, 1).size, 65);
    assert_eq!(internal_buffer_size("a", &flat, 4).size, 68);
    assert_eq!(sliding_window_oracle(&[6, 6, 6], &[vec![0, -1, 0], vec![0, 1, 0]], 1), Some(2 * 6 + 1));
}

#[test]
fn outermost_neighbours_need_two_planes_plus_w() {
    for (s1, s2, w) in [(32usize, 32usize, 1usize), (8, 8, 2), (16, 4, 4)] {
        let shape = [8, s1, s2];
        let flat: Vec<i64> = [[-1, 0, 0], [1, 0, 0]].iter().map(|o| flatten_offset(o, &shape)).collect();
        assert_eq!(internal_buffer_size("a", &flat, w).size, 2 * s1 * s2 + w);
    }
}

fn reachable_from(graph: &DataflowGraph, start: usize) -> Vec<bool> {
    let mut seen = vec![false; graph.nodes.len()];
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        if !std::mem::replace(&mut seen[v], true) {
            stack.extend(graph.outgoing(v).map(|(_, c)| c.consumer));
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn some_incoming_channel_is_at_minimum(seed in any::<u64>()) {
        let graph = build_graph(&random_program(seed, &GenConfig::default()));
        let report = analyze(&graph, &random_latencies(seed));
        for v in 0..graph.nodes.len() {
            let depths: Vec<usize> = graph.incoming(v).map(|(c, _)| report.channels[c].depth).collect();
            if let Some(min) = depths.iter().min() {
                prop_assert_eq!(min - graph.min_depth, 0, "node {}", graph.nodes[v].id);
            }
        }
    }

    #[test]
    fn longer_phase_never_shrinks_unaffected_depths(seed in any::<u64>(), pick in any::<prop::sample::Index>(), extra in 1usize..50) {
        let graph = build_graph(&random_program(seed, &GenConfig::default()));
        let report = analyze(&graph, &random_latencies(seed));
        let mut timings = report.stencils.clone();
        let bumped = pick.index(timings.len());
        timings[bumped].init_phase += extra;
        let (_, depth, out_delay) = compute_delay_buffers(&graph, &timings);
        let node = graph.node_index(&timings[bumped].name).unwrap();
        let downstream = reachable_from(&graph, node);
        for (c, ch) in graph.channels.iter().enumerate() {
            if !downstream[ch.producer] {
                prop_assert!(depth[c] >= report.channels[c].depth, "{}", report.channels[c].channel);
            }
        }
        for (v, n) in graph.nodes.iter().enumerate() {
            prop_assert!(out_delay[v] >= report.output_delay[&n.id]);
        }
    }

    #[test]
    fn topological_order_respects_channels(seed in any::<u64>()) {
        let graph = build_graph(&random_program(seed, &GenConfig::default()));
        let order = topological_order(&graph);
        let mut position = vec![usize::MAX; graph.nodes.len()];
        for (p, &v) in order.iter().enumerate() {
            position[v] = p;
        }
        prop_assert!(position.iter().all(|&p| p != usize::MAX));
        for ch in &graph.channels {
            prop_assert!(position[ch.producer] < position[ch.consumer]);
        }
    }
}

#[test]
fn own_phase_cancels_in_incoming_depths() {
    // bumping only the consumer's phase (all of its fields read equally far
    // ahead) leaves the depths of its incoming channels unchanged
    let graph = build_graph(&program(DIAMOND));
    let report = analyze(&graph, &LatencyConfig::default());
    let mut timings = report.stencils.clone();
    let c = timings.iter().position(|t| t.name == "C").unwrap();
    timings[c].init_phase += 17;
    for fill in timings[c].fill_start.values_mut() {
        *fill += 17;
    }
    let (_, depth, _) = compute_delay_buffers(&graph, &timings);
    let mut before = Vec::new();
    let mut after = Vec::new();
    let node = graph.node_index("C").unwrap();
    for (ch, _) in graph.incoming(node) {
        before.push(report.channels[ch].depth);
        after.push(depth[ch]);
    }
    assert_eq!(before, after);
}

#[test]
fn listing_delay_buffer_before_the_last_stencil() {
    let graph = build_graph(&program(LISTING));
    let ch = graph.channel_by_label("b2->b4").unwrap();
    // b3's phase of 2049 vectors, plus one
    assert_eq!(analyze(&graph, &LatencyConfig::uniform(0)).channels[ch].depth, 2050);
    // b3's single addition adds its 40-cycle circuit latency
    assert_eq!(analyze(&graph, &LatencyConfig::default()).channels[ch].depth, 2090);
}
