//! Plain-text renderings for `--format text`.

use std::fmt::Write;

use serde_json::Value;
use stencilpipe_core::array::FieldArray;
use stencilpipe_core::buffers::BufferReport;
use stencilpipe_core::graph::DataflowGraph;
use stencilpipe_core::oracle::CompareReport;
use stencilpipe_core::perf::CyclePrediction;
use stencilpipe_core::program::StencilProgram;
use stencilpipe_core::sim::{Outcome, SimulationResult};
use stencilpipe_core::transform::{DevicePlan, FusionCandidate};

pub fn analysis(graph: &DataflowGraph, report: &BufferReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "vectorization {}  min depth {}", report.vectorization, report.min_depth);
    let _ = writeln!(s, "\nstencils:");
    for t in &report.stencils {
        let _ = writeln!(s, "  {:<16} latency {:>5}  init {:>6}", t.name, t.latency, t.init_phase);
        for b in &t.buffers {
            let _ = writeln!(
                s,
                "    {:<14} buffer {:>6}  taps {:>3}  fill at {}",
                b.field,
                b.size,
                b.taps.len(),
                t.fill_start.get(&b.field).copied().unwrap_or(0)
            );
        }
    }
    let _ = writeln!(s, "\nchannels:");
    for c in &report.channels {
        let remote = c.remote_latency.map(|l| format!("  remote +{l}")).unwrap_or_default();
        let _ = writeln!(s, "  {:<28} delay {:>7}  depth {:>7}{remote}", c.channel, c.delay, c.depth);
    }
    let _ = writeln!(
        s,
        "\nnodes {}  channels {}  devices {}",
        graph.nodes.len(),
        graph.channels.len(),
        graph.device_count()
    );
    let _ = writeln!(s, "critical path {} cycles", report.critical_path);
    let _ = writeln!(
        s,
        "fast memory {} elements ({} internal, {} delay)",
        report.fast_memory_elements, report.internal_buffer_elements, report.delay_buffer_elements
    );
    s
}

pub fn arrays(arrays: &[FieldArray]) -> String {
    let mut s = String::new();
    for a in arrays {
        let _ =
            writeln!(s, "{} {} {:?}: {} of {} cells valid", a.name, a.dtype.name(), a.shape, a.valid_count(), a.len());
    }
    s
}

pub fn prediction(p: &CyclePrediction) -> String {
    let mut s = format!(
        "cycles {} = latency {} + {} iterations (latency share {:.2}%)\n",
        p.cycles,
        p.latency,
        p.iterations,
        100.0 * p.latency_fraction()
    );
    if let (Some(f), Some(t)) = (p.frequency_hz, p.seconds) {
        let _ = writeln!(s, "at {:.1} MHz: {:.6} s", f / 1e6, t);
    }
    s
}

pub fn simulation(result: &SimulationResult, predicted: &CyclePrediction, checks: Option<&[CompareReport]>) -> String {
    let mut s = String::new();
    match &result.outcome {
        Outcome::Completed => {
            let _ = writeln!(s, "completed in {} cycles (predicted {})", result.cycles, predicted.cycles);
        }
        Outcome::Deadlock { witness } => {
            let _ = writeln!(s, "deadlock in cycle {}", witness.cycle);
            if !witness.wait_cycle.is_empty() {
                let _ = writeln!(s, "  circular wait: {}", witness.wait_cycle.join(" -> "));
            }
            for b in &witness.blocked {
                let waits: Vec<String> = b.waits.iter().map(|w| format!("{} {:?}", w.channel, w.condition)).collect();
                let _ = writeln!(s, "  {} waits on {}", b.node, waits.join(", "));
            }
        }
        Outcome::LimitExceeded => {
            let _ = writeln!(s, "cycle limit reached after {} cycles", result.cycles);
        }
    }
    let _ = writeln!(s, "\nchannels:");
    for c in &result.channels {
        let _ = writeln!(
            s,
            "  {:<28} cap {:>6}  max {:>6}  pushed {:>8}  full stalls {:>6}  empty stalls {:>6}",
            c.channel, c.capacity, c.max_occupancy, c.pushed, c.full_stalls, c.empty_stalls
        );
    }
    if let Some(checks) = checks {
        let _ = writeln!(s, "\nverification:");
        for r in checks {
            let _ = writeln!(
                s,
                "  {:<16} {}  {} value / {} mask mismatches, max |diff| {:e}",
                r.field,
                if r.passed { "ok" } else { "FAILED" },
                r.value_mismatches,
                r.mask_mismatches,
                r.max_abs_diff
            );
        }
    }
    s
}

pub fn fusion(candidates: &[FusionCandidate], fused: &StencilProgram) -> String {
    let mut s = String::from("candidates:\n");
    for c in candidates {
        let _ = writeln!(s, "  {} into {} (via {})", c.producer, c.consumer, c.via);
    }
    let _ = writeln!(s, "\nfused program:");
    for n in &fused.nodes {
        let _ = writeln!(s, "  {} = {}", n.name, fused.render(&n.expression));
    }
    s
}

pub fn plan(plan: &DevicePlan) -> String {
    let mut s = format!("{} devices\n", plan.devices);
    for (stencil, d) in &plan.assignment {
        let _ = writeln!(s, "  {stencil:<16} device {d}");
    }
    for (field, devices) in &plan.replicated_inputs {
        let _ = writeln!(s, "  input {field} read on devices {devices:?}");
    }
    for r in &plan.remote_channels {
        let _ = writeln!(s, "  remote {} latency {}", r.channel, r.latency);
    }
    s
}

pub fn roofline(v: &Value) -> String {
    let mut s = String::new();
    if let Value::Object(map) = v {
        for (k, v) in map {
            if k != "counts" {
                let _ = writeln!(s, "{k}: {v}");
            }
        }
    }
    s
}
