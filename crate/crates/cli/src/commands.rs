use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use stencilpipe_core::array::{load_inputs, FieldArray};
use stencilpipe_core::buffers::{analyze_graph, apply_vectorization, BufferReport, LatencyConfig};
use stencilpipe_core::frontend::{parse_devices, parse_program, serialize_program, validate_program};
use stencilpipe_core::graph::{build_graph, DataflowGraph};
use stencilpipe_core::oracle::{compare, interpret, CompareMode, CompareReport};
use stencilpipe_core::perf::{count_program, predict_cycles, program_roofline, roofline, CyclePrediction};
use stencilpipe_core::program::{DeviceSpec, StencilProgram};
use stencilpipe_core::sim::{simulate, Outcome, SimOptions, SimulationResult};
use stencilpipe_core::transform::{find_fusion_candidates, fuse_all, partition, DevicePlan};

use crate::args::{Command, Common, Format, Predict, Roofline, Run, Simulate};
use crate::error::CliError;
use crate::text;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Analyze(c) => analyze(&c),
        Command::Simulate(s) => run_pipeline(&s, false, false),
        Command::Reference(c) => reference(&c),
        Command::Verify(s) => run_pipeline(&s, true, false),
        Command::Run(Run { sim, verify }) => run_pipeline(&sim, verify, true),
        Command::Fuse(c) => fuse(&c),
        Command::Partition(c) => partition_cmd(&c),
        Command::Predict(p) => predict(&p),
        Command::Roofline(r) => roofline_cmd(&r),
    }
}

/// Program after every requested transformation, with analyzed depths.
struct Prepared {
    /// The program as written (vectorization applied), before fusion.
    source: StencilProgram,
    graph: DataflowGraph,
    report: BufferReport,
    plan: Option<DevicePlan>,
    base_dir: PathBuf,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn load_program(path: &Path) -> Result<StencilProgram, CliError> {
    let text = read(path)?;
    parse_program(&text)
        .and_then(validate_program)
        .map_err(|source| CliError::Program { path: path.to_path_buf(), source: Box::new(source) })
}

fn devices(c: &Common, program: &StencilProgram) -> Result<Option<DeviceSpec>, CliError> {
    match &c.devices {
        Some(path) => {
            let text = read(path)?;
            parse_devices(&text)
                .map(Some)
                .map_err(|source| CliError::Program { path: path.clone(), source: Box::new(source) })
        }
        None => Ok(program.devices.clone()),
    }
}

fn latencies(c: &Common) -> Result<LatencyConfig, CliError> {
    match &c.latencies {
        Some(path) => {
            LatencyConfig::from_json(&read(path)?).map_err(|source| CliError::Latencies { path: path.clone(), source })
        }
        None => Ok(LatencyConfig::default()),
    }
}

fn force_depths(graph: &mut DataflowGraph, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (edge, depth) =
            o.rsplit_once('=').ok_or_else(|| CliError::Usage(format!("--force-depth expects EDGE=N, got '{o}'")))?;
        let depth: usize =
            depth.trim().parse().map_err(|_| CliError::Usage(format!("--force-depth: '{depth}' is not a depth")))?;
        let edge = edge.trim().replace('→', "->");
        let c = graph.channel_by_label(&edge).ok_or_else(|| {
            let known: Vec<String> = (0..graph.channels.len()).map(|c| graph.channel_label(c)).collect();
            CliError::Usage(format!("no channel '{edge}' (channels: {})", known.join(", ")))
        })?;
        graph.channels[c].depth = depth;
    }
    Ok(())
}

fn prepare(c: &Common) -> Result<Prepared, CliError> {
    let mut program = load_program(&c.program)?;
    if let Some(w) = c.vectorize {
        program = apply_vectorization(program, w)?;
    }
    let source = program.clone();
    let mut graph = build_graph(&program);
    if c.fuse {
        graph = fuse_all(&graph);
    }
    let mut plan = None;
    if let Some(spec) = devices(c, &program)? {
        let (g, p) = partition(&graph, &spec.placement, &spec.remote)?;
        graph = g;
        plan = Some(p);
    }
    let report = analyze_graph(&mut graph, &latencies(c)?);
    force_depths(&mut graph, &c.force_depth)?;
    let base_dir = c.program.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok(Prepared { source, graph, report, plan, base_dir })
}

fn out_dir(c: &Common) -> Result<Option<PathBuf>, CliError> {
    if let Some(dir) = &c.out {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
    }
    Ok(c.out.clone())
}

fn emit_dot(c: &Common, graph: &DataflowGraph) -> Result<(), CliError> {
    if c.emit_dot {
        let dir = out_dir(c)?.unwrap_or_else(|| PathBuf::from("."));
        write(&dir.join("graph.dot"), graph.to_dot())?;
    }
    Ok(())
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("report serializes"));
}

fn summary(arrays: &[FieldArray]) -> Value {
    let outputs: Vec<Value> = arrays
        .iter()
        .map(|a| {
            json!({
                "name": a.name,
                "dtype": a.dtype.name(),
                "shape": a.shape,
                "valid_cells": a.valid_count(),
                "invalid_cells": a.len() - a.valid_count(),
                "values": format!("{}.bin", a.name),
                "mask": format!("{}.mask.bin", a.name),
            })
        })
        .collect();
    json!({ "outputs": outputs })
}

fn write_arrays(dir: &Path, arrays: &[FieldArray]) -> Result<(), CliError> {
    for a in arrays {
        a.write_to(dir)?;
    }
    write(&dir.join("summary.json"), pretty(&summary(arrays)))
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn analysis_json(p: &Prepared) -> Value {
    let mut v = serde_json::to_value(&p.report).expect("report serializes");
    if let Some(plan) = &p.plan {
        v["device_plan"] = serde_json::to_value(plan).expect("plan serializes");
    }
    v
}

fn analyze(c: &Common) -> Result<(), CliError> {
    let p = prepare(c)?;
    emit_dot(c, &p.graph)?;
    if let Some(dir) = out_dir(c)? {
        write(&dir.join("analysis.json"), pretty(&analysis_json(&p)))?;
    }
    match c.format {
        Format::Json => print_json(&analysis_json(&p)),
        Format::Text => print!("{}", text::analysis(&p.graph, &p.report)),
    }
    Ok(())
}

fn reference(c: &Common) -> Result<(), CliError> {
    let p = prepare(c)?;
    let inputs = load_inputs(&p.graph.program, &p.base_dir, c.seed)?;
    let outputs = interpret(&p.graph.program, &inputs)?;
    if let Some(dir) = out_dir(c)? {
        write_arrays(&dir, &outputs)?;
    }
    match c.format {
        Format::Json => print_json(&summary(&outputs)),
        Format::Text => print!("{}", text::arrays(&outputs)),
    }
    Ok(())
}

fn default_limit(prediction: &CyclePrediction) -> u64 {
    prediction.cycles.saturating_mul(4).saturating_add(10_000)
}

fn simulation_json(result: &SimulationResult, prediction: &CyclePrediction) -> Value {
    let mut v = serde_json::to_value(result).expect("result serializes");
    v["predicted"] = serde_json::to_value(prediction).expect("prediction serializes");
    v
}

/// `simulate`, `verify` and `run` share this: simulate, optionally compare
/// with the reference interpreter, report, then map the outcome to an
/// exit status.
fn run_pipeline(s: &Simulate, verify: bool, full: bool) -> Result<(), CliError> {
    let c = &s.common;
    let p = prepare(c)?;
    emit_dot(c, &p.graph)?;
    let prediction = predict_cycles(&p.graph, &p.report, None);
    let inputs = load_inputs(&p.graph.program, &p.base_dir, c.seed)?;
    let options =
        SimOptions { limit: s.limit.unwrap_or_else(|| default_limit(&prediction)), trace: s.dump_trace.is_some() };
    let result = simulate(&p.graph, &p.report, &inputs, &options)?;
    if let (Some(path), Some(csv)) = (&s.dump_trace, result.trace_csv(&p.graph)) {
        write(path, csv)?;
    }

    let mut comparisons: Vec<CompareReport> = Vec::new();
    if verify && result.completed() {
        let mode = match s.tolerance {
            Some(epsilon) => CompareMode::Relative { epsilon },
            None => CompareMode::BitExact,
        };
        let expected = interpret(&p.source, &inputs)?;
        for (e, a) in expected.iter().zip(&result.outputs) {
            comparisons.push(compare(e, a, mode)?);
        }
    }
    let passed = comparisons.iter().all(|r| r.passed);

    let sim_json = simulation_json(&result, &prediction);
    let mut report = json!({ "simulation": sim_json });
    if verify {
        report["verification"] = json!({ "passed": passed && result.completed(), "fields": comparisons });
    }
    if full {
        report["prediction"] = serde_json::to_value(&prediction).expect("prediction serializes");
    }
    if let Some(dir) = out_dir(c)? {
        if result.completed() {
            write_arrays(&dir, &result.outputs)?;
        }
        write(&dir.join("simulation.json"), pretty(&sim_json))?;
        if full {
            write(&dir.join("analysis.json"), pretty(&analysis_json(&p)))?;
            write(&dir.join("prediction.json"), pretty(&report["prediction"]))?;
        }
        if verify {
            write(&dir.join("verification.json"), pretty(&report["verification"]))?;
        }
    }
    match c.format {
        Format::Json => print_json(&report),
        Format::Text => print!("{}", text::simulation(&result, &prediction, verify.then_some(&comparisons[..]))),
    }

    match &result.outcome {
        Outcome::Completed if passed => Ok(()),
        Outcome::Completed => Err(CliError::Mismatch(
            comparisons.iter().filter(|r| !r.passed).map(|r| r.field.clone()).collect::<Vec<_>>().join(", "),
        )),
        Outcome::Deadlock { witness } => Err(CliError::Deadlock(if witness.wait_cycle.is_empty() {
            format!("no progress in cycle {}", witness.cycle)
        } else {
            format!("circular wait {} in cycle {}", witness.wait_cycle.join(" -> "), witness.cycle)
        })),
        Outcome::LimitExceeded => Err(CliError::LimitExceeded(options.limit)),
    }
}

fn fuse(c: &Common) -> Result<(), CliError> {
    let mut program = load_program(&c.program)?;
    if let Some(w) = c.vectorize {
        program = apply_vectorization(program, w)?;
    }
    let graph = build_graph(&program);
    let candidates = find_fusion_candidates(&graph);
    let fused = fuse_all(&graph);
    emit_dot(c, &fused)?;
    let text_program = serialize_program(&fused.program);
    if let Some(dir) = out_dir(c)? {
        write(&dir.join("fused.json"), text_program.clone() + "\n")?;
    }
    match c.format {
        Format::Json => println!("{text_program}"),
        Format::Text => print!("{}", text::fusion(&candidates, &fused.program)),
    }
    Ok(())
}

fn partition_cmd(c: &Common) -> Result<(), CliError> {
    let p = prepare(c)?;
    let Some(plan) = &p.plan else {
        return Err(CliError::Usage(
            "no device placement: pass --devices or add a 'devices' key to the program".into(),
        ));
    };
    emit_dot(c, &p.graph)?;
    let v = serde_json::to_value(plan).expect("plan serializes");
    if let Some(dir) = out_dir(c)? {
        write(&dir.join("devices.json"), pretty(&v))?;
    }
    match c.format {
        Format::Json => print_json(&v),
        Format::Text => print!("{}", text::plan(plan)),
    }
    Ok(())
}

fn predict(args: &Predict) -> Result<(), CliError> {
    let p = prepare(&args.common)?;
    let prediction = predict_cycles(&p.graph, &p.report, args.frequency_mhz.map(|f| f * 1e6));
    match args.common.format {
        Format::Json => print_json(&serde_json::to_value(&prediction).expect("prediction serializes")),
        Format::Text => print!("{}", text::prediction(&prediction)),
    }
    Ok(())
}

fn roofline_cmd(r: &Roofline) -> Result<(), CliError> {
    let result = match (&r.program, r.ops, r.operands) {
        (Some(path), None, None) => {
            let program = load_program(path)?;
            let counts = count_program(&program);
            let widest = program
                .inputs
                .iter()
                .map(|i| i.spec.dtype.bytes())
                .chain(program.nodes.iter().map(|n| n.dtype.bytes()))
                .max()
                .unwrap_or(4) as u64;
            let result = program_roofline(&counts, r.bytes.unwrap_or(widest), r.bandwidth, r.rate)?;
            let mut v = serde_json::to_value(&result).expect("roofline serializes");
            v["counts"] = serde_json::to_value(&counts).expect("counts serialize");
            v
        }
        (None, Some(ops), Some(operands)) => {
            let result = roofline(ops, operands, r.bytes.unwrap_or(4), r.bandwidth, r.rate)?;
            serde_json::to_value(&result).expect("roofline serializes")
        }
        _ => return Err(CliError::Usage("roofline needs either --program or both --ops and --operands".into())),
    };
    match r.format {
        Format::Json => print_json(&result),
        Format::Text => print!("{}", text::roofline(&result)),
    }
    Ok(())
}
