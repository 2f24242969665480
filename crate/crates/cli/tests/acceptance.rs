//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use stencilpipe_core::array::{load_inputs, FieldArray};
use stencilpipe_core::buffers::{
    analyze_graph, apply_vectorization, flatten_offset, internal_buffer_size, BufferReport, LatencyConfig,
};
use stencilpipe_core::frontend::{parse_program, validate_program};
use stencilpipe_core::graph::{build_graph, DataflowGraph};
use stencilpipe_core::oracle::{compare, interpret, CompareMode};
use stencilpipe_core::perf::predict_cycles;
use stencilpipe_core::program::{DevicePlacement, RemoteParams, StencilProgram};
use stencilpipe_core::sim::{simulate, SimOptions, SimulationResult};
use stencilpipe_core::transform::{find_fusion_candidates, fuse_all, partition};

type Check = Result<String, String>;
type CheckFn = fn() -> Check;
type Bits = Vec<(String, Vec<u8>, Vec<u8>)>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn programs(name: &str) -> String {
    root().join("programs").join(name).to_string_lossy().into_owned()
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stencilpipe")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn bits(arrays: &[FieldArray]) -> Bits {
    arrays.iter().map(|a| (a.name.clone(), a.to_bytes(), a.mask_bytes())).collect()
}

fn analyzed(p: &StencilProgram) -> (DataflowGraph, BufferReport) {
    let mut g = build_graph(p);
    let r = analyze_graph(&mut g, &LatencyConfig::default());
    (g, r)
}

fn sim(g: &DataflowGraph, r: &BufferReport, data: &[FieldArray], limit: u64) -> SimulationResult {
    simulate(g, r, data, &SimOptions { limit, trace: false }).expect("simulation runs")
}

fn inputs(p: &StencilProgram, seed: u64) -> Vec<FieldArray> {
    load_inputs(p, Path::new("."), Some(seed)).expect("inputs load")
}

/// Chain of `k` identical shrink stencils over a 16³ grid.
fn chain_program(k: usize) -> StencilProgram {
    let mut nodes = Vec::new();
    for s in 1..=k {
        let src = if s == 1 { "a".to_string() } else { format!("s{}", s - 1) };
        nodes.push(format!(
            r#""s{s}": {{"code": "0.5 * ({src}[i,j-1,k] + {src}[i,j+1,k])", "boundary_condition": "shrink"}}"#
        ));
    }
    let text = format!(
        r#"{{"inputs": {{"a": {{"dtype": "float32"}}}}, "outputs": ["s{k}"], "shape": [16, 16, 16],
            "program": {{{}}}, "data": {{"a": "random(5)"}}}}"#,
        nodes.join(", ")
    );
    validate_program(parse_program(&text).unwrap()).unwrap()
}

// 1 ---------------------------------------------------------------------

fn listing_end_to_end() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_string_lossy().into_owned();
    let start = Instant::now();
    let out = cli(&["run", "--program", &programs("listing.json"), "--seed", "7", "--verify", "--out", &out_dir]);
    let elapsed = start.elapsed();
    ensure(
        out.status.code() == Some(0),
        format!("exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)),
    )?;
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    let report = json(&out);
    ensure(report["simulation"]["outcome"]["status"] == "completed", "simulation did not complete")?;
    ensure(report["verification"]["passed"] == true, "outputs differ from the reference")?;
    ensure(report["verification"]["fields"][0]["mode"] == "bit_exact", "comparison was not bit-exact")?;

    // b3 reads b1 at i-1 and i+1 under shrink: exactly the first and last
    // i-planes are invalid
    let mask = fs::read(dir.path().join("b4.mask.bin")).unwrap();
    ensure(mask.len() == 32 * 32 * 32, "mask size")?;
    for (cell, &m) in mask.iter().enumerate() {
        let i = cell / (32 * 32);
        ensure((m == 1) == (1..31).contains(&i), format!("mask wrong at cell {cell}"))?;
    }
    Ok(format!(
        "completed in {} cycles, bit-exact, shrink border exact, {:.2}s",
        report["simulation"]["cycles"],
        elapsed.as_secs_f64()
    ))
}

// 2 ---------------------------------------------------------------------

/// Smallest stream window holding every operand of one interior output
/// vector, maximized over vectors, by exhaustive search.
fn brute_force_buffer(shape: &[usize], offsets: &[Vec<i64>], w: usize) -> Option<i64> {
    let total: usize = shape.iter().product();
    let mut best = None;
    for v in 0..total / w {
        let mut needed = BTreeSet::new();
        let mut interior = true;
        for lane in 0..w {
            let mut rest = v * w + lane;
            let mut cell = [0i64; 3];
            for d in (0..3).rev() {
                cell[d] = (rest % shape[d]) as i64;
                rest /= shape[d];
            }
            for o in offsets {
                let at: Vec<i64> = cell.iter().zip(o).map(|(c, o)| c + o).collect();
                interior &= at.iter().zip(shape).all(|(&a, &e)| a >= 0 && a < e as i64);
                needed.insert(at.iter().zip(shape).fold(0i64, |acc, (&a, &e)| acc * e as i64 + a));
            }
        }
        if !interior {
            continue;
        }
        let (lo, hi) = (*needed.first().unwrap(), *needed.last().unwrap());
        let window = (1..=total as i64)
            .find(|&len| (lo.max(hi - len + 1)..=lo).any(|s| needed.iter().all(|&p| p >= s && p < s + len)))
            .unwrap();
        best = Some(best.map_or(window, |b: i64| b.max(window)));
    }
    best
}

fn buffer_formula() -> Check {
    let two_rows: Vec<i64> = [[0, -1, 0], [0, 1, 0]].iter().map(|o| flatten_offset(o, &[32, 32, 32])).collect();
    let size = internal_buffer_size("a", &two_rows, 1).size;
    ensure(size == 65, format!("a[0,±1,0] at I=32: {size}"))?;
    for (s1, s2, w) in [(32, 32, 1), (16, 8, 2), (8, 8, 4)] {
        let planes: Vec<i64> = [[-1, 0, 0], [1, 0, 0]].iter().map(|o| flatten_offset(o, &[4, s1, s2])).collect();
        let size = internal_buffer_size("a", &planes, w).size;
        ensure(size == 2 * s1 * s2 + w, format!("outermost ±1 at {s1}x{s2}, W={w}: {size}"))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut tested = 0;
    while tested < 200 {
        let shape: Vec<usize> = (0..3).map(|_| rng.gen_range(3..=8)).collect();
        let w = [1usize, 2, 4][rng.gen_range(0..3)];
        if !shape[2].is_multiple_of(w) {
            continue;
        }
        let n = rng.gen_range(1..=4);
        let offsets: Vec<Vec<i64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1..=1)).collect()).collect();
        let Some(oracle) = brute_force_buffer(&shape, &offsets, w) else { continue };
        let flat: Vec<i64> = offsets.iter().map(|o| flatten_offset(o, &shape)).collect();
        let size = internal_buffer_size("f", &flat, w).size as i64;
        ensure(size == oracle, format!("{offsets:?} on {shape:?}, W={w}: {size} vs brute force {oracle}"))?;
        tested += 1;
    }
    Ok(format!("65 and 2*S1*S2+W cases exact; {tested} random access sets match brute force"))
}

// 3 ---------------------------------------------------------------------

fn deadlock_freedom() -> Check {
    let cfg = common::GenConfig::default();
    let mut cycles = 0u64;
    for seed in 0..100u64 {
        let p = common::random_program(seed, &cfg);
        let mut g = build_graph(&p);
        let r = analyze_graph(&mut g, &common::random_latencies(seed));
        let limit = predict_cycles(&g, &r, None).cycles * 4 + 10_000;
        let result = sim(&g, &r, &inputs(&p, seed), limit);
        ensure(result.completed(), format!("random graph {seed}: {:?}", result.outcome))?;
        cycles += result.cycles;
    }

    // starved diamond: the CLI reports the deadlock and the circular wait
    let out = cli(&["simulate", "--program", &programs("diamond.json"), "--force-depth", "A->C=1"]);
    ensure(out.status.code() == Some(3), format!("forced diamond exit {:?}", out.status.code()))?;
    let report = json(&out);
    let outcome = &report["simulation"]["outcome"];
    ensure(outcome["status"] == "deadlock", "forced diamond did not deadlock")?;
    let witness: Vec<&str> =
        outcome["witness"]["wait_cycle"].as_array().unwrap().iter().filter_map(Value::as_str).collect();
    let ring: BTreeSet<&str> = witness.iter().copied().collect();
    ensure(ring == BTreeSet::from(["A", "B", "C"]), format!("wait cycle {witness:?}"))?;

    // bisect the smallest A->C depth that still completes
    let p = validate_program(parse_program(common::DIAMOND).unwrap()).unwrap();
    let (g, r) = analyzed(&p);
    let data = inputs(&p, 0);
    let edge = g.channel_by_label("A->C").unwrap();
    let analyzed_depth = g.channels[edge].depth;
    let c = predict_cycles(&g, &r, None).cycles;
    let completes = |depth: usize| {
        let mut h = g.clone();
        h.channels[edge].depth = depth;
        sim(&h, &r, &data, 200 * c + 100_000).completed()
    };
    ensure(completes(analyzed_depth), "analyzed depth does not complete")?;
    ensure(!completes(1), "depth 1 completes")?;
    let (mut lo, mut hi) = (1, analyzed_depth);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if completes(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // the imbalance on A->C comes from B's initialization phase
    let phase = r.timing("B").unwrap().init_phase;
    let gap = analyzed_depth - hi;
    ensure(gap <= phase, format!("analyzed {analyzed_depth} vs minimal {hi}: gap {gap} > phase {phase}"))?;
    Ok(format!(
        "100 random DAGs complete ({cycles} cycles total); forced diamond deadlocks on {}; A->C analyzed {analyzed_depth}, minimal {hi}, gap {gap} <= B's phase {phase}",
        witness.join("->")
    ))
}

// 4 ---------------------------------------------------------------------

fn performance_model() -> Check {
    let mut notes = Vec::new();
    for k in [1usize, 2, 4, 8] {
        let p = chain_program(k);
        let (g, r) = analyzed(&p);
        let c = predict_cycles(&g, &r, None);
        let result = sim(&g, &r, &inputs(&p, 0), c.cycles * 4 + 10_000);
        ensure(result.completed(), format!("chain {k} did not complete"))?;
        let slack = result.cycles.abs_diff(c.cycles);
        ensure(slack <= k as u64, format!("chain {k}: simulated {} vs C {}", result.cycles, c.cycles))?;
        notes.push(format!("k={k}: {}={}", result.cycles, c.cycles));
    }

    let base = chain_program(4);
    let data = inputs(&base, 0);
    let scalar = interpret(&base, &data).unwrap();
    for w in [1usize, 2, 4] {
        let p = apply_vectorization(base.clone(), w).unwrap();
        let (g, r) = analyzed(&p);
        let c = predict_cycles(&g, &r, None);
        ensure(c.iterations == 4096 / w as u64, format!("W={w}: N={}", c.iterations))?;
        let result = sim(&g, &r, &data, c.cycles * 4 + 10_000);
        ensure(result.cycles.abs_diff(c.cycles) <= 4, format!("W={w}: simulated {} vs C {}", result.cycles, c.cycles))?;
        ensure(bits(&result.outputs) == bits(&scalar), format!("W={w}: outputs differ"))?;
    }
    Ok(format!("simulated = C on chains ({}); W=1,2,4 give N=4096,2048,1024 with bit-exact outputs", notes.join(", ")))
}

// 5 ---------------------------------------------------------------------

fn roofline() -> Check {
    let out =
        cli(&["roofline", "--ops", "130", "--operands", "9", "--bytes", "4", "--bandwidth", "58.3", "--rate", "917.1"]);
    ensure(out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())?;
    let r = json(&out);
    ensure(r["ops_per_byte"] == "65/18", format!("AI {}", r["ops_per_byte"]))?;
    let bound = r["bound_gops"].as_f64().unwrap();
    let needed = r["required_gbs"].as_f64().unwrap();
    ensure((bound - 210.5).abs() <= 0.1, format!("bound {bound}"))?;
    ensure((needed - 254.0).abs() <= 0.1, format!("required {needed}"))?;
    Ok(format!("AI = 65/18 ops/byte; {bound:.2} GOp/s at 58.3 GB/s; {needed:.2} GB/s for 917.1 GOp/s"))
}

// 6 ---------------------------------------------------------------------

fn two_stencils(producer_bc: &str, consumer_bc: &str, outputs: &str, extra: &str) -> StencilProgram {
    let text = format!(
        r#"{{"inputs": {{"a": {{"dtype": "float32"}}}}, "outputs": [{outputs}], "shape": [8, 8, 8],
            "program": {{"p": {{"code": "a[i-1,j,k] * 2", "boundary_condition": {producer_bc}}},
                         "c": {{"code": "p[i+1,j,k] + p[i,j,k]", "boundary_condition": {consumer_bc}}}{extra}}}}}"#
    );
    validate_program(parse_program(&text).unwrap()).unwrap()
}

fn fusion() -> Check {
    let p = validate_program(parse_program(common::CHAIN5).unwrap()).unwrap();
    let (g, r) = analyzed(&p);
    let mut fused = fuse_all(&g);
    ensure(fused.program.nodes.len() == 1, format!("{} stencils after fusion", fused.program.nodes.len()))?;
    let fr = analyze_graph(&mut fused, &LatencyConfig::default());
    let data = inputs(&p, 11);
    let expected = interpret(&p, &data).unwrap();
    let got = interpret(&fused.program, &data).unwrap();
    for (e, a) in expected.iter().zip(&got) {
        ensure(compare(e, a, CompareMode::Relative { epsilon: 1e-6 }).unwrap().passed, "fused outputs differ")?;
    }
    let exact = expected.iter().zip(&got).all(|(e, a)| compare(e, a, CompareMode::BitExact).unwrap().passed);
    ensure(fr.critical_path <= r.critical_path, format!("fused L {} > {}", fr.critical_path, r.critical_path))?;

    let out = cli(&["run", "--program", &programs("chain5.json"), "--fuse", "--verify"]);
    ensure(out.status.code() == Some(0), format!("--fuse --verify exit {:?}", out.status.code()))?;

    let shrink = r#""shrink""#;
    let cases = [
        ("output intermediate", two_stencils(shrink, shrink, r#""c", "p""#, "")),
        (
            "two consumers",
            two_stencils(
                shrink,
                shrink,
                r#""c", "d""#,
                r#", "d": {"code": "p[i,j,k]", "boundary_condition": "shrink"}"#,
            ),
        ),
        ("differing boundaries", two_stencils(shrink, r#"{"p": {"type": "constant", "value": 0}}"#, r#""c""#, "")),
    ];
    for (what, prog) in &cases {
        ensure(find_fusion_candidates(&build_graph(prog)).is_empty(), format!("{what}: candidate found"))?;
    }
    let control = two_stencils(shrink, shrink, r#""c""#, "");
    ensure(find_fusion_candidates(&build_graph(&control)).len() == 1, "control pair not fusable")?;
    Ok(format!(
        "5-stencil chain fuses to 1, outputs match{}; L {} -> {}; 3 rejection cases give no candidates",
        if exact { " bit-exact" } else { " within 1e-6" },
        r.critical_path,
        fr.critical_path
    ))
}

// 7 ---------------------------------------------------------------------

fn chain_cycles(k: usize, latency: u64) -> (u64, u64, Bits) {
    let p = chain_program(k);
    let assignment: BTreeMap<String, usize> = (1..=k).map(|s| (format!("s{s}"), usize::from(s > k / 2))).collect();
    let remote = RemoteParams { latency, ..RemoteParams::default() };
    let (mut g, _) = partition(&build_graph(&p), &DevicePlacement::Assignment(assignment), &remote).unwrap();
    let r = analyze_graph(&mut g, &LatencyConfig::default());
    let result = sim(&g, &r, &inputs(&p, 0), predict_cycles(&g, &r, None).cycles * 4 + 10_000);
    assert!(result.completed());
    (result.cycles, r.critical_path, bits(&result.outputs))
}

fn multi_device() -> Check {
    let p = validate_program(parse_program(common::LISTING).unwrap()).unwrap();
    let data = inputs(&p, 7);
    let (single, r1) = analyzed(&p);
    let base = sim(&single, &r1, &data, 1_000_000);

    let assignment: BTreeMap<String, usize> =
        [("b0", 0), ("b1", 0), ("b2", 1), ("b3", 1), ("b4", 1)].map(|(s, d)| (s.to_string(), d)).into();
    let remote = RemoteParams { latency: 30, ..RemoteParams::default() };
    let (mut g, plan) = partition(&build_graph(&p), &DevicePlacement::Assignment(assignment), &remote).unwrap();
    ensure(plan.replicated_inputs.get("a2") == Some(&vec![0, 1]), format!("replicated {:?}", plan.replicated_inputs))?;
    ensure(g.node_index("read:a2@1").is_some(), "no reader for a2 on device 1")?;
    let r2 = analyze_graph(&mut g, &LatencyConfig::default());
    let split = sim(&g, &r2, &data, 1_000_000);
    ensure(split.completed(), "partitioned listing did not complete")?;
    ensure(bits(&split.outputs) == bits(&base.outputs), "partitioned outputs differ")?;

    let mut deltas = Vec::new();
    let (c0, l0, out0) = chain_cycles(4, 0);
    for latency in [1u64, 25, 100] {
        let (c, l, out) = chain_cycles(4, latency);
        ensure(out == out0, "remote latency changed outputs")?;
        ensure(c - c0 == l - l0, format!("latency {latency}: cycles +{} vs analyzed +{}", c - c0, l - l0))?;
        deltas.push(format!("+{}", c - c0));
    }
    Ok(format!(
        "a2 read on devices 0 and 1; split listing bit-exact ({} vs {} cycles); chain cycles grow by {} for latency 1, 25, 100",
        split.cycles,
        base.cycles,
        deltas.join(", ")
    ))
}

// 8 ---------------------------------------------------------------------

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

fn determinism() -> Check {
    let listing = programs("listing.json");
    let devices = tempfile::NamedTempFile::new().unwrap();
    fs::write(devices.path(), r#"{"count": 2, "remote": {"latency": 10}}"#).unwrap();
    let devices = devices.path().to_string_lossy().into_owned();
    let commands: Vec<Vec<&str>> = vec![
        vec!["analyze", "--program", &listing, "--emit-dot"],
        vec!["simulate", "--program", &listing, "--seed", "3", "--devices", &devices],
        vec!["reference", "--program", &listing, "--seed", "3"],
        vec!["verify", "--program", &listing, "--seed", "3", "--vectorize", "4"],
        vec!["run", "--program", &listing, "--seed", "3", "--verify", "--fuse"],
        vec!["fuse", "--program", &listing],
        vec!["partition", "--program", &listing, "--devices", &devices],
        vec!["predict", "--program", &listing, "--frequency-mhz", "300"],
        vec!["roofline", "--program", &listing, "--bandwidth", "58.3"],
    ];
    let mut compared = 0;
    for args in &commands {
        let takes_out = args[0] != "roofline";
        let runs: Vec<(Output, BTreeMap<String, Vec<u8>>)> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let out_dir = dir.path().to_string_lossy().into_owned();
                let mut full = args.clone();
                if takes_out {
                    full.extend(["--out", out_dir.as_str()]);
                }
                let out = cli(&full);
                (out, files(dir.path()))
            })
            .collect();
        let (a, b) = (&runs[0], &runs[1]);
        ensure(a.0.status.success(), format!("{}: {}", args[0], String::from_utf8_lossy(&a.0.stderr)))?;
        ensure(a.0.stdout == b.0.stdout, format!("{}: reports differ", args[0]))?;
        ensure(a.1 == b.1, format!("{}: output files differ", args[0]))?;
        compared += a.1.len() + 1;
    }
    Ok(format!("{} commands run twice; {compared} reports and files byte-identical", commands.len()))
}

fn main() {
    let criteria: [(&str, CheckFn); 8] = [
        ("listing end to end", listing_end_to_end),
        ("internal buffer formula", buffer_formula),
        ("deadlock freedom", deadlock_freedom),
        ("performance model", performance_model),
        ("roofline", roofline),
        ("fusion", fusion),
        ("multi-device", multi_device),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {why}", n + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
