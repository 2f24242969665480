//! Seeded generator of random, valid stencil programs.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use stencilpipe_core::buffers::LatencyConfig;
use stencilpipe_core::frontend::{parse_program, validate_program};
use stencilpipe_core::program::StencilProgram;

pub const LISTING: &str = include_str!("../../../../programs/listing.json");
pub const DIAMOND: &str = include_str!("../../../../programs/diamond.json");
pub const CHAIN5: &str = include_str!("../../../../programs/chain5.json");
pub const IDENTITY: &str = include_str!("../../../../programs/identity.json");

pub fn program(text: &str) -> StencilProgram {
    validate_program(parse_program(text).expect("parses")).expect("valid")
}

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub max_stencils: usize,
    pub max_extent: usize,
    pub max_offset: i64,
    /// Allow copy and constant boundaries besides shrink.
    pub mixed_boundaries: bool,
    /// Allow a lower-rank `(i, k)` input.
    pub broadcast_input: bool,
    pub integer_types: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_stencils: 10,
            max_extent: 16,
            max_offset: 2,
            mixed_boundaries: true,
            broadcast_input: true,
            integer_types: true,
        }
    }
}

const DIMS: [&str; 3] = ["i", "j", "k"];

fn index(dim: &str, off: i64) -> String {
    match off {
        0 => dim.to_string(),
        o if o > 0 => format!("{dim}+{o}"),
        o => format!("{dim}{o}"),
    }
}

fn access(rng: &mut ChaCha8Rng, field: &str, dims: &[&str], max_offset: i64) -> String {
    let idx: Vec<String> = dims.iter().map(|d| index(d, rng.gen_range(-max_offset..=max_offset))).collect();
    format!("{field}[{}]", idx.join(","))
}

/// Random program text: a DAG of up to `max_stencils` stencils over a 3-D
/// grid, with every sink listed as an output.
pub fn random_program_json(seed: u64, cfg: &GenConfig) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape: Vec<usize> = (0..3).map(|_| rng.gen_range(2..=cfg.max_extent)).collect();
    let dtype = if cfg.integer_types && rng.gen_bool(0.2) {
        *["int32", "int64"].choose(&mut rng).unwrap()
    } else {
        *["float32", "float64"].choose(&mut rng).unwrap()
    };
    let float = dtype.starts_with("float");

    // fields available for reading, with their dims
    let mut fields: Vec<(String, Vec<&str>)> = vec![("a".into(), DIMS.to_vec())];
    let mut inputs = Map::new();
    inputs.insert("a".into(), json!({"dtype": dtype, "dims": DIMS}));
    if rng.gen_bool(0.5) {
        inputs.insert("b".into(), json!({"dtype": dtype, "dims": DIMS}));
        fields.push(("b".into(), DIMS.to_vec()));
    }
    if cfg.broadcast_input && rng.gen_bool(0.4) {
        inputs.insert("c".into(), json!({"dtype": dtype, "dims": ["i", "k"]}));
        fields.push(("c".into(), vec!["i", "k"]));
    }
    let n_inputs = fields.len();

    let n = rng.gen_range(1..=cfg.max_stencils);
    let mut consumed = vec![false; n_inputs + n];
    let mut nodes = Map::new();
    for s in 0..n {
        let name = format!("s{s}");
        let terms = rng.gen_range(1..=3);
        let mut used: Vec<usize> = Vec::new();
        let mut parts: Vec<String> = Vec::new();
        for t in 0..terms {
            // first term prefers the latest field so graphs get deep
            let f =
                if t == 0 && s > 0 && rng.gen_bool(0.6) { n_inputs + s - 1 } else { rng.gen_range(0..fields.len()) };
            consumed[f] = true;
            used.push(f);
            let (fname, dims) = &fields[f];
            parts.push(access(&mut rng, fname, dims, cfg.max_offset));
        }
        if s == n - 1 {
            // keep every input in use
            for f in 0..n_inputs {
                if !consumed[f] {
                    consumed[f] = true;
                    used.push(f);
                    let (fname, dims) = &fields[f];
                    parts.push(access(&mut rng, fname, dims, cfg.max_offset));
                }
            }
        }
        let mut code = parts[0].clone();
        for p in &parts[1..] {
            let op = *["+", "-", "*"].choose(&mut rng).unwrap();
            code = format!("({code}) {op} {p}");
        }
        match rng.gen_range(0..6) {
            0 => code = format!("{code} > {} ? {} : {}", parts[0], parts[parts.len() - 1], code),
            1 if float => code = format!("max({code}, 0.5 * {})", parts[0]),
            2 if float => code = format!("abs({code}) + 1.0"),
            3 if !float => code = format!("({code}) * 3 - 1"),
            _ => {}
        }
        let boundary = if cfg.mixed_boundaries && rng.gen_bool(0.5) {
            let mut bc = Map::new();
            for &f in &used {
                let name = &fields[f].0;
                let v = if rng.gen_bool(0.5) {
                    json!({"type": "copy"})
                } else {
                    json!({"type": "constant", "value": rng.gen_range(-2..=2)})
                };
                bc.insert(name.clone(), v);
            }
            Value::Object(bc)
        } else {
            json!("shrink")
        };
        nodes.insert(name.clone(), json!({"code": code, "boundary_condition": boundary}));
        fields.push((name, DIMS.to_vec()));
    }
    let outputs: Vec<String> = (0..n).filter(|&s| !consumed[n_inputs + s]).map(|s| format!("s{s}")).collect();
    let mut data = Map::new();
    for name in inputs.keys() {
        data.insert(name.clone(), json!(format!("random({})", rng.gen_range(0..1000))));
    }
    serde_json::to_string_pretty(&json!({
        "inputs": inputs,
        "outputs": outputs,
        "shape": shape,
        "program": nodes,
        "data": data,
    }))
    .unwrap()
}

pub fn random_program(seed: u64, cfg: &GenConfig) -> StencilProgram {
    let text = random_program_json(seed, cfg);
    match parse_program(&text).and_then(validate_program) {
        Ok(p) => p,
        Err(e) => panic!("generated program is invalid: {e}\n{text}"),
    }
}

/// Latencies between 0 and 60 cycles per operation.
pub fn random_latencies(seed: u64) -> LatencyConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut m = Map::new();
    for op in ["add", "mul", "div", "sqrt", "min", "max", "compare", "select", "abs", "neg", "default"] {
        m.insert(op.into(), json!(rng.gen_range(0..=60)));
    }
    LatencyConfig::from_json(&Value::Object(m).to_string()).unwrap()
}
