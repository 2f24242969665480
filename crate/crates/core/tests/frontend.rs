mod common;

use std::collections::BTreeSet;

use common::{program, random_program, GenConfig, CHAIN5, DIAMOND, IDENTITY, LISTING};
use proptest::prelude::*;
use stencilpipe_core::frontend::{parse_program, serialize_program, validate_program, FrontendError};
use stencilpipe_core::graph::build_graph;

fn round_trip(p: &stencilpipe_core::program::StencilProgram) {
    let text = serialize_program(p);
    let again = validate_program(parse_program(&text).unwrap()).unwrap();
    assert_eq!(&again, p, "{text}");
    assert_eq!(serialize_program(&again), text);
}

#[test]
fn corpus_round_trips() {
    for text in [LISTING, DIAMOND, CHAIN5, IDENTITY] {
        round_trip(&program(text));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_programs_round_trip(seed in any::<u64>()) {
        round_trip(&random_program(seed, &GenConfig::default()));
    }

    #[test]
    fn channel_count_follows_dependencies(seed in any::<u64>()) {
        let p = random_program(seed, &GenConfig::default());
        let g = build_graph(&p);
        let mut pairs = BTreeSet::new();
        for n in &p.nodes {
            for f in n.inputs() {
                pairs.insert((f.to_string(), n.name.clone()));
            }
        }
        prop_assert_eq!(g.channels.len(), pairs.len() + p.outputs.len());
    }

    #[test]
    fn accesses_match_field_rank(seed in any::<u64>()) {
        let p = random_program(seed, &GenConfig::default());
        for n in &p.nodes {
            for a in n.expression.accesses() {
                prop_assert_eq!(a.offsets.len(), p.field(&a.field).unwrap().dims.len());
            }
        }
    }
}

#[test]
fn cyclic_programs_are_rejected() {
    let text = r#"{
        "inputs": {"a": {"dtype": "float32"}},
        "outputs": ["x"],
        "shape": [4, 4, 4],
        "program": {
            "x": {"code": "a[i,j,k] + y[i,j,k]", "boundary_condition": "shrink"},
            "y": {"code": "x[i-1,j,k]", "boundary_condition": "shrink"}
        }
    }"#;
    let err = validate_program(parse_program(text).unwrap()).unwrap_err();
    assert!(matches!(err, FrontendError::Cycle { .. }), "{err:?}");
}

#[test]
fn malformed_json_reports_position() {
    let err = parse_program("{\n  \"inputs\": ,\n}").unwrap_err();
    assert!(matches!(err, FrontendError::Json { line: 2, .. }), "{err:?}");
}

#[test]
fn rank_mismatch_is_rejected() {
    let text = r#"{
        "inputs": {"a": {"dtype": "float32", "dims": ["i", "k"]}},
        "outputs": ["x"],
        "shape": [4, 4, 4],
        "program": {"x": {"code": "a[i,j,k]", "boundary_condition": "shrink"}}
    }"#;
    assert!(parse_program(text).and_then(validate_program).is_err());
}
