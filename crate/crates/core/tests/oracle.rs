mod common;

use std::path::Path;

use common::{program, random_program, GenConfig, LISTING};
use proptest::prelude::*;
use stencilpipe_core::array::{load_inputs, FieldArray};
use stencilpipe_core::frontend::validate_program;
use stencilpipe_core::oracle::{compare, interpret, interpret_all, CompareMode};
use stencilpipe_core::program::{Boundary, StencilProgram};

fn bits(arrays: &[FieldArray]) -> Vec<(String, Vec<u8>, Vec<u8>)> {
    arrays.iter().map(|a| (a.name.clone(), a.to_bytes(), a.mask_bytes())).collect()
}

/// Cells of a stencil whose accesses all stay inside the domain.
fn interior(p: &StencilProgram, node: &str, index: &[usize]) -> bool {
    let n = p.node(node).unwrap();
    let shape = p.shape();
    n.expression.accesses().iter().all(|a| {
        let axes = p.field_axes(&a.field).unwrap();
        a.offsets.iter().zip(&axes).all(|(&o, &x)| {
            let t = index[x] as i64 + o;
            t >= 0 && t < shape[x] as i64
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn node_order_does_not_matter(seed in any::<u64>()) {
        let p = random_program(seed, &GenConfig::default());
        let data = load_inputs(&p, Path::new("."), Some(seed)).unwrap();
        let mut reversed = p.clone();
        reversed.nodes.reverse();
        let reversed = validate_program(reversed).unwrap();
        prop_assert_eq!(bits(&interpret(&p, &data).unwrap()), bits(&interpret(&reversed, &data).unwrap()));
    }

    /// A cell goes invalid only through shrink at that cell or an invalid
    /// operand.
    #[test]
    fn invalid_cells_have_a_cause(seed in any::<u64>()) {
        let p = random_program(seed, &GenConfig::default());
        let data = load_inputs(&p, Path::new("."), Some(seed)).unwrap();
        let all = interpret_all(&p, &data).unwrap();
        let shape = p.shape();
        for n in &p.nodes {
            let out = &all[&n.name];
            let inputs_valid = n.inputs().iter().all(|f| all.get(*f).is_none_or(|a| a.valid_count() == a.len()));
            let mut index = vec![0usize; shape.len()];
            for (cell, &valid) in out.mask.iter().enumerate() {
                if valid {
                    continue;
                }
                let mut rest = cell;
                for d in (0..shape.len()).rev() {
                    index[d] = rest % shape[d];
                    rest /= shape[d];
                }
                let shrunk = matches!(n.boundary, Boundary::Shrink) && !interior(&p, &n.name, &index);
                prop_assert!(shrunk || !inputs_valid, "{} at {:?}", n.name, index);
            }
        }
    }
}

#[test]
fn listing_mask_is_the_shrunk_border() {
    let p = program(LISTING);
    let data = load_inputs(&p, Path::new("."), Some(7)).unwrap();
    let out = &interpret(&p, &data).unwrap()[0];
    // only b3 shifts (b1 at i-1 and i+1), so one plane is lost at each i end
    for (cell, &valid) in out.mask.iter().enumerate() {
        let i = cell / (32 * 32);
        assert_eq!(valid, (1..31).contains(&i), "cell {cell}");
    }
    assert!(compare(out, out, CompareMode::BitExact).unwrap().passed);
}
