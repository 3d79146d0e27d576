//! Trace loading: round trips, invariant checks against mutations, and the
//! swap fixture.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::random_bundle;
use flowguard_core::cft::build_tree;
use flowguard_core::trace::{
    encode_bundles, load_bundles, parse_bundles, validate_bundle, TraceBundle, Violation,
};

fn bundle(seed: u64) -> TraceBundle {
    random_bundle(&mut ChaCha8Rng::seed_from_u64(seed), &format!("b{seed}"))
}

proptest! {
    #[test]
    fn generated_bundles_are_valid(seed in any::<u64>()) {
        let b = bundle(seed);
        prop_assert!(validate_bundle(&b).is_empty());
    }

    #[test]
    fn encode_parse_roundtrip(seeds in prop::collection::vec(any::<u64>(), 0..5)) {
        let bundles: Vec<TraceBundle> = seeds.iter().map(|&s| bundle(s)).collect();
        let bytes = encode_bundles(&bundles);
        prop_assert_eq!(parse_bundles(&bytes).unwrap(), bundles.clone());
        // encoding is canonical
        prop_assert_eq!(encode_bundles(&parse_bundles(&bytes).unwrap()), bytes);
    }

    #[test]
    fn tree_has_one_node_per_record(seed in any::<u64>()) {
        let b = bundle(seed);
        let t = build_tree(&b).unwrap();
        prop_assert_eq!(t.root.node_count(), b.record_count());
    }

    #[test]
    fn mutations_are_reported(seed in any::<u64>(), which in 0usize..4) {
        let mut b = bundle(seed);
        prop_assume!(!b.internals.is_empty());
        let victim = b.internals.len() / 2;
        let seq = b.internals[victim].seq;
        let expected = match which {
            0 => {
                b.internals[victim].depth += 1;
                Violation::DepthMismatch { seq, depth: b.internals[victim].depth, parent_depth: b.internals[victim].depth - 2 }
            }
            1 => {
                let bad = b.record_count() as u64 + 7;
                b.internals[victim].parent_seq = Some(bad);
                Violation::DanglingParent { seq, parent_seq: bad }
            }
            2 => {
                b.internals[victim].seq = 0;
                Violation::DuplicateSeq { seq: 0 }
            }
            _ => {
                b.internals[victim].parent_seq = None;
                Violation::MissingParent { seq }
            }
        };
        let report = validate_bundle(&b);
        prop_assert!(report.violations.contains(&expected), "{:?} not in {:?}", expected, report.violations);
        prop_assert!(build_tree(&b).is_err());
    }
}

#[test]
fn swap_fixture_loads() {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/swap_for_eth.jsonl"
    );
    let bundles = load_bundles(path.as_ref()).unwrap();
    assert_eq!(bundles.len(), 1);
    assert_eq!(bundles[0].internals.len(), 11);
    assert!(validate_bundle(&bundles[0]).is_empty());
}
