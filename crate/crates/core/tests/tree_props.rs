//! Cash flow tree properties: transfer insertion, pruning and lifting.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{
    extract_transfers, random_bundle, reference_lift_leaves, reference_merge_children,
    tree_transfers,
};
use flowguard_core::actions::{Action, AdvancedKind};
use flowguard_core::cft::{build_tree, insert_transfers, prune, Cft, CftNode, Payload};
use flowguard_core::lift::{action_sequence, dump_tree, lift, parse_dump, LiftConfig};
use flowguard_core::trace::{load_bundles, TraceBundle};

fn bundle(seed: u64) -> TraceBundle {
    random_bundle(&mut ChaCha8Rng::seed_from_u64(seed), &format!("b{seed}"))
}

fn pruned(b: &TraceBundle) -> Cft {
    prune(insert_transfers(build_tree(b).unwrap()).tree)
}

fn seqs(n: &CftNode, out: &mut Vec<u64>) {
    n.walk(&mut |x| out.push(x.seq()));
}

/// Every non-root node has a transfer somewhere below it, and no event is left.
fn minimal(n: &CftNode) -> bool {
    n.children
        .iter()
        .all(|c| !matches!(c.payload, Payload::Event(_)) && !c.transfers().is_empty() && minimal(c))
}

fn reference_lift(t: &Cft, cfg: &LiftConfig) -> Cft {
    let mut root = t.root.clone();
    let kids: Vec<CftNode> = root
        .children
        .into_iter()
        .flat_map(|c| reference_lift_leaves(c, cfg))
        .collect();
    root.children = reference_merge_children(kids, cfg);
    Cft {
        root,
        bundle_id: t.bundle_id.clone(),
    }
}

proptest! {
    #[test]
    fn transfers_match_independent_extraction(seed in any::<u64>()) {
        let b = bundle(seed);
        let expected = extract_transfers(&b);
        let inserted = insert_transfers(build_tree(&b).unwrap()).tree;
        prop_assert_eq!(tree_transfers(&inserted.root), expected.clone());
        let p = prune(inserted);
        prop_assert_eq!(tree_transfers(&p.root), expected.clone());
        let l = lift(p, &LiftConfig::default());
        prop_assert_eq!(tree_transfers(&l.root), expected);
    }

    #[test]
    fn prune_is_idempotent_minimal_and_ordered(seed in any::<u64>()) {
        let p = pruned(&bundle(seed));
        prop_assert!(minimal(&p.root));
        prop_assert_eq!(prune(p.clone()), p.clone());
        let mut s = Vec::new();
        seqs(&p.root, &mut s);
        // an Ether transfer shares its transaction's seq
        prop_assert!(s.windows(2).all(|w| w[0] <= w[1]), "{:?}", s);
    }

    #[test]
    fn lift_is_idempotent_and_matches_reference(seed in any::<u64>()) {
        let cfg = LiftConfig::default();
        let p = pruned(&bundle(seed));
        let l = lift(p.clone(), &cfg);
        prop_assert_eq!(lift(l.clone(), &cfg), l.clone());
        prop_assert_eq!(reference_lift(&p, &cfg), l);
    }

    #[test]
    fn actions_follow_execution_order(seed in any::<u64>()) {
        let l = lift(pruned(&bundle(seed)), &LiftConfig::default());
        let acts = action_sequence(&l);
        for w in acts.windows(2) {
            let last = w[0].legs.iter().map(|t| t.seq).max().unwrap();
            let first = w[1].legs.iter().map(|t| t.seq).min().unwrap();
            prop_assert!(last < first || (last == first && w[0].seq_span.0 < w[1].seq_span.0));
            prop_assert!(w[0].seq_span.0 <= w[1].seq_span.0);
        }
    }

    #[test]
    fn dump_parses_back(seed in any::<u64>()) {
        let l = lift(pruned(&bundle(seed)), &LiftConfig::default());
        let text = dump_tree(&l);
        prop_assert_eq!(parse_dump(&text).unwrap(), l);
    }
}

fn fixture(name: &str) -> TraceBundle {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    load_bundles(path.as_ref()).unwrap().remove(0)
}

#[test]
fn liquidity_then_swap_tree() {
    let b = fixture("liquidity_then_swap.jsonl");
    let full = build_tree(&b).unwrap();
    assert_eq!(full.root.children.len(), 5);
    let p = pruned(&b);
    // the Ether payment comes first; getReserves and the two balanceOf
    // calls under the swap carry no transfer
    assert_eq!(p.root.children.len(), 5);
    assert!(p.root.children[0].is_transfer());
    let swap = &p.root.children[3];
    assert_eq!(swap.children.len(), 1);

    let l = lift(p, &LiftConfig::default());
    let names: Vec<&str> = l
        .root
        .children
        .iter()
        .map(|c| match &c.payload {
            Payload::Action(a) => a.short_name(),
            _ => "?",
        })
        .collect();
    assert_eq!(names, ["LM", "Tr"]);
    let Payload::Action(lm) = &l.root.children[0].payload else {
        unreachable!()
    };
    // the external transaction's Ether payment is folded into the deposit
    assert_eq!(lm.legs.len(), 3);
    assert_eq!(lm.seq_span.0, 0);
}

#[test]
fn swap_fixture_lifts_to_trade() {
    let l = lift(
        pruned(&fixture("swap_for_eth.jsonl")),
        &LiftConfig::default(),
    );
    let acts = action_sequence(&l);
    let Action::Advanced(tr) = &acts[0].action else {
        panic!("{acts:?}")
    };
    assert_eq!(tr.kind, AdvancedKind::Trade);
    assert_eq!(tr.amount_in.to_string(), "861950000");
    assert_eq!(tr.amount_out.to_string(), "500000000000000000");
    // the unwrapped Ether reaches the user as one end-to-end transfer
    assert_eq!(acts.len(), 2);
    assert_eq!(acts[1].short_name(), "T");
}
