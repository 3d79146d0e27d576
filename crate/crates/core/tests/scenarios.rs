//! Generated scenarios analysed end to end must reproduce their manifests.

use flowguard_core::amm::scenario::{emit_scenario, ExpectedFinding, ScenarioKind, ScenarioParams};
use flowguard_core::pipeline::{process_bundle, PipelineConfig};
use flowguard_core::trace::parse_bundles;

fn check(kind: ScenarioKind, params: ScenarioParams, seed: u64) {
    let s = emit_scenario(kind, &params, seed).unwrap();
    let bundles = parse_bundles(&s.trace).unwrap();
    assert_eq!(bundles.len(), s.manifest.bundles.len());
    for (b, m) in bundles.iter().zip(&s.manifest.bundles) {
        let a = process_bundle(b, &PipelineConfig::default()).unwrap();
        let got: Vec<ExpectedFinding> = a
            .findings
            .iter()
            .map(|f| ExpectedFinding {
                kind: f.kind,
                attacker: f.attacker,
                pool: f.pool,
                victim: f.victim,
                profit_asset: f.profit_asset,
                profit_amount: f.profit_amount,
            })
            .collect();
        let seq: Vec<String> = a
            .actions
            .iter()
            .map(|x| x.short_name().to_string())
            .collect();
        assert_eq!(
            got, m.expected,
            "bundle {} ({}) actions {:?}",
            m.bundle_id, m.scenario, seq
        );
    }
}

#[test]
fn single_scenarios_match_manifest() {
    for kind in [
        ScenarioKind::Direct,
        ScenarioKind::Indirect,
        ScenarioKind::Arbitrage,
        ScenarioKind::Benign,
    ] {
        for flash in [0, 1] {
            check(kind, ScenarioParams::new().with("flash", flash), 1);
        }
    }
    check(
        ScenarioKind::Indirect,
        ScenarioParams::new().with("target", "vault"),
        1,
    );
    check(
        ScenarioKind::Direct,
        ScenarioParams::new().with("chaff", 0),
        1,
    );
}

#[test]
fn mixed_corpus_matches_manifest() {
    for seed in 0..5 {
        check(
            ScenarioKind::Mixed,
            ScenarioParams::new().with("count", 200),
            seed,
        );
    }
}
