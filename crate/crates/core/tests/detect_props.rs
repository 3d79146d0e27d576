//! Detection rules against an exhaustive oracle.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{oracle_analyze, random_actions, to_oracle};
use flowguard_core::detect::{
    analyze, detect_arbitrage, detect_direct, detect_indirect, DetectorConfig, FindingKind,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn analyze_equals_oracle(seed in any::<u64>()) {
        let seq = random_actions(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        let got: Vec<_> = analyze(&seq, &DetectorConfig::exact()).iter().map(to_oracle).collect();
        prop_assert_eq!(got, oracle_analyze(&seq));
    }

    #[test]
    fn findings_are_sound(seed in any::<u64>()) {
        let seq = random_actions(&mut ChaCha8Rng::seed_from_u64(seed), 10);
        let cfg = DetectorConfig::default();
        let found = analyze(&seq, &cfg);
        for f in &found {
            prop_assert!(f.rule_trace.iter().all(|c| c.holds), "{:?}", f.rule_trace);
            prop_assert!(f.witness.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(f.witness.iter().all(|&i| i < seq.len()));
            prop_assert_eq!(f.victim.is_none(), f.kind == FindingKind::Arbitrage);
        }
        // suppression only removes manipulation findings
        let manip = detect_direct(&seq, &cfg).len() + detect_indirect(&seq, &cfg).len();
        let kept = found.iter().filter(|f| f.kind != FindingKind::Arbitrage).count();
        prop_assert!(kept <= manip);
        prop_assert_eq!(found.len() - kept, detect_arbitrage(&seq, &cfg).len());
        prop_assert_eq!(analyze(&seq, &cfg), found);
    }

    #[test]
    fn loosening_tolerances_never_loses_pairs(seed in any::<u64>()) {
        let seq = random_actions(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        let exact = flowguard_core::detect::find_reverse_pairs(&seq, &DetectorConfig::exact());
        let loose = flowguard_core::detect::find_reverse_pairs(&seq, &DetectorConfig {
            amount_eq_rel_tol: "1/2".parse().unwrap(),
            ..DetectorConfig::exact()
        });
        for p in exact {
            prop_assert!(loose.contains(&p));
        }
    }
}
