//! Pattern matching over lifted action sequences.
//!
//! Three patterns are recognised: direct manipulation (the attacker's
//! reverse trades sandwich a victim's trade or deposit into the same pool),
//! indirect manipulation (the reverse trades sandwich an action that pays
//! the attacker from some other app), and arbitrage (a closed chain of
//! trades through several pools). Manipulation findings whose reverse pair
//! lies inside an arbitrage chain are dropped in favour of the arbitrage.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::actions::{Action, AdvancedAction, AdvancedKind, DefiAction};
use crate::units::{Address, Amount, AssetId, SignedAmount, Tolerance};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorConfig {
    /// Tolerance for `Tr1.amount_out == Tr2.amount_in`.
    pub amount_eq_rel_tol: Tolerance,
    /// Tolerance for the indirect rule's `Tr1.amount_in == Tr2.amount_out`,
    /// which has to absorb two rounds of pool fees.
    pub indirect_in_out_rel_tol: Tolerance,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            amount_eq_rel_tol: Tolerance::EXACT,
            indirect_in_out_rel_tol: Tolerance::new(1, 100).expect("1/100 is a valid tolerance"),
        }
    }
}

impl DetectorConfig {
    /// Both tolerances zero.
    pub fn exact() -> Self {
        DetectorConfig {
            amount_eq_rel_tol: Tolerance::EXACT,
            indirect_in_out_rel_tol: Tolerance::EXACT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingKind {
    DirectManipulation,
    IndirectManipulation,
    Arbitrage,
}

impl FindingKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FindingKind::DirectManipulation => "DirectManipulation",
            FindingKind::IndirectManipulation => "IndirectManipulation",
            FindingKind::Arbitrage => "Arbitrage",
        }
    }
}

impl std::fmt::Display for FindingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One clause of a detection rule and whether it held.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleClause {
    pub clause: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub bundle_id: String,
    /// Indices into the action sequence, strictly increasing.
    pub witness: Vec<usize>,
    pub attacker: Address,
    pub pool: Address,
    pub victim: Option<Address>,
    pub profit_asset: AssetId,
    pub profit_amount: SignedAmount,
    pub rule_trace: Vec<RuleClause>,
}

/// Two trades by the same account through the same pool in opposite
/// directions, the second selling back exactly what the first bought.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReverseTradePair {
    pub i: usize,
    pub j: usize,
    pub tr1: AdvancedAction,
    pub tr2: AdvancedAction,
}

fn clause(out: &mut Vec<RuleClause>, text: &str, holds: bool) -> bool {
    out.push(RuleClause {
        clause: text.to_string(),
        holds,
    });
    holds
}

fn reverse_clauses(
    tr1: &AdvancedAction,
    tr2: &AdvancedAction,
    cfg: &DetectorConfig,
) -> Vec<RuleClause> {
    let mut c = Vec::with_capacity(12);
    clause(
        &mut c,
        "Tr1.operator==Tr1.recipient",
        tr1.operator == tr1.recipient,
    );
    clause(
        &mut c,
        "Tr2.operator==Tr2.recipient",
        tr2.operator == tr2.recipient,
    );
    clause(
        &mut c,
        "Tr1.operator==Tr2.operator",
        tr1.operator == tr2.operator,
    );
    clause(&mut c, "Tr1.pool==Tr2.pool", tr1.pool == tr2.pool);
    clause(
        &mut c,
        "Tr1.asset_in==Tr2.asset_out",
        tr1.asset_in == tr2.asset_out,
    );
    clause(
        &mut c,
        "Tr1.asset_out==Tr2.asset_in",
        tr1.asset_out == tr2.asset_in,
    );
    clause(
        &mut c,
        "Tr1.amount_out==Tr2.amount_in",
        cfg.amount_eq_rel_tol
            .approx_eq(tr1.amount_out, tr2.amount_in),
    );
    c
}

/// All reverse trade pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn find_reverse_pairs(seq: &[DefiAction], cfg: &DetectorConfig) -> Vec<ReverseTradePair> {
    let trades: Vec<(usize, &AdvancedAction)> = seq
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.trade().map(|t| (i, t)))
        .collect();
    let mut out = Vec::new();
    for (x, &(i, tr1)) in trades.iter().enumerate() {
        if tr1.operator != tr1.recipient {
            continue;
        }
        for &(j, tr2) in &trades[x + 1..] {
            if reverse_clauses(tr1, tr2, cfg).iter().all(|c| c.holds) {
                out.push(ReverseTradePair {
                    i,
                    j,
                    tr1: *tr1,
                    tr2: *tr2,
                });
            }
        }
    }
    out
}

/// Victim of the direct rule's middle step, if `m` qualifies.
fn direct_middle(
    m: &DefiAction,
    tr1: &AdvancedAction,
    trace: &mut Vec<RuleClause>,
) -> Option<Address> {
    match &m.action {
        Action::Basic(ba) => {
            let ok = clause(
                trace,
                "Ba.spender!=Tr1.operator",
                ba.spender != tr1.operator,
            ) & clause(trace, "Ba.recipient==Tr1.pool", ba.recipient == tr1.pool)
                & clause(trace, "Ba.asset!=Tr1.asset_out", ba.asset != tr1.asset_out);
            ok.then_some(ba.spender)
        }
        Action::Advanced(tr3) if tr3.kind == AdvancedKind::Trade => {
            let ok = clause(
                trace,
                "Tr3.operator!=Tr1.operator",
                tr3.operator != tr1.operator,
            ) & clause(trace, "Tr3.pool==Tr1.pool", tr3.pool == tr1.pool)
                & clause(
                    trace,
                    "Tr3.asset_out==Tr1.asset_out",
                    tr3.asset_out == tr1.asset_out,
                );
            ok.then_some(tr3.operator)
        }
        Action::Advanced(_) => None,
    }
}

/// Victim, received asset and amount of the indirect rule's middle step.
fn indirect_middle(
    m: &DefiAction,
    tr1: &AdvancedAction,
    trace: &mut Vec<RuleClause>,
) -> Option<(Address, AssetId, Amount)> {
    match &m.action {
        Action::Basic(ba) => clause(
            trace,
            "Ba.recipient==Tr1.operator",
            ba.recipient == tr1.operator,
        )
        .then_some((ba.spender, ba.asset, ba.amount)),
        Action::Advanced(aa) => {
            let ok = clause(trace, "Aa.pool!=Tr1.pool", aa.pool != tr1.pool)
                & clause(
                    trace,
                    "Aa.recipient==Tr1.operator",
                    aa.recipient == tr1.operator,
                );
            ok.then_some((aa.pool, aa.asset_out, aa.amount_out))
        }
    }
}

pub fn detect_direct(seq: &[DefiAction], cfg: &DetectorConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    for p in find_reverse_pairs(seq, cfg) {
        let mut base = reverse_clauses(&p.tr1, &p.tr2, cfg);
        if !clause(
            &mut base,
            "Tr1.amount_in<Tr2.amount_out",
            p.tr1.amount_in < p.tr2.amount_out,
        ) {
            continue;
        }
        let mut seen = HashSet::new();
        for (k, m) in seq.iter().enumerate().take(p.j).skip(p.i + 1) {
            let mut trace = base.clone();
            let Some(victim) = direct_middle(m, &p.tr1, &mut trace) else {
                continue;
            };
            if !seen.insert(victim) {
                continue;
            }
            out.push(Finding {
                kind: FindingKind::DirectManipulation,
                bundle_id: String::new(),
                witness: vec![p.i, k, p.j],
                attacker: p.tr1.operator,
                pool: p.tr1.pool,
                victim: Some(victim),
                profit_asset: p.tr1.asset_in,
                profit_amount: SignedAmount::diff(p.tr2.amount_out, p.tr1.amount_in),
                rule_trace: trace,
            });
        }
    }
    out
}

pub fn detect_indirect(seq: &[DefiAction], cfg: &DetectorConfig) -> Vec<Finding> {
    let mut out = Vec::new();
    for p in find_reverse_pairs(seq, cfg) {
        let mut base = reverse_clauses(&p.tr1, &p.tr2, cfg);
        let close = cfg
            .indirect_in_out_rel_tol
            .approx_eq(p.tr1.amount_in, p.tr2.amount_out);
        if !clause(&mut base, "Tr1.amount_in~=Tr2.amount_out", close) {
            continue;
        }
        let mut seen = HashSet::new();
        for (k, m) in seq.iter().enumerate().take(p.j).skip(p.i + 1) {
            let mut trace = base.clone();
            let Some((victim, asset, amount)) = indirect_middle(m, &p.tr1, &mut trace) else {
                continue;
            };
            if !seen.insert(victim) {
                continue;
            }
            out.push(Finding {
                kind: FindingKind::IndirectManipulation,
                bundle_id: String::new(),
                witness: vec![p.i, k, p.j],
                attacker: p.tr1.operator,
                pool: p.tr1.pool,
                victim: Some(victim),
                profit_asset: asset,
                profit_amount: SignedAmount::positive(amount),
                rule_trace: trace,
            });
        }
    }
    out
}

/// Closed chains of trades. Consecutive trades (ignoring non-trade actions)
/// link when they share an operator and the first one's output asset is
/// the second one's input. Within each run of linked trades the chains are
/// picked greedily: from the leftmost unused trade, the farthest trade that
/// returns to the starting asset, requiring at least two distinct pools so
/// that a plain round trip through one pool is not an arbitrage.
pub fn detect_arbitrage(seq: &[DefiAction], _cfg: &DetectorConfig) -> Vec<Finding> {
    let trades: Vec<(usize, &AdvancedAction)> = seq
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.trade().map(|t| (i, t)))
        .collect();
    let links = |a: &AdvancedAction, b: &AdvancedAction| {
        a.operator == b.operator && a.asset_out == b.asset_in
    };

    let mut out = Vec::new();
    let mut run_start = 0;
    while run_start < trades.len() {
        let mut run_end = run_start;
        while run_end + 1 < trades.len() && links(trades[run_end].1, trades[run_end + 1].1) {
            run_end += 1;
        }
        let run = &trades[run_start..=run_end];
        let mut s = 0;
        while s < run.len() {
            let first = run[s].1;
            let close = (s + 1..run.len()).rev().find(|&e| {
                let pools: HashSet<Address> = run[s..=e].iter().map(|(_, t)| t.pool).collect();
                run[e].1.asset_out == first.asset_in && pools.len() >= 2
            });
            let Some(e) = close else {
                s += 1;
                continue;
            };
            let chain = &run[s..=e];
            let last = chain[chain.len() - 1].1;
            let mut trace = Vec::new();
            clause(&mut trace, "Tr1.asset_in==Trn.asset_out", true);
            for w in chain.windows(2) {
                clause(
                    &mut trace,
                    "Tri.asset_out==Tri+1.asset_in",
                    w[0].1.asset_out == w[1].1.asset_in,
                );
            }
            out.push(Finding {
                kind: FindingKind::Arbitrage,
                bundle_id: String::new(),
                witness: chain.iter().map(|(i, _)| *i).collect(),
                attacker: first.operator,
                pool: first.pool,
                victim: None,
                profit_asset: first.asset_in,
                profit_amount: SignedAmount::diff(last.amount_out, first.amount_in),
                rule_trace: trace,
            });
            s = e + 1;
        }
        run_start = run_end + 1;
    }
    out
}

fn sort_key(f: &Finding) -> (usize, FindingKind, Vec<usize>, Option<Address>) {
    (f.witness[0], f.kind, f.witness.clone(), f.victim)
}

/// Runs all detectors, drops manipulation findings explained by an
/// arbitrage chain and sorts by first witness index.
pub fn analyze(seq: &[DefiAction], cfg: &DetectorConfig) -> Vec<Finding> {
    let arbs = detect_arbitrage(seq, cfg);
    let explained = |f: &Finding| {
        let (i, j) = (f.witness[0], f.witness[f.witness.len() - 1]);
        arbs.iter()
            .any(|a| a.witness.contains(&i) && a.witness.contains(&j))
    };
    let mut out: Vec<Finding> = detect_direct(seq, cfg)
        .into_iter()
        .chain(detect_indirect(seq, cfg))
        .filter(|f| !explained(f))
        .collect();
    out.extend(arbs);
    out.sort_by_key(sort_key);
    out
}
