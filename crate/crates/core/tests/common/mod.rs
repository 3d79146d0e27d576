//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;

use flowguard_core::actions::{
    Action, AdvancedAction, AdvancedKind, BasicAction, BasicKind, DefiAction,
};
use flowguard_core::cft::{CftNode, TransferRecord, ERC20_TRANSFER_TOPIC};
use flowguard_core::detect::FindingKind;
use flowguard_core::lift::{merge_leaves, LiftConfig};
use flowguard_core::trace::{EventRecord, TraceBundle, TxKind, TxRecord};
use flowguard_core::units::{Address, Amount, AssetId, SignedAmount};

pub fn addr(n: u64) -> Address {
    Address::from_low_u64(n)
}

pub fn tok(n: u64) -> AssetId {
    AssetId::Erc20(addr(0x1000 + n))
}

// --- random bundles ---------------------------------------------------------

struct BundleGen<'r, R> {
    rng: &'r mut R,
    seq: u64,
    internals: Vec<TxRecord>,
    events: Vec<EventRecord>,
    budget: usize,
}

/// Account pool for random bundles: small so that chains and matches occur.
/// Zero is included so that mints and burns appear.
fn any_account<R: Rng>(rng: &mut R) -> Address {
    match rng.random_range(0..10) {
        0 => Address::ZERO,
        n => addr(n),
    }
}

fn small_amount<R: Rng>(rng: &mut R) -> u64 {
    [0, 1, 2, 3, 5][rng.random_range(0..5)]
}

pub fn transfer_event(
    token: Address,
    from: Address,
    to: Address,
    amount: u64,
    seq: u64,
    parent: u64,
) -> EventRecord {
    EventRecord {
        emitter: token,
        topics: vec![ERC20_TRANSFER_TOPIC, from.to_word(), to.to_word()],
        data: Amount::from(amount).to_word().to_vec(),
        seq,
        parent_seq: parent,
    }
}

impl<R: Rng> BundleGen<'_, R> {
    fn frame(&mut self, seq: u64, depth: u32) {
        let n = if depth > 4 {
            0
        } else {
            self.rng.random_range(0..4)
        };
        for _ in 0..n {
            if self.budget == 0 {
                return;
            }
            self.budget -= 1;
            let s = self.seq;
            self.seq += 1;
            match self.rng.random_range(0..10) {
                0..=3 => {
                    let value = if self.rng.random_bool(0.3) {
                        small_amount(self.rng)
                    } else {
                        0
                    };
                    self.internals.push(TxRecord {
                        id: format!("i{s}"),
                        kind: TxKind::Internal,
                        from: addr(self.rng.random_range(1..10)),
                        to: addr(self.rng.random_range(1..10)),
                        value: Amount::from(value),
                        input: vec![],
                        depth: depth + 1,
                        seq: s,
                        parent_seq: Some(seq),
                    });
                    self.frame(s, depth + 1);
                }
                4..=7 => {
                    let token = addr(0x1000 + self.rng.random_range(0..3));
                    let (from, to) = (any_account(self.rng), any_account(self.rng));
                    let amount = small_amount(self.rng);
                    self.events
                        .push(transfer_event(token, from, to, amount, s, seq));
                }
                8 => {
                    // malformed Transfer: short data
                    let mut ev = transfer_event(addr(0x1000), addr(1), addr(2), 1, s, seq);
                    ev.data.truncate(31);
                    self.events.push(ev);
                }
                _ => self.events.push(EventRecord {
                    emitter: addr(self.rng.random_range(1..10)),
                    topics: vec![[7u8; 32]],
                    data: vec![],
                    seq: s,
                    parent_seq: seq,
                }),
            }
        }
    }
}

/// A valid bundle with random calls, Ether values and Transfer events over
/// a small address and token universe.
pub fn random_bundle<R: Rng>(rng: &mut R, id: &str) -> TraceBundle {
    let value = if rng.random_bool(0.5) {
        small_amount(rng)
    } else {
        0
    };
    let external = TxRecord {
        id: "ext".into(),
        kind: TxKind::External,
        from: addr(rng.random_range(1..10)),
        to: addr(rng.random_range(1..10)),
        value: Amount::from(value),
        input: vec![0xab],
        depth: 0,
        seq: 0,
        parent_seq: None,
    };
    let mut g = BundleGen {
        rng,
        seq: 1,
        internals: vec![],
        events: vec![],
        budget: 40,
    };
    g.frame(0, 0);
    TraceBundle {
        bundle_id: id.into(),
        block: 1,
        external,
        internals: g.internals,
        events: g.events,
    }
}

pub type TransferKey = (Address, Address, AssetId, Amount, u64);

pub fn key(t: &TransferRecord) -> TransferKey {
    (t.spender, t.recipient, t.asset, t.amount, t.seq)
}

/// Transfers read straight off the records, without building a tree.
pub fn extract_transfers(b: &TraceBundle) -> Vec<TransferKey> {
    let mut out = Vec::new();
    for tx in b.transactions() {
        if !tx.value.is_zero() {
            out.push((tx.from, tx.to, AssetId::Ether, tx.value, tx.seq));
        }
    }
    for ev in &b.events {
        if ev.topics.len() != 3 || ev.topics[0] != ERC20_TRANSFER_TOPIC || ev.data.len() != 32 {
            continue;
        }
        let from = Address::from_word(&ev.topics[1]);
        let to = Address::from_word(&ev.topics[2]);
        let amount = Amount::from_word(ev.data.as_slice().try_into().unwrap());
        if (from.is_zero() && to.is_zero()) || amount.is_zero() {
            continue;
        }
        out.push((from, to, AssetId::Erc20(ev.emitter), amount, ev.seq));
    }
    out.sort();
    out
}

pub fn tree_transfers(n: &CftNode) -> Vec<TransferKey> {
    let mut v: Vec<TransferKey> = n.transfers().into_iter().map(key).collect();
    v.sort();
    v
}

// --- reference lifting --------------------------------------------------------

/// Deliberately naive merge loop, written apart from the library so the
/// two can be compared node for node.
pub fn reference_merge_children(children: Vec<CftNode>, cfg: &LiftConfig) -> Vec<CftNode> {
    let mut new_children: Vec<CftNode> = Vec::new();
    for c in children {
        let mut child = c;
        while let Some(tail) = new_children.pop() {
            match merge_leaves(&tail, &child, cfg) {
                Some(m) => child = m,
                None => {
                    new_children.push(tail);
                    break;
                }
            }
        }
        new_children.push(child);
    }
    new_children
}

pub fn reference_merge_subtree(mut root: CftNode, cfg: &LiftConfig) -> Vec<CftNode> {
    root.children = reference_merge_children(std::mem::take(&mut root.children), cfg);
    if root.children.len() == 1 {
        return root.children;
    }
    vec![root]
}

pub fn reference_lift_leaves(mut root: CftNode, cfg: &LiftConfig) -> Vec<CftNode> {
    if root.children.is_empty() {
        return vec![root];
    }
    let mut new_children = Vec::new();
    for c in std::mem::take(&mut root.children) {
        new_children.extend(reference_lift_leaves(c, cfg));
    }
    root.children = new_children;
    reference_merge_subtree(root, cfg)
}

// --- random action sequences --------------------------------------------------

fn pick<R: Rng, T: Copy>(rng: &mut R, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn wrap(action: Action, i: u64) -> DefiAction {
    DefiAction {
        action,
        seq_span: (i, i),
        legs: vec![TransferRecord {
            spender: addr(1),
            recipient: addr(2),
            asset: tok(0),
            amount: Amount::from(1u64),
            seq: i,
        }],
    }
}

/// Random lifted sequences over tiny domains (3 accounts, 2 pools, 3
/// assets skewed towards two, 3 amounts) so that every rule fires often.
pub fn random_actions<R: Rng>(rng: &mut R, max_len: usize) -> Vec<DefiAction> {
    let accounts = [addr(1), addr(2), addr(3)];
    let pools = [addr(10), addr(11)];
    let assets = [tok(1), tok(2), tok(1), tok(2), tok(3)];
    let amounts = [Amount::from(1u64), Amount::from(2u64), Amount::from(3u64)];
    let len = rng.random_range(0..=max_len);
    let mut out: Vec<Action> = Vec::with_capacity(len);
    for _ in 0..len {
        let earlier: Vec<AdvancedAction> = out
            .iter()
            .filter_map(|a| match a {
                Action::Advanced(t) if t.kind == AdvancedKind::Trade => Some(*t),
                _ => None,
            })
            .collect();
        // a third of the time, reverse an earlier trade so pairs are common
        let action = if !earlier.is_empty() && rng.random_range(0..3) == 0 {
            let t = pick(rng, &earlier);
            Action::Advanced(AdvancedAction {
                asset_in: t.asset_out,
                asset_out: t.asset_in,
                amount_in: t.amount_out,
                amount_out: pick(rng, &amounts),
                ..t
            })
        } else if rng.random_range(0..10) < 7 {
            let op = pick(rng, &accounts);
            let kind = match rng.random_range(0..10) {
                0 => AdvancedKind::LiquidityMining,
                1 => AdvancedKind::LiquidityCancel,
                _ => AdvancedKind::Trade,
            };
            Action::Advanced(AdvancedAction {
                kind,
                operator: op,
                recipient: if rng.random_bool(0.85) {
                    op
                } else {
                    pick(rng, &accounts)
                },
                pool: pick(rng, &pools),
                asset_in: pick(rng, &assets),
                asset_out: pick(rng, &assets),
                amount_in: pick(rng, &amounts),
                amount_out: pick(rng, &amounts),
            })
        } else {
            Action::Basic(BasicAction {
                kind: BasicKind::Normal,
                spender: pick(rng, &[addr(1), addr(2), addr(3), addr(10), addr(11)]),
                recipient: pick(rng, &[addr(1), addr(2), addr(3), addr(10), addr(11)]),
                asset: pick(rng, &assets),
                amount: pick(rng, &amounts),
            })
        };
        out.push(action);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, a)| wrap(a, i as u64))
        .collect()
}

// --- brute-force detection oracle -----------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleFinding {
    pub first: usize,
    pub kind: FindingKind,
    pub witness: Vec<usize>,
    pub victim: Option<Address>,
    pub attacker: Address,
    pub pool: Address,
    pub profit_asset: AssetId,
    pub profit_amount: SignedAmount,
}

fn as_trade(a: &DefiAction) -> Option<&AdvancedAction> {
    match &a.action {
        Action::Advanced(t) if t.kind == AdvancedKind::Trade => Some(t),
        _ => None,
    }
}

fn is_reverse_pair(t1: &AdvancedAction, t2: &AdvancedAction) -> bool {
    t1.operator == t1.recipient
        && t2.operator == t2.recipient
        && t1.operator == t2.operator
        && t1.pool == t2.pool
        && t1.asset_in == t2.asset_out
        && t1.asset_out == t2.asset_in
        && t1.amount_out == t2.amount_in
}

/// Exhaustive evaluation of the detection rules with both tolerances 0.
pub fn oracle_analyze(seq: &[DefiAction]) -> Vec<OracleFinding> {
    let n = seq.len();
    let mut manip = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (Some(t1), Some(t2)) = (as_trade(&seq[i]), as_trade(&seq[j])) else {
                continue;
            };
            if !is_reverse_pair(t1, t2) {
                continue;
            }
            let mut direct_victims = HashSet::new();
            let mut indirect_victims = HashSet::new();
            for (k, mid) in seq.iter().enumerate().take(j).skip(i + 1) {
                // direct
                if t1.amount_in < t2.amount_out {
                    let victim = match &mid.action {
                        Action::Basic(b)
                            if b.spender != t1.operator
                                && b.recipient == t1.pool
                                && b.asset != t1.asset_out =>
                        {
                            Some(b.spender)
                        }
                        Action::Advanced(t3)
                            if t3.kind == AdvancedKind::Trade
                                && t3.operator != t1.operator
                                && t3.pool == t1.pool
                                && t3.asset_out == t1.asset_out =>
                        {
                            Some(t3.operator)
                        }
                        _ => None,
                    };
                    if let Some(v) = victim {
                        if direct_victims.insert(v) {
                            manip.push(OracleFinding {
                                first: i,
                                kind: FindingKind::DirectManipulation,
                                witness: vec![i, k, j],
                                victim: Some(v),
                                attacker: t1.operator,
                                pool: t1.pool,
                                profit_asset: t1.asset_in,
                                profit_amount: SignedAmount::diff(t2.amount_out, t1.amount_in),
                            });
                        }
                    }
                }
                // indirect
                if t1.amount_in == t2.amount_out {
                    let hit = match &mid.action {
                        Action::Basic(b) if b.recipient == t1.operator => {
                            Some((b.spender, b.asset, b.amount))
                        }
                        Action::Advanced(a) if a.pool != t1.pool && a.recipient == t1.operator => {
                            Some((a.pool, a.asset_out, a.amount_out))
                        }
                        _ => None,
                    };
                    if let Some((v, asset, amount)) = hit {
                        if indirect_victims.insert(v) {
                            manip.push(OracleFinding {
                                first: i,
                                kind: FindingKind::IndirectManipulation,
                                witness: vec![i, k, j],
                                victim: Some(v),
                                attacker: t1.operator,
                                pool: t1.pool,
                                profit_asset: asset,
                                profit_amount: SignedAmount::positive(amount),
                            });
                        }
                    }
                }
            }
        }
    }

    let arbs = oracle_arbitrage(seq);
    let mut out: Vec<OracleFinding> = manip
        .into_iter()
        .filter(|f| {
            let (a, b) = (f.witness[0], f.witness[2]);
            !arbs
                .iter()
                .any(|x| x.witness.contains(&a) && x.witness.contains(&b))
        })
        .collect();
    out.extend(arbs);
    out.sort_by(|a, b| {
        (a.first, a.kind, &a.witness, a.victim).cmp(&(b.first, b.kind, &b.witness, b.victim))
    });
    out
}

/// Arbitrage chains: the trade positions are split into maximal linked
/// runs; inside a run, a chain is a window `[s, e]` that returns to the
/// start asset through two or more pools. Windows are chosen leftmost
/// first, each as long as possible, never overlapping.
fn oracle_arbitrage(seq: &[DefiAction]) -> Vec<OracleFinding> {
    let trades: Vec<usize> = (0..seq.len())
        .filter(|&i| as_trade(&seq[i]).is_some())
        .collect();
    let t = |p: usize| as_trade(&seq[trades[p]]).unwrap();
    let linked =
        |p: usize| t(p).operator == t(p + 1).operator && t(p).asset_out == t(p + 1).asset_in;

    let mut runs: Vec<(usize, usize)> = Vec::new();
    for p in 0..trades.len() {
        match runs.last_mut() {
            Some(r) if r.1 + 1 == p && linked(r.1) => r.1 = p,
            _ => runs.push((p, p)),
        }
    }

    let valid = |s: usize, e: usize| {
        let pools: HashSet<Address> = (s..=e).map(|p| t(p).pool).collect();
        e > s && t(e).asset_out == t(s).asset_in && pools.len() >= 2
    };
    let mut out = Vec::new();
    for (lo, hi) in runs {
        let mut taken_until = lo; // first free position
        for s in lo..=hi {
            if s < taken_until {
                continue;
            }
            let best = (s..=hi).filter(|&e| valid(s, e)).max();
            if let Some(e) = best {
                let (first, last) = (t(s), t(e));
                out.push(OracleFinding {
                    first: trades[s],
                    kind: FindingKind::Arbitrage,
                    witness: (s..=e).map(|p| trades[p]).collect(),
                    victim: None,
                    attacker: first.operator,
                    pool: first.pool,
                    profit_asset: first.asset_in,
                    profit_amount: SignedAmount::diff(last.amount_out, first.amount_in),
                });
                taken_until = e + 1;
            }
        }
    }
    out
}

pub fn to_oracle(f: &flowguard_core::detect::Finding) -> OracleFinding {
    OracleFinding {
        first: f.witness[0],
        kind: f.kind,
        witness: f.witness.clone(),
        victim: f.victim,
        attacker: f.attacker,
        pool: f.pool,
        profit_asset: f.profit_asset,
        profit_amount: f.profit_amount,
    }
}
