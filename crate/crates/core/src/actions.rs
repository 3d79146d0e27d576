//! DeFi action algebra: classification of single transfers into basic
//! actions and pairwise construction of liquidity mining, liquidity cancel
//! and trade actions.

use std::fmt;

use crate::cft::TransferRecord;
use crate::units::{Address, Amount, AssetId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasicKind {
    Normal,
    Minting,
    Burning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasicAction {
    pub kind: BasicKind,
    pub spender: Address,
    pub recipient: Address,
    pub asset: AssetId,
    pub amount: Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdvancedKind {
    LiquidityMining,
    LiquidityCancel,
    Trade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AdvancedAction {
    pub kind: AdvancedKind,
    pub operator: Address,
    pub recipient: Address,
    pub pool: Address,
    pub asset_in: AssetId,
    pub asset_out: AssetId,
    pub amount_in: Amount,
    pub amount_out: Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Basic(BasicAction),
    Advanced(AdvancedAction),
}

/// A lifted action together with the transfers it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefiAction {
    pub action: Action,
    /// First and last `seq` of the constituent transfers.
    pub seq_span: (u64, u64),
    /// Constituent transfers in execution order.
    pub legs: Vec<TransferRecord>,
}

impl DefiAction {
    /// Wraps a single transfer, if it classifies as a basic action.
    pub fn from_transfer(t: &TransferRecord) -> Option<DefiAction> {
        classify_transfer(t).map(|b| DefiAction {
            action: Action::Basic(b),
            seq_span: (t.seq, t.seq),
            legs: vec![t.clone()],
        })
    }

    /// Combines the legs of two actions under a new head action.
    pub fn combine(action: Action, a: &DefiAction, b: &DefiAction) -> DefiAction {
        let mut legs = Vec::with_capacity(a.legs.len() + b.legs.len());
        legs.extend_from_slice(&a.legs);
        legs.extend_from_slice(&b.legs);
        legs.sort_by_key(|l| l.seq);
        let seq_span = (legs[0].seq, legs[legs.len() - 1].seq);
        DefiAction {
            action,
            seq_span,
            legs,
        }
    }

    pub fn basic(&self) -> Option<&BasicAction> {
        match &self.action {
            Action::Basic(b) => Some(b),
            Action::Advanced(_) => None,
        }
    }

    pub fn advanced(&self) -> Option<&AdvancedAction> {
        match &self.action {
            Action::Advanced(a) => Some(a),
            Action::Basic(_) => None,
        }
    }

    pub fn trade(&self) -> Option<&AdvancedAction> {
        self.advanced().filter(|a| a.kind == AdvancedKind::Trade)
    }

    /// Who receives the action's output.
    pub fn recipient(&self) -> Address {
        match &self.action {
            Action::Basic(b) => b.recipient,
            Action::Advanced(a) => a.recipient,
        }
    }

    pub fn short_name(&self) -> &'static str {
        match &self.action {
            Action::Basic(b) => match b.kind {
                BasicKind::Normal => "T",
                BasicKind::Minting => "Tm",
                BasicKind::Burning => "Tb",
            },
            Action::Advanced(a) => match a.kind {
                AdvancedKind::LiquidityMining => "LM",
                AdvancedKind::LiquidityCancel => "LC",
                AdvancedKind::Trade => "Tr",
            },
        }
    }
}

impl fmt::Display for DefiAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.action {
            Action::Basic(b) => write!(
                f,
                "{} {} -> {} {} {}",
                self.short_name(),
                b.spender,
                b.recipient,
                b.amount,
                b.asset
            ),
            Action::Advanced(a) => write!(
                f,
                "{} op={} rcpt={} pool={} {} {} -> {} {}",
                self.short_name(),
                a.operator,
                a.recipient,
                a.pool,
                a.amount_in,
                a.asset_in,
                a.amount_out,
                a.asset_out
            ),
        }
    }
}

/// Table of the three transfer kinds. Zero-to-zero transfers and
/// self-transfers match nothing.
pub fn classify_transfer(t: &TransferRecord) -> Option<BasicAction> {
    if t.amount.is_zero() {
        return None;
    }
    let kind = match (t.spender.is_zero(), t.recipient.is_zero()) {
        (true, true) => return None,
        (true, false) => BasicKind::Minting,
        (false, true) => BasicKind::Burning,
        (false, false) if t.spender != t.recipient => BasicKind::Normal,
        (false, false) => return None,
    };
    Some(BasicAction {
        kind,
        spender: t.spender,
        recipient: t.recipient,
        asset: t.asset,
        amount: t.amount,
    })
}

fn pick(
    a: &BasicAction,
    b: &BasicAction,
    first: BasicKind,
    second: BasicKind,
) -> Option<(BasicAction, BasicAction)> {
    if a.kind == first && b.kind == second {
        Some((*a, *b))
    } else if b.kind == first && a.kind == second {
        Some((*b, *a))
    } else {
        None
    }
}

/// A deposit `T` and a mint `T_m` of a different asset, in either order.
pub fn try_liquidity_mining(a: &BasicAction, b: &BasicAction) -> Option<AdvancedAction> {
    let (t, tm) = pick(a, b, BasicKind::Normal, BasicKind::Minting)?;
    if t.asset == tm.asset {
        return None;
    }
    Some(AdvancedAction {
        kind: AdvancedKind::LiquidityMining,
        operator: t.spender,
        recipient: tm.recipient,
        pool: t.recipient,
        asset_in: t.asset,
        asset_out: tm.asset,
        amount_in: t.amount,
        amount_out: tm.amount,
    })
}

/// A burn `T_b` and a redemption `T` of a different asset, in either order.
pub fn try_liquidity_cancel(a: &BasicAction, b: &BasicAction) -> Option<AdvancedAction> {
    let (t, tb) = pick(a, b, BasicKind::Normal, BasicKind::Burning)?;
    if t.asset == tb.asset {
        return None;
    }
    Some(AdvancedAction {
        kind: AdvancedKind::LiquidityCancel,
        operator: tb.spender,
        recipient: t.recipient,
        pool: t.spender,
        asset_in: tb.asset,
        asset_out: t.asset,
        amount_in: tb.amount,
        amount_out: t.amount,
    })
}

/// Either two normal transfers pivoting on one account, or a liquidity
/// mining followed by a liquidity cancel of the minted position. `a` must
/// precede `b`.
pub fn try_trade(a: &DefiAction, b: &DefiAction) -> Option<AdvancedAction> {
    match (&a.action, &b.action) {
        (Action::Basic(t1), Action::Basic(t2)) => {
            if t1.kind != BasicKind::Normal || t2.kind != BasicKind::Normal {
                return None;
            }
            if t1.asset == t2.asset || t1.recipient != t2.spender {
                return None;
            }
            Some(AdvancedAction {
                kind: AdvancedKind::Trade,
                operator: t1.spender,
                recipient: t2.recipient,
                pool: t1.recipient,
                asset_in: t1.asset,
                asset_out: t2.asset,
                amount_in: t1.amount,
                amount_out: t2.amount,
            })
        }
        (Action::Advanced(lm), Action::Advanced(lc))
            if lm.kind == AdvancedKind::LiquidityMining
                && lc.kind == AdvancedKind::LiquidityCancel =>
        {
            if lm.recipient != lc.operator
                || lm.asset_in == lc.asset_out
                || lm.asset_out == lc.asset_in
            {
                return None;
            }
            Some(AdvancedAction {
                kind: AdvancedKind::Trade,
                operator: lm.operator,
                recipient: lc.recipient,
                pool: lm.pool,
                asset_in: lm.asset_in,
                asset_out: lc.asset_out,
                amount_in: lm.amount_in,
                amount_out: lc.amount_out,
            })
        }
        _ => None,
    }
}

/// Matching step of the merge: liquidity actions are tried before trades.
pub fn match_pair(a: &DefiAction, b: &DefiAction) -> Option<DefiAction> {
    if let (Action::Basic(x), Action::Basic(y)) = (&a.action, &b.action) {
        if let Some(lm) = try_liquidity_mining(x, y) {
            return Some(DefiAction::combine(Action::Advanced(lm), a, b));
        }
        if let Some(lc) = try_liquidity_cancel(x, y) {
            return Some(DefiAction::combine(Action::Advanced(lc), a, b));
        }
    }
    try_trade(a, b).map(|tr| DefiAction::combine(Action::Advanced(tr), a, b))
}
