//! Semantic lifting of a pruned cash flow tree.
//!
//! The tree is traversed post-order. At every inner node the children are
//! folded left to right: each new child is merged with the current tail as
//! long as a merge applies (retrying against the new tail after each
//! success). A node left with a single child is replaced by that child.
//! Event nodes are dropped once the traversal is done.
//!
//! Two leaves merge when either
//! * they *match* an advanced action (liquidity mining, liquidity cancel,
//!   trade), or
//! * they form a *transfer chain*: the second link moves the same asset and
//!   amount onward from the first link's recipient. Two plain transfers
//!   collapse into one end-to-end transfer; an action absorbs a transfer
//!   that feeds its input or forwards its output, keeping its attributes.

use std::borrow::Cow;
use std::fmt::Write as _;

use thiserror::Error;

use crate::actions::{
    classify_transfer, match_pair, Action, AdvancedAction, AdvancedKind, BasicAction, BasicKind,
    DefiAction,
};
use crate::cft::{Cft, CftNode, Payload, TransferRecord};
use crate::trace::{EventRecord, TxKind, TxRecord};
use crate::units::{decode_hex, encode_hex, Amount, AssetId, Tolerance, UnitParseError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LiftConfig {
    /// Relative tolerance between the amounts of two chained transfers.
    pub chain_rel_tol: Tolerance,
}

fn leaf_action(n: &CftNode) -> Option<Cow<'_, DefiAction>> {
    if !n.is_leaf() {
        return None;
    }
    match &n.payload {
        Payload::Transfer(t) => DefiAction::from_transfer(t).map(Cow::Owned),
        Payload::Action(a) => Some(Cow::Borrowed(a)),
        _ => None,
    }
}

fn chain(a: &DefiAction, b: &DefiAction, cfg: &LiftConfig) -> Option<DefiAction> {
    let tol = cfg.chain_rel_tol;
    match (&a.action, &b.action) {
        (Action::Basic(x), Action::Basic(y)) => {
            if x.recipient != y.spender || x.asset != y.asset || x.spender == y.recipient {
                return None;
            }
            if !tol.approx_eq(x.amount, y.amount) {
                return None;
            }
            let end_to_end = TransferRecord {
                spender: x.spender,
                recipient: y.recipient,
                asset: x.asset,
                amount: x.amount,
                seq: a.seq_span.0,
            };
            let composite = classify_transfer(&end_to_end)?;
            Some(DefiAction::combine(Action::Basic(composite), a, b))
        }
        (Action::Basic(x), Action::Advanced(y)) => {
            let feeds = x.recipient == y.operator
                && x.asset == y.asset_in
                && tol.approx_eq(x.amount, y.amount_in);
            feeds.then(|| DefiAction::combine(b.action, a, b))
        }
        (Action::Advanced(x), Action::Basic(y)) => {
            let forwards = y.spender == x.recipient
                && y.asset == x.asset_out
                && tol.approx_eq(x.amount_out, y.amount);
            forwards.then(|| DefiAction::combine(a.action, a, b))
        }
        (Action::Advanced(_), Action::Advanced(_)) => None,
    }
}

/// Attempts to merge two adjacent leaves, `a` preceding `b`. Matching is
/// tried before chaining. Returns `None` when neither applies.
pub fn merge_leaves(a: &CftNode, b: &CftNode, cfg: &LiftConfig) -> Option<CftNode> {
    let x = leaf_action(a)?;
    let y = leaf_action(b)?;
    match_pair(&x, &y)
        .or_else(|| chain(&x, &y, cfg))
        .map(|m| CftNode::leaf(Payload::Action(m)))
}

fn merge_children(children: Vec<CftNode>, cfg: &LiftConfig) -> Vec<CftNode> {
    let mut out: Vec<CftNode> = Vec::with_capacity(children.len());
    for mut child in children {
        while let Some(tail) = out.pop() {
            match merge_leaves(&tail, &child, cfg) {
                Some(merged) => child = merged,
                None => {
                    out.push(tail);
                    break;
                }
            }
        }
        out.push(child);
    }
    out
}

/// Folds the children of `root`; a single survivor replaces `root`.
pub fn merge_subtree(mut root: CftNode, cfg: &LiftConfig) -> Vec<CftNode> {
    let merged = merge_children(std::mem::take(&mut root.children), cfg);
    if merged.len() == 1 {
        return merged;
    }
    root.children = merged;
    vec![root]
}

fn lift_leaves(mut node: CftNode, cfg: &LiftConfig) -> Vec<CftNode> {
    if node.is_leaf() {
        return vec![node];
    }
    let kids = std::mem::take(&mut node.children);
    node.children = kids.into_iter().flat_map(|c| lift_leaves(c, cfg)).collect();
    merge_subtree(node, cfg)
}

fn remove_events(node: &mut CftNode) {
    node.children
        .retain(|c| !matches!(c.payload, Payload::Event(_)));
    for c in &mut node.children {
        remove_events(c);
    }
}

/// Lifts a pruned tree. The root transaction is always kept.
pub fn lift(t: Cft, cfg: &LiftConfig) -> Cft {
    let Cft {
        mut root,
        bundle_id,
    } = t;
    let kids = std::mem::take(&mut root.children);
    let lifted: Vec<CftNode> = kids.into_iter().flat_map(|c| lift_leaves(c, cfg)).collect();
    root.children = merge_children(lifted, cfg);
    remove_events(&mut root);
    Cft { root, bundle_id }
}

/// Leaves of the lifted tree as actions, in execution order. Transfers that
/// classify as no action (self-transfers) are skipped.
pub fn action_sequence(t: &Cft) -> Vec<DefiAction> {
    fn visit(n: &CftNode, out: &mut Vec<DefiAction>) {
        if n.is_leaf() {
            match &n.payload {
                Payload::Action(a) => out.push(a.clone()),
                Payload::Transfer(tr) => out.extend(DefiAction::from_transfer(tr)),
                _ => {}
            }
            return;
        }
        for c in &n.children {
            visit(c, out);
        }
    }
    let mut out = Vec::new();
    for c in &t.root.children {
        visit(c, &mut out);
    }
    out
}

// --- debug dump ----------------------------------------------------------

fn escape(s: &str) -> String {
    s.replace('%', "%25")
        .replace(' ', "%20")
        .replace('\n', "%0A")
}

fn unescape(s: &str) -> String {
    s.replace("%0A", "\n")
        .replace("%20", " ")
        .replace("%25", "%")
}

fn legs_field(legs: &[TransferRecord]) -> String {
    legs.iter()
        .map(|l| {
            format!(
                "{}:{}>{}:{}:{}",
                l.seq, l.spender, l.recipient, l.asset, l.amount
            )
        })
        .collect::<Vec<_>>()
        .join(",")
}

fn dump_node(n: &CftNode, depth: usize, bundle_id: Option<&str>, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
    match &n.payload {
        Payload::Transaction(tx) => {
            let tag = if tx.kind == TxKind::External {
                "ET"
            } else {
                "IT"
            };
            let _ = write!(out, "{tag}");
            if let Some(b) = bundle_id {
                let _ = write!(out, " bundle={}", escape(b));
            }
            let _ = write!(
                out,
                " seq={} id={} from={} to={} value={} depth={}",
                tx.seq,
                escape(&tx.id),
                tx.from,
                tx.to,
                tx.value,
                tx.depth
            );
            if let Some(p) = tx.parent_seq {
                let _ = write!(out, " parent={p}");
            }
            let _ = write!(out, " input={}", encode_hex(&tx.input));
        }
        Payload::Event(ev) => {
            let topics: Vec<String> = ev.topics.iter().map(|t| encode_hex(t)).collect();
            let _ = write!(
                out,
                "E seq={} parent={} emitter={} topics={} data={}",
                ev.seq,
                ev.parent_seq,
                ev.emitter,
                topics.join(","),
                encode_hex(&ev.data)
            );
        }
        Payload::Transfer(t) => {
            let _ = write!(
                out,
                "Transfer seq={} spender={} recipient={} asset={} amount={}",
                t.seq, t.spender, t.recipient, t.asset, t.amount
            );
        }
        Payload::Action(a) => {
            let _ = write!(
                out,
                "{} span={}..{}",
                a.short_name(),
                a.seq_span.0,
                a.seq_span.1
            );
            match &a.action {
                Action::Basic(b) => {
                    let _ = write!(
                        out,
                        " spender={} recipient={} asset={} amount={}",
                        b.spender, b.recipient, b.asset, b.amount
                    );
                }
                Action::Advanced(x) => {
                    let _ = write!(
                        out,
                        " operator={} recipient={} pool={} asset_in={} asset_out={} amount_in={} amount_out={}",
                        x.operator, x.recipient, x.pool, x.asset_in, x.asset_out, x.amount_in, x.amount_out
                    );
                }
            }
            let _ = write!(out, " legs={}", legs_field(&a.legs));
        }
    }
    out.push('\n');
    for c in &n.children {
        dump_node(c, depth + 1, None, out);
    }
}

/// One node per line, two spaces of indentation per level.
pub fn dump_tree(t: &Cft) -> String {
    let mut out = String::new();
    dump_node(&t.root, 0, Some(&t.bundle_id), &mut out);
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("dump line {line}: {reason}")]
pub struct DumpParseError {
    pub line: usize,
    pub reason: String,
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn err(&self, reason: impl Into<String>) -> DumpParseError {
        DumpParseError {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn opt(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn raw(&self, key: &str) -> Result<&'a str, DumpParseError> {
        self.opt(key)
            .ok_or_else(|| self.err(format!("missing `{key}`")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, DumpParseError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)?
            .parse()
            .map_err(|e: T::Err| self.err(format!("`{key}`: {e}")))
    }

    fn bytes(&self, key: &str) -> Result<Vec<u8>, DumpParseError> {
        decode_hex(self.raw(key)?).map_err(|e: UnitParseError| self.err(format!("`{key}`: {e}")))
    }
}

fn parse_legs(f: &Fields<'_>) -> Result<Vec<TransferRecord>, DumpParseError> {
    let raw = f.raw("legs")?;
    if raw.is_empty() {
        return Err(f.err("action without legs"));
    }
    raw.split(',')
        .map(|leg| {
            let bad = || f.err(format!("bad leg `{leg}`"));
            let mut parts = leg.split(':');
            let seq = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let (s, r) = parts
                .next()
                .ok_or_else(bad)?
                .split_once('>')
                .ok_or_else(bad)?;
            let asset: AssetId = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let amount: Amount = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if parts.next().is_some() {
                return Err(bad());
            }
            Ok(TransferRecord {
                spender: s.parse().map_err(|_| bad())?,
                recipient: r.parse().map_err(|_| bad())?,
                asset,
                amount,
                seq,
            })
        })
        .collect()
}

fn parse_span(f: &Fields<'_>) -> Result<(u64, u64), DumpParseError> {
    let raw = f.raw("span")?;
    let (a, b) = raw.split_once("..").ok_or_else(|| f.err("bad span"))?;
    Ok((
        a.parse().map_err(|_| f.err("bad span"))?,
        b.parse().map_err(|_| f.err("bad span"))?,
    ))
}

fn parse_payload(tag: &str, f: &Fields<'_>) -> Result<Payload, DumpParseError> {
    let basic = |kind| -> Result<Payload, DumpParseError> {
        Ok(Payload::Action(DefiAction {
            action: Action::Basic(BasicAction {
                kind,
                spender: f.get("spender")?,
                recipient: f.get("recipient")?,
                asset: f.get("asset")?,
                amount: f.get("amount")?,
            }),
            seq_span: parse_span(f)?,
            legs: parse_legs(f)?,
        }))
    };
    let advanced = |kind| -> Result<Payload, DumpParseError> {
        Ok(Payload::Action(DefiAction {
            action: Action::Advanced(AdvancedAction {
                kind,
                operator: f.get("operator")?,
                recipient: f.get("recipient")?,
                pool: f.get("pool")?,
                asset_in: f.get("asset_in")?,
                asset_out: f.get("asset_out")?,
                amount_in: f.get("amount_in")?,
                amount_out: f.get("amount_out")?,
            }),
            seq_span: parse_span(f)?,
            legs: parse_legs(f)?,
        }))
    };
    match tag {
        "ET" | "IT" => Ok(Payload::Transaction(TxRecord {
            id: unescape(f.raw("id")?),
            kind: if tag == "ET" {
                TxKind::External
            } else {
                TxKind::Internal
            },
            from: f.get("from")?,
            to: f.get("to")?,
            value: f.get("value")?,
            input: f.bytes("input")?,
            depth: f.get("depth")?,
            seq: f.get("seq")?,
            parent_seq: f.opt("parent").map(|_| f.get("parent")).transpose()?,
        })),
        "E" => {
            let raw = f.raw("topics")?;
            let mut topics = Vec::new();
            if !raw.is_empty() {
                for t in raw.split(',') {
                    let b = decode_hex(t).map_err(|e| f.err(e.to_string()))?;
                    topics.push(
                        <[u8; 32]>::try_from(b.as_slice())
                            .map_err(|_| f.err("topic must be 32 bytes"))?,
                    );
                }
            }
            Ok(Payload::Event(EventRecord {
                emitter: f.get("emitter")?,
                topics,
                data: f.bytes("data")?,
                seq: f.get("seq")?,
                parent_seq: f.get("parent")?,
            }))
        }
        "Transfer" => Ok(Payload::Transfer(TransferRecord {
            spender: f.get("spender")?,
            recipient: f.get("recipient")?,
            asset: f.get("asset")?,
            amount: f.get("amount")?,
            seq: f.get("seq")?,
        })),
        "T" => basic(BasicKind::Normal),
        "Tm" => basic(BasicKind::Minting),
        "Tb" => basic(BasicKind::Burning),
        "LM" => advanced(AdvancedKind::LiquidityMining),
        "LC" => advanced(AdvancedKind::LiquidityCancel),
        "Tr" => advanced(AdvancedKind::Trade),
        other => Err(f.err(format!("unknown node kind `{other}`"))),
    }
}

/// Inverse of [`dump_tree`].
pub fn parse_dump(text: &str) -> Result<Cft, DumpParseError> {
    // (depth, node) stack of open ancestors
    let mut stack: Vec<(usize, CftNode)> = Vec::new();
    let mut bundle_id = None;
    let mut root: Option<CftNode> = None;

    fn close_to(stack: &mut Vec<(usize, CftNode)>, depth: usize, root: &mut Option<CftNode>) {
        while stack.last().is_some_and(|(d, _)| *d >= depth) {
            let (_, node) = stack.pop().unwrap();
            match stack.last_mut() {
                Some((_, parent)) => parent.children.push(node),
                None => *root = Some(node),
            }
        }
    }

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let indent = line.len() - line.trim_start_matches(' ').len();
        if indent % 2 != 0 {
            return Err(DumpParseError {
                line: line_no,
                reason: "odd indentation".into(),
            });
        }
        let depth = indent / 2;
        let mut tokens = line.trim().split(' ');
        let tag = tokens.next().unwrap_or_default();
        let mut pairs = Vec::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| DumpParseError {
                line: line_no,
                reason: format!("expected key=value, got `{tok}`"),
            })?;
            pairs.push((k, v));
        }
        let fields = Fields {
            line: line_no,
            pairs,
        };

        if stack.is_empty() {
            if root.is_some() || depth != 0 {
                return Err(fields.err("more than one root"));
            }
            bundle_id = Some(unescape(fields.raw("bundle")?));
        } else {
            if depth == 0 {
                return Err(fields.err("more than one root"));
            }
            let parent_depth = stack.last().map(|(d, _)| *d).unwrap_or(0);
            if depth > parent_depth + 1 {
                return Err(fields.err("indentation skips a level"));
            }
        }
        close_to(&mut stack, depth, &mut root);
        if root.is_some() {
            return Err(fields.err("more than one root"));
        }
        let payload = parse_payload(tag, &fields)?;
        stack.push((depth, CftNode::leaf(payload)));
    }
    close_to(&mut stack, 0, &mut root);
    match (root, bundle_id) {
        (Some(root), Some(bundle_id)) => Ok(Cft { root, bundle_id }),
        _ => Err(DumpParseError {
            line: 0,
            reason: "empty dump".into(),
        }),
    }
}
