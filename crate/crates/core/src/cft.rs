//! Cash flow tree construction: call tree, transfer nodes, pruning.

use std::collections::HashMap;

use thiserror::Error;

use crate::actions::DefiAction;
use crate::trace::{validate_bundle, EventRecord, TraceBundle, TxKind, TxRecord, Violation};
use crate::units::{Address, Amount, AssetId};

/// keccak256("Transfer(address,address,uint256)")
pub const ERC20_TRANSFER_TOPIC: [u8; 32] = [
    0xdd, 0xf2, 0x52, 0xad, 0x1b, 0xe2, 0xc8, 0x9b, 0x69, 0xc2, 0xb0, 0x68, 0xfc, 0x37, 0x8d, 0xaa,
    0x95, 0x2b, 0xa7, 0xf1, 0x63, 0xc4, 0xa1, 0x16, 0x28, 0xf5, 0x5a, 0x4d, 0xf5, 0x23, 0xb3, 0xef,
];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransferRecord {
    pub spender: Address,
    pub recipient: Address,
    pub asset: AssetId,
    pub amount: Amount,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Transaction(TxRecord),
    Event(EventRecord),
    Transfer(TransferRecord),
    Action(DefiAction),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CftNode {
    pub payload: Payload,
    pub children: Vec<CftNode>,
}

impl CftNode {
    pub fn leaf(payload: Payload) -> Self {
        CftNode {
            payload,
            children: Vec::new(),
        }
    }

    /// Execution-order key; actions sort by their first constituent.
    pub fn seq(&self) -> u64 {
        match &self.payload {
            Payload::Transaction(t) => t.seq,
            Payload::Event(e) => e.seq,
            Payload::Transfer(t) => t.seq,
            Payload::Action(a) => a.seq_span.0,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_transfer(&self) -> bool {
        matches!(self.payload, Payload::Transfer(_))
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(CftNode::node_count).sum::<usize>()
    }

    /// Pre-order visit of every node.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a CftNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// Every transfer in the subtree, including those folded into actions,
    /// in pre-order.
    pub fn transfers(&self) -> Vec<&TransferRecord> {
        let mut out = Vec::new();
        self.walk(&mut |n| match &n.payload {
            Payload::Transfer(t) => out.push(t),
            Payload::Action(a) => out.extend(a.legs.iter()),
            _ => {}
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cft {
    pub root: CftNode,
    pub bundle_id: String,
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("bundle {bundle_id} violates trace invariants: {violations:?}")]
    InvalidBundle {
        bundle_id: String,
        violations: Vec<Violation>,
    },
}

/// One node per transaction and per event, attached to its parent and
/// ordered by `seq`.
pub fn build_tree(b: &TraceBundle) -> Result<Cft, BuildError> {
    let report = validate_bundle(b);
    if !report.is_empty() {
        return Err(BuildError::InvalidBundle {
            bundle_id: b.bundle_id.clone(),
            violations: report.violations,
        });
    }

    let mut by_parent: HashMap<u64, Vec<CftNode>> = HashMap::new();
    for tx in &b.internals {
        let parent = tx.parent_seq.expect("validated internal has a parent");
        by_parent
            .entry(parent)
            .or_default()
            .push(CftNode::leaf(Payload::Transaction(tx.clone())));
    }
    for ev in &b.events {
        by_parent
            .entry(ev.parent_seq)
            .or_default()
            .push(CftNode::leaf(Payload::Event(ev.clone())));
    }
    for kids in by_parent.values_mut() {
        kids.sort_by_key(CftNode::seq);
    }

    fn attach(node: &mut CftNode, by_parent: &mut HashMap<u64, Vec<CftNode>>) {
        if let Payload::Transaction(tx) = &node.payload {
            if let Some(mut kids) = by_parent.remove(&tx.seq) {
                for k in &mut kids {
                    attach(k, by_parent);
                }
                node.children = kids;
            }
        }
    }

    let mut root = CftNode::leaf(Payload::Transaction(b.external.clone()));
    attach(&mut root, &mut by_parent);
    Ok(Cft {
        root,
        bundle_id: b.bundle_id.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedTransferEvent {
    pub seq: u64,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferInsertion {
    pub tree: Cft,
    /// Events carrying the Transfer signature that could not be decoded.
    /// They stay in the tree as plain events.
    pub malformed: Vec<MalformedTransferEvent>,
    pub zero_amount_dropped: usize,
}

pub enum DecodedEvent {
    Transfer(TransferRecord),
    ZeroAmount,
    Malformed(&'static str),
    Other,
}

/// Decodes an event as an ERC20 `Transfer`.
pub fn decode_transfer_event(ev: &EventRecord) -> DecodedEvent {
    if ev.topics.first() != Some(&ERC20_TRANSFER_TOPIC) {
        return DecodedEvent::Other;
    }
    if ev.topics.len() != 3 {
        return DecodedEvent::Malformed("Transfer event must have exactly 3 topics");
    }
    let Ok(word) = <[u8; 32]>::try_from(ev.data.as_slice()) else {
        return DecodedEvent::Malformed("Transfer event data must be 32 bytes");
    };
    let spender = Address::from_word(&ev.topics[1]);
    let recipient = Address::from_word(&ev.topics[2]);
    if spender.is_zero() && recipient.is_zero() {
        return DecodedEvent::Malformed("Transfer between zero addresses");
    }
    let amount = Amount::from_word(&word);
    if amount.is_zero() {
        return DecodedEvent::ZeroAmount;
    }
    DecodedEvent::Transfer(TransferRecord {
        spender,
        recipient,
        asset: AssetId::Erc20(ev.emitter),
        amount,
        seq: ev.seq,
    })
}

/// Ether transfers become the first child of their transaction; decodable
/// ERC20 Transfer events are replaced in place by transfer nodes.
pub fn insert_transfers(t: Cft) -> TransferInsertion {
    let mut malformed = Vec::new();
    let mut zero_amount_dropped = 0;
    let root = rewrite(t.root, &mut malformed, &mut zero_amount_dropped)
        .expect("root is a transaction and is never dropped");
    TransferInsertion {
        tree: Cft {
            root,
            bundle_id: t.bundle_id,
        },
        malformed,
        zero_amount_dropped,
    }
}

fn rewrite(
    node: CftNode,
    malformed: &mut Vec<MalformedTransferEvent>,
    dropped: &mut usize,
) -> Option<CftNode> {
    match node.payload {
        Payload::Event(ev) => match decode_transfer_event(&ev) {
            DecodedEvent::Transfer(t) => Some(CftNode::leaf(Payload::Transfer(t))),
            DecodedEvent::ZeroAmount => {
                *dropped += 1;
                None
            }
            DecodedEvent::Malformed(reason) => {
                malformed.push(MalformedTransferEvent {
                    seq: ev.seq,
                    reason,
                });
                Some(CftNode::leaf(Payload::Event(ev)))
            }
            DecodedEvent::Other => Some(CftNode::leaf(Payload::Event(ev))),
        },
        Payload::Transaction(tx) => {
            let mut children = Vec::with_capacity(node.children.len() + 1);
            if !tx.value.is_zero() {
                children.push(CftNode::leaf(Payload::Transfer(TransferRecord {
                    spender: tx.from,
                    recipient: tx.to,
                    asset: AssetId::Ether,
                    amount: tx.value,
                    seq: tx.seq,
                })));
            }
            children.extend(
                node.children
                    .into_iter()
                    .filter_map(|c| rewrite(c, malformed, dropped)),
            );
            Some(CftNode {
                payload: Payload::Transaction(tx),
                children,
            })
        }
        payload => Some(CftNode {
            payload,
            children: node.children,
        }),
    }
}

/// Drops every branch that carries no transfer. The root always stays.
pub fn prune(t: Cft) -> Cft {
    let Cft { root, bundle_id } = t;
    let CftNode { payload, children } = root;
    Cft {
        root: CftNode {
            payload,
            children: children.into_iter().filter_map(prune_node).collect(),
        },
        bundle_id,
    }
}

fn prune_node(node: CftNode) -> Option<CftNode> {
    match node.payload {
        Payload::Transfer(_) | Payload::Action(_) => Some(node),
        payload => {
            let children: Vec<CftNode> = node.children.into_iter().filter_map(prune_node).collect();
            if children.is_empty() {
                None
            } else {
                Some(CftNode { payload, children })
            }
        }
    }
}

pub fn is_external_root(t: &Cft) -> bool {
    matches!(&t.root.payload, Payload::Transaction(tx) if tx.kind == TxKind::External)
}
