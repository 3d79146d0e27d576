//! Raw trace records and the line-delimited trace file format.
//!
//! A trace file is a sequence of JSON objects, one per line. Every bundle
//! starts with a `bundle` header followed by exactly one `ext` record and any
//! number of `int` and `evt` records:
//!
//! ```text
//! {"rec":"bundle","bundle_id":"b0","block":1}
//! {"rec":"ext","id":"b0-0","from":"0x..","to":"0x..","value":"0","input":"0x","depth":0,"seq":0}
//! {"rec":"int","id":"b0-1","from":"0x..","to":"0x..","value":"0","input":"0x","depth":1,"seq":1,"parent_seq":0}
//! {"rec":"evt","emitter":"0x..","topics":["0x.."],"data":"0x..","seq":2,"parent_seq":1}
//! ```
//!
//! `seq` is the global execution order inside the bundle and is shared by
//! transactions and events.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{decode_hex, encode_hex, Address, Amount};

pub type Word = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxKind {
    External,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRecord {
    pub id: String,
    pub kind: TxKind,
    pub from: Address,
    pub to: Address,
    /// Ether moved by the call.
    pub value: Amount,
    pub input: Vec<u8>,
    pub depth: u32,
    pub seq: u64,
    pub parent_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub emitter: Address,
    pub topics: Vec<Word>,
    pub data: Vec<u8>,
    pub seq: u64,
    /// Transaction that emitted the event.
    pub parent_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceBundle {
    pub bundle_id: String,
    pub block: u64,
    pub external: TxRecord,
    pub internals: Vec<TxRecord>,
    pub events: Vec<EventRecord>,
}

impl TraceBundle {
    pub fn record_count(&self) -> usize {
        1 + self.internals.len() + self.events.len()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &TxRecord> {
        std::iter::once(&self.external).chain(self.internals.iter())
    }
}

/// A single broken invariant, identified by the offending `seq`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Violation {
    ExternalNotRoot {
        seq: u64,
    },
    WrongKind {
        seq: u64,
    },
    MissingParent {
        seq: u64,
    },
    DanglingParent {
        seq: u64,
        parent_seq: u64,
    },
    ParentNotEarlier {
        seq: u64,
        parent_seq: u64,
    },
    DepthMismatch {
        seq: u64,
        depth: u32,
        parent_depth: u32,
    },
    DuplicateSeq {
        seq: u64,
    },
    SeqGap {
        missing: u64,
    },
    /// The record's parent is not on the call stack when the record executes,
    /// so seq order is not a depth-first replay of the call tree.
    OutOfExecutionOrder {
        seq: u64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ExternalNotRoot { seq } => {
                write!(
                    f,
                    "seq {seq}: external record must have depth 0 and no parent"
                )
            }
            Violation::WrongKind { seq } => {
                write!(f, "seq {seq}: record kind does not match its list")
            }
            Violation::MissingParent { seq } => {
                write!(f, "seq {seq}: internal record without parent_seq")
            }
            Violation::DanglingParent { seq, parent_seq } => {
                write!(
                    f,
                    "seq {seq}: parent_seq {parent_seq} does not name a transaction"
                )
            }
            Violation::ParentNotEarlier { seq, parent_seq } => {
                write!(f, "seq {seq}: parent_seq {parent_seq} is not earlier")
            }
            Violation::DepthMismatch {
                seq,
                depth,
                parent_depth,
            } => write!(
                f,
                "seq {seq}: depth {depth} is not one more than parent depth {parent_depth}"
            ),
            Violation::DuplicateSeq { seq } => write!(f, "seq {seq}: duplicated"),
            Violation::SeqGap { missing } => write!(f, "seq {missing}: missing"),
            Violation::OutOfExecutionOrder { seq } => {
                write!(f, "seq {seq}: parent is not executing at this point")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every bundle invariant; never fails, only reports.
pub fn validate_bundle(b: &TraceBundle) -> ValidationReport {
    let mut violations = Vec::new();
    let ext = &b.external;
    if ext.kind != TxKind::External {
        violations.push(Violation::WrongKind { seq: ext.seq });
    }
    if ext.depth != 0 || ext.parent_seq.is_some() {
        violations.push(Violation::ExternalNotRoot { seq: ext.seq });
    }

    let mut tx_depth: HashMap<u64, u32> = HashMap::with_capacity(b.internals.len() + 1);
    let mut seen: HashSet<u64> = HashSet::with_capacity(b.record_count());
    let mut dup = |seq: u64, violations: &mut Vec<Violation>| {
        if !seen.insert(seq) {
            violations.push(Violation::DuplicateSeq { seq });
        }
    };
    dup(ext.seq, &mut violations);
    tx_depth.insert(ext.seq, ext.depth);
    for tx in &b.internals {
        dup(tx.seq, &mut violations);
        tx_depth.entry(tx.seq).or_insert(tx.depth);
    }
    for ev in &b.events {
        dup(ev.seq, &mut violations);
    }

    let n = b.record_count() as u64;
    for s in 0..n {
        if !seen.contains(&s) {
            violations.push(Violation::SeqGap { missing: s });
        }
    }

    for tx in &b.internals {
        if tx.kind != TxKind::Internal {
            violations.push(Violation::WrongKind { seq: tx.seq });
        }
        let Some(p) = tx.parent_seq else {
            violations.push(Violation::MissingParent { seq: tx.seq });
            continue;
        };
        match tx_depth.get(&p) {
            None => violations.push(Violation::DanglingParent {
                seq: tx.seq,
                parent_seq: p,
            }),
            Some(&pd) => {
                if p >= tx.seq {
                    violations.push(Violation::ParentNotEarlier {
                        seq: tx.seq,
                        parent_seq: p,
                    });
                }
                if pd.checked_add(1) != Some(tx.depth) {
                    violations.push(Violation::DepthMismatch {
                        seq: tx.seq,
                        depth: tx.depth,
                        parent_depth: pd,
                    });
                }
            }
        }
    }
    for ev in &b.events {
        if !tx_depth.contains_key(&ev.parent_seq) {
            violations.push(Violation::DanglingParent {
                seq: ev.seq,
                parent_seq: ev.parent_seq,
            });
        }
    }

    // Replay in seq order against a call stack; only meaningful once the
    // structural checks above pass.
    if violations.is_empty() {
        let mut order: Vec<(u64, Option<u64>, bool)> = Vec::with_capacity(b.record_count());
        order.push((ext.seq, None, true));
        order.extend(b.internals.iter().map(|t| (t.seq, t.parent_seq, true)));
        order.extend(b.events.iter().map(|e| (e.seq, Some(e.parent_seq), false)));
        order.sort_unstable_by_key(|r| r.0);
        let mut stack: Vec<u64> = Vec::new();
        for (seq, parent, is_tx) in order {
            if let Some(p) = parent {
                while stack.last().is_some_and(|&top| top != p) {
                    stack.pop();
                }
                if stack.is_empty() {
                    violations.push(Violation::OutOfExecutionOrder { seq });
                    break;
                }
            } else if !stack.is_empty() {
                violations.push(Violation::OutOfExecutionOrder { seq });
                break;
            }
            if is_tx {
                stack.push(seq);
            }
        }
    }

    ValidationReport { violations }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed record{}: {reason}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    MalformedRecord {
        line: usize,
        field: Option<String>,
        reason: String,
    },
    #[error("bundle {bundle_id}: seq {seq} refers to unknown parent {parent_seq}")]
    DanglingParent {
        bundle_id: String,
        seq: u64,
        parent_seq: u64,
    },
    #[error("bundle {bundle_id}: duplicate seq {seq}")]
    DuplicateSeq { bundle_id: String, seq: u64 },
    #[error("bundle {bundle_id}: {}", join_violations(.violations))]
    InvalidBundle {
        bundle_id: String,
        violations: Vec<Violation>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl TraceError {
    /// Schema and I/O problems make the rest of the stream unreadable;
    /// invariant violations only affect one bundle.
    pub fn is_fatal(&self) -> bool {
        matches!(self, TraceError::MalformedRecord { .. } | TraceError::Io(_))
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn report_to_error(bundle_id: &str, report: ValidationReport) -> Result<(), TraceError> {
    if report.is_empty() {
        return Ok(());
    }
    for v in &report.violations {
        match *v {
            Violation::DanglingParent { seq, parent_seq } => {
                return Err(TraceError::DanglingParent {
                    bundle_id: bundle_id.to_string(),
                    seq,
                    parent_seq,
                })
            }
            Violation::DuplicateSeq { seq } => {
                return Err(TraceError::DuplicateSeq {
                    bundle_id: bundle_id.to_string(),
                    seq,
                })
            }
            _ => {}
        }
    }
    Err(TraceError::InvalidBundle {
        bundle_id: bundle_id.to_string(),
        violations: report.violations,
    })
}

// --- wire format ---------------------------------------------------------

#[derive(Deserialize)]
#[serde(tag = "rec")]
enum WireIn {
    #[serde(rename = "bundle")]
    Header { bundle_id: String, block: u64 },
    #[serde(rename = "ext")]
    Ext(WireTx),
    #[serde(rename = "int")]
    Int(WireTx),
    #[serde(rename = "evt")]
    Evt(WireEvt),
}

#[derive(Deserialize)]
struct WireTx {
    id: String,
    from: String,
    to: String,
    value: String,
    input: String,
    depth: u32,
    seq: u64,
    parent_seq: Option<u64>,
}

#[derive(Deserialize)]
struct WireEvt {
    emitter: String,
    topics: Vec<String>,
    data: String,
    seq: u64,
    parent_seq: u64,
}

#[derive(Serialize)]
struct WireHeaderOut<'a> {
    rec: &'static str,
    bundle_id: &'a str,
    block: u64,
}

#[derive(Serialize)]
struct WireTxOut<'a> {
    rec: &'static str,
    id: &'a str,
    from: Address,
    to: Address,
    value: Amount,
    input: String,
    depth: u32,
    seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_seq: Option<u64>,
}

#[derive(Serialize)]
struct WireEvtOut {
    rec: &'static str,
    emitter: Address,
    topics: Vec<String>,
    data: String,
    seq: u64,
    parent_seq: u64,
}

fn field_err(line: usize, field: &str, reason: impl fmt::Display) -> TraceError {
    TraceError::MalformedRecord {
        line,
        field: Some(field.to_string()),
        reason: reason.to_string(),
    }
}

fn convert_tx(line: usize, w: WireTx, kind: TxKind) -> Result<TxRecord, TraceError> {
    if kind == TxKind::External && w.parent_seq.is_some() {
        return Err(field_err(
            line,
            "parent_seq",
            "not allowed on an external record",
        ));
    }
    if kind == TxKind::Internal && w.parent_seq.is_none() {
        return Err(field_err(
            line,
            "parent_seq",
            "required on an internal record",
        ));
    }
    Ok(TxRecord {
        id: w.id,
        kind,
        from: w.from.parse().map_err(|e| field_err(line, "from", e))?,
        to: w.to.parse().map_err(|e| field_err(line, "to", e))?,
        value: w.value.parse().map_err(|e| field_err(line, "value", e))?,
        input: decode_hex(&w.input).map_err(|e| field_err(line, "input", e))?,
        depth: w.depth,
        seq: w.seq,
        parent_seq: w.parent_seq,
    })
}

fn convert_evt(line: usize, w: WireEvt) -> Result<EventRecord, TraceError> {
    let mut topics = Vec::with_capacity(w.topics.len());
    for t in &w.topics {
        let bytes = decode_hex(t).map_err(|e| field_err(line, "topics", e))?;
        let word: Word = bytes.as_slice().try_into().map_err(|_| {
            field_err(
                line,
                "topics",
                format!("topic must be 32 bytes, got {}", bytes.len()),
            )
        })?;
        topics.push(word);
    }
    Ok(EventRecord {
        emitter: w
            .emitter
            .parse()
            .map_err(|e| field_err(line, "emitter", e))?,
        topics,
        data: decode_hex(&w.data).map_err(|e| field_err(line, "data", e))?,
        seq: w.seq,
        parent_seq: w.parent_seq,
    })
}

struct Partial {
    bundle_id: Option<String>,
    block: u64,
    header_line: usize,
    external: Option<TxRecord>,
    internals: Vec<TxRecord>,
    events: Vec<EventRecord>,
}

impl Partial {
    fn new(bundle_id: Option<String>, block: u64, header_line: usize) -> Self {
        Partial {
            bundle_id,
            block,
            header_line,
            external: None,
            internals: Vec::new(),
            events: Vec::new(),
        }
    }

    fn finish(self) -> Result<TraceBundle, TraceError> {
        let Some(external) = self.external else {
            return Err(TraceError::MalformedRecord {
                line: self.header_line,
                field: None,
                reason: "bundle has no external record".into(),
            });
        };
        let bundle = TraceBundle {
            bundle_id: self.bundle_id.unwrap_or_else(|| external.id.clone()),
            block: self.block,
            external,
            internals: self.internals,
            events: self.events,
        };
        report_to_error(&bundle.bundle_id, validate_bundle(&bundle))?;
        Ok(bundle)
    }
}

/// Streaming reader yielding one validated bundle at a time.
///
/// After a fatal error (see [`TraceError::is_fatal`]) the iterator is fused.
pub struct BundleReader<R> {
    input: R,
    line_no: usize,
    buf: String,
    current: Option<Partial>,
    done: bool,
}

impl<R: BufRead> BundleReader<R> {
    pub fn new(input: R) -> Self {
        BundleReader {
            input,
            line_no: 0,
            buf: String::new(),
            current: None,
            done: false,
        }
    }

    fn step(&mut self) -> Option<Result<TraceBundle, TraceError>> {
        loop {
            self.buf.clear();
            let n = match self.input.read_line(&mut self.buf) {
                Ok(n) => n,
                Err(e) => return Some(Err(e.into())),
            };
            if n == 0 {
                self.done = true;
                return self.current.take().map(Partial::finish);
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            let rec: WireIn = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    return Some(Err(TraceError::MalformedRecord {
                        line: self.line_no,
                        field: None,
                        reason: e.to_string(),
                    }))
                }
            };
            let ln = self.line_no;
            match rec {
                WireIn::Header { bundle_id, block } => {
                    let next = Partial::new(Some(bundle_id), block, ln);
                    if let Some(prev) = self.current.replace(next) {
                        return Some(prev.finish());
                    }
                }
                WireIn::Ext(w) => {
                    let tx = match convert_tx(ln, w, TxKind::External) {
                        Ok(t) => t,
                        Err(e) => return Some(Err(e)),
                    };
                    match &mut self.current {
                        Some(p) if p.external.is_none() => p.external = Some(tx),
                        _ => {
                            // No header: the external record opens a new bundle.
                            let mut next = Partial::new(None, 0, ln);
                            next.external = Some(tx);
                            if let Some(prev) = self.current.replace(next) {
                                return Some(prev.finish());
                            }
                        }
                    }
                }
                WireIn::Int(w) => {
                    let tx = match convert_tx(ln, w, TxKind::Internal) {
                        Ok(t) => t,
                        Err(e) => return Some(Err(e)),
                    };
                    match &mut self.current {
                        Some(p) if p.external.is_some() => p.internals.push(tx),
                        _ => {
                            return Some(Err(TraceError::MalformedRecord {
                                line: ln,
                                field: None,
                                reason: "internal record before the external record".into(),
                            }))
                        }
                    }
                }
                WireIn::Evt(w) => {
                    let ev = match convert_evt(ln, w) {
                        Ok(e) => e,
                        Err(e) => return Some(Err(e)),
                    };
                    match &mut self.current {
                        Some(p) if p.external.is_some() => p.events.push(ev),
                        _ => {
                            return Some(Err(TraceError::MalformedRecord {
                                line: ln,
                                field: None,
                                reason: "event record before the external record".into(),
                            }))
                        }
                    }
                }
            }
        }
    }
}

impl<R: BufRead> Iterator for BundleReader<R> {
    type Item = Result<TraceBundle, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.step();
        if let Some(Err(e)) = &item {
            if e.is_fatal() {
                self.done = true;
            }
        }
        item
    }
}

pub fn open_bundles(path: &Path) -> Result<BundleReader<BufReader<File>>, TraceError> {
    Ok(BundleReader::new(BufReader::new(File::open(path)?)))
}

/// Reads every bundle of a trace file, in file order.
pub fn load_bundles(path: &Path) -> Result<Vec<TraceBundle>, TraceError> {
    open_bundles(path)?.collect()
}

pub fn parse_bundles(bytes: &[u8]) -> Result<Vec<TraceBundle>, TraceError> {
    BundleReader::new(bytes).collect()
}

/// Writes one bundle. Internals and events are interleaved by `seq` while
/// each list keeps its own order, so reading the output back reproduces the
/// bundle exactly.
pub fn write_bundle<W: Write>(w: &mut W, b: &TraceBundle) -> io::Result<()> {
    let header = WireHeaderOut {
        rec: "bundle",
        bundle_id: &b.bundle_id,
        block: b.block,
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    write_tx(w, "ext", &b.external)?;
    let (mut i, mut j) = (0, 0);
    while i < b.internals.len() || j < b.events.len() {
        let take_tx = match (b.internals.get(i), b.events.get(j)) {
            (Some(t), Some(e)) => t.seq <= e.seq,
            (Some(_), None) => true,
            _ => false,
        };
        if take_tx {
            write_tx(w, "int", &b.internals[i])?;
            i += 1;
        } else {
            write_evt(w, &b.events[j])?;
            j += 1;
        }
    }
    Ok(())
}

fn write_tx<W: Write>(w: &mut W, rec: &'static str, t: &TxRecord) -> io::Result<()> {
    let out = WireTxOut {
        rec,
        id: &t.id,
        from: t.from,
        to: t.to,
        value: t.value,
        input: encode_hex(&t.input),
        depth: t.depth,
        seq: t.seq,
        parent_seq: t.parent_seq,
    };
    serde_json::to_writer(&mut *w, &out)?;
    w.write_all(b"\n")
}

fn write_evt<W: Write>(w: &mut W, e: &EventRecord) -> io::Result<()> {
    let out = WireEvtOut {
        rec: "evt",
        emitter: e.emitter,
        topics: e.topics.iter().map(|t| encode_hex(t)).collect(),
        data: encode_hex(&e.data),
        seq: e.seq,
        parent_seq: e.parent_seq,
    };
    serde_json::to_writer(&mut *w, &out)?;
    w.write_all(b"\n")
}

pub fn encode_bundles<'a>(bundles: impl IntoIterator<Item = &'a TraceBundle>) -> Vec<u8> {
    let mut out = Vec::new();
    for b in bundles {
        write_bundle(&mut out, b).expect("writing to a Vec cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(seq: u64, parent: Option<u64>, depth: u32) -> TxRecord {
        TxRecord {
            id: format!("t{seq}"),
            kind: if parent.is_some() {
                TxKind::Internal
            } else {
                TxKind::External
            },
            from: Address::from_low_u64(1),
            to: Address::from_low_u64(2),
            value: Amount::ZERO,
            input: vec![],
            depth,
            seq,
            parent_seq: parent,
        }
    }

    fn bundle(internals: Vec<TxRecord>, events: Vec<EventRecord>) -> TraceBundle {
        TraceBundle {
            bundle_id: "b".into(),
            block: 7,
            external: tx(0, None, 0),
            internals,
            events,
        }
    }

    #[test]
    fn minimal_bundle_loads() {
        let text = concat!(
            "{\"rec\":\"bundle\",\"bundle_id\":\"only\",\"block\":3}\n",
            "{\"rec\":\"ext\",\"id\":\"x\",\"from\":\"0x0000000000000000000000000000000000000001\",",
            "\"to\":\"0x0000000000000000000000000000000000000002\",\"value\":\"5\",\"input\":\"0x\",\"depth\":0,\"seq\":0}\n"
        );
        let got = parse_bundles(text.as_bytes()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].bundle_id, "only");
        assert_eq!(got[0].block, 3);
        assert!(got[0].internals.is_empty());
        assert_eq!(got[0].external.value, Amount::from(5u64));
    }

    #[test]
    fn depth_mismatch_is_reported() {
        let b = bundle(vec![tx(1, Some(0), 2)], vec![]);
        let r = validate_bundle(&b);
        assert!(r.violations.iter().any(|v| matches!(
            v,
            Violation::DepthMismatch {
                seq: 1,
                depth: 2,
                parent_depth: 0
            }
        )));
    }

    #[test]
    fn seq_gap_and_duplicate() {
        let b = bundle(vec![tx(2, Some(0), 1)], vec![]);
        assert!(validate_bundle(&b)
            .violations
            .contains(&Violation::SeqGap { missing: 1 }));
        let b = bundle(vec![tx(1, Some(0), 1), tx(1, Some(0), 1)], vec![]);
        assert!(validate_bundle(&b)
            .violations
            .contains(&Violation::DuplicateSeq { seq: 1 }));
    }

    #[test]
    fn execution_order_must_be_depth_first() {
        // 1 and 2 are children of 0; 3 claims parent 1 after 2 already ran.
        let b = bundle(
            vec![tx(1, Some(0), 1), tx(2, Some(0), 1), tx(3, Some(1), 2)],
            vec![],
        );
        assert_eq!(
            validate_bundle(&b).violations,
            vec![Violation::OutOfExecutionOrder { seq: 3 }]
        );
        let ok = bundle(
            vec![tx(1, Some(0), 1), tx(2, Some(1), 2), tx(3, Some(0), 1)],
            vec![],
        );
        assert!(validate_bundle(&ok).is_empty());
    }

    #[test]
    fn dangling_event_parent_is_a_load_error() {
        let b = bundle(
            vec![tx(1, Some(0), 1)],
            vec![EventRecord {
                emitter: Address::from_low_u64(9),
                topics: vec![[1u8; 32]],
                data: vec![],
                seq: 2,
                parent_seq: 5,
            }],
        );
        let bytes = encode_bundles([&b]);
        match parse_bundles(&bytes) {
            Err(TraceError::DanglingParent {
                seq: 2,
                parent_seq: 5,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_field_is_identified() {
        let text = "{\"rec\":\"bundle\",\"bundle_id\":\"b\",\"block\":1}\n{\"rec\":\"ext\",\"id\":\"x\",\"from\":\"0x12\",\"to\":\"0x0000000000000000000000000000000000000002\",\"value\":\"0\",\"input\":\"0x\",\"depth\":0,\"seq\":0}\n";
        match parse_bundles(text.as_bytes()) {
            Err(TraceError::MalformedRecord {
                line: 2,
                field: Some(f),
                ..
            }) => assert_eq!(f, "from"),
            other => panic!("unexpected {other:?}"),
        }
        let text = "{\"rec\":\"bundle\",\"bundle_id\":\"b\",\"block\":1}\nnot json\n";
        assert!(matches!(
            parse_bundles(text.as_bytes()),
            Err(TraceError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn empty_input_has_no_bundles() {
        assert!(parse_bundles(b"").unwrap().is_empty());
        assert!(parse_bundles(b"\n\n").unwrap().is_empty());
    }

    #[test]
    fn roundtrip_is_exact() {
        let b = bundle(
            vec![tx(1, Some(0), 1), tx(3, Some(1), 2)],
            vec![EventRecord {
                emitter: Address::from_low_u64(9),
                topics: vec![[7u8; 32], [0u8; 32]],
                data: vec![0xde, 0xad],
                seq: 2,
                parent_seq: 1,
            }],
        );
        let bytes = encode_bundles([&b, &b]);
        let back = parse_bundles(&bytes).unwrap();
        assert_eq!(back, vec![b.clone(), b]);
        assert_eq!(encode_bundles(&back), bytes);
    }
}
