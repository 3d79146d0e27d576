//! Per-bundle analysis and a streaming, order-preserving worker pool.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use thiserror::Error;

use crate::actions::DefiAction;
use crate::cft::{build_tree, insert_transfers, prune, BuildError, Cft};
use crate::detect::{analyze, DetectorConfig, Finding, FindingKind};
use crate::lift::{action_sequence, lift, LiftConfig};
use crate::trace::{TraceBundle, TraceError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipelineConfig {
    pub lift: LiftConfig,
    pub detect: DetectorConfig,
}

/// Intermediate products of one bundle.
#[derive(Debug, Clone)]
pub struct LiftedBundle {
    pub tree: Cft,
    pub malformed_transfers: usize,
    pub zero_amount_dropped: usize,
}

#[derive(Debug, Clone)]
pub struct BundleAnalysis {
    pub bundle_id: String,
    pub actions: Vec<DefiAction>,
    pub findings: Vec<Finding>,
    pub malformed_transfers: usize,
    pub zero_amount_dropped: usize,
}

/// Build, insert transfers, prune, lift.
pub fn lift_bundle(b: &TraceBundle, cfg: &LiftConfig) -> Result<LiftedBundle, BuildError> {
    let ins = insert_transfers(build_tree(b)?);
    Ok(LiftedBundle {
        tree: lift(prune(ins.tree), cfg),
        malformed_transfers: ins.malformed.len(),
        zero_amount_dropped: ins.zero_amount_dropped,
    })
}

pub fn process_bundle(b: &TraceBundle, cfg: &PipelineConfig) -> Result<BundleAnalysis, BuildError> {
    let lifted = lift_bundle(b, &cfg.lift)?;
    let actions = action_sequence(&lifted.tree);
    let mut findings = analyze(&actions, &cfg.detect);
    for f in &mut findings {
        f.bundle_id = b.bundle_id.clone();
    }
    Ok(BundleAnalysis {
        bundle_id: b.bundle_id.clone(),
        actions,
        findings,
        malformed_transfers: lifted.malformed_transfers,
        zero_amount_dropped: lifted.zero_amount_dropped,
    })
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Analyzed(BundleAnalysis),
    /// A bundle that could not be analysed; the run continues.
    Skipped {
        bundle_id: Option<String>,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub bundles: u64,
    pub skipped: u64,
    pub findings: BTreeMap<FindingKind, u64>,
    pub elapsed: Duration,
}

impl RunSummary {
    pub fn total_findings(&self) -> u64 {
        self.findings.values().sum()
    }

    pub fn count(&self, kind: FindingKind) -> u64 {
        self.findings.get(&kind).copied().unwrap_or(0)
    }

    fn record(&mut self, o: &Outcome) {
        match o {
            Outcome::Analyzed(a) => {
                self.bundles += 1;
                for f in &a.findings {
                    *self.findings.entry(f.kind).or_default() += 1;
                }
            }
            Outcome::Skipped { .. } => self.skipped += 1,
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "bundles={} skipped={} direct={} indirect={} arbitrage={} elapsed_ms={}",
            self.bundles,
            self.skipped,
            self.count(FindingKind::DirectManipulation),
            self.count(FindingKind::IndirectManipulation),
            self.count(FindingKind::Arbitrage),
            self.elapsed.as_millis()
        )
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("report sink failed: {0}")]
    Sink(#[source] io::Error),
}

fn skipped(e: &TraceError) -> Outcome {
    let bundle_id = match e {
        TraceError::DanglingParent { bundle_id, .. }
        | TraceError::DuplicateSeq { bundle_id, .. }
        | TraceError::InvalidBundle { bundle_id, .. } => Some(bundle_id.clone()),
        _ => None,
    };
    Outcome::Skipped {
        bundle_id,
        reason: e.to_string(),
    }
}

fn work(item: Result<TraceBundle, TraceError>, cfg: &PipelineConfig) -> Outcome {
    match item {
        Ok(b) => match process_bundle(&b, cfg) {
            Ok(a) => Outcome::Analyzed(a),
            Err(e) => Outcome::Skipped {
                bundle_id: Some(b.bundle_id),
                reason: e.to_string(),
            },
        },
        Err(e) => skipped(&e),
    }
}

/// Analyses a stream of bundles on `jobs` worker threads. `sink` sees every
/// outcome in input order. Memory is bounded by the channel capacities, not
/// by the input size. Invalid bundles are reported as skipped; a fatal
/// input error ends the run after the outcomes preceding it were delivered.
pub fn run_stream<I, F>(
    input: I,
    cfg: &PipelineConfig,
    jobs: usize,
    mut sink: F,
) -> Result<RunSummary, PipelineError>
where
    I: Iterator<Item = Result<TraceBundle, TraceError>> + Send,
    F: FnMut(&Outcome) -> io::Result<()>,
{
    let start = Instant::now();
    let jobs = jobs.max(1);
    let mut summary = RunSummary::default();
    let stop = AtomicBool::new(false);
    let (work_tx, work_rx) = bounded::<(u64, Result<TraceBundle, TraceError>)>(jobs * 4);
    let (done_tx, done_rx) = bounded::<(u64, Outcome)>(jobs * 4);

    let (fatal, sink_err) = std::thread::scope(|s| {
        let stop = &stop;
        let feeder = s.spawn(move || {
            for (i, item) in input.enumerate() {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                if let Err(e) = &item {
                    if e.is_fatal() {
                        return item.err();
                    }
                }
                if work_tx.send((i as u64, item)).is_err() {
                    break;
                }
            }
            None
        });
        for _ in 0..jobs {
            let rx = work_rx.clone();
            let tx = done_tx.clone();
            s.spawn(move || {
                for (i, item) in rx {
                    if tx.send((i, work(item, cfg))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(work_rx);
        drop(done_tx);

        let mut pending: HashMap<u64, Outcome> = HashMap::new();
        let mut next = 0u64;
        let mut sink_err = None;
        for (i, outcome) in done_rx {
            pending.insert(i, outcome);
            while let Some(o) = pending.remove(&next) {
                next += 1;
                if sink_err.is_none() {
                    summary.record(&o);
                    if let Err(e) = sink(&o) {
                        sink_err = Some(e);
                        stop.store(true, Ordering::Relaxed);
                    }
                }
            }
        }
        let fatal = feeder.join().expect("feeder thread panicked");
        (fatal, sink_err)
    });

    summary.elapsed = start.elapsed();
    if let Some(e) = sink_err {
        return Err(PipelineError::Sink(e));
    }
    if let Some(e) = fatal {
        return Err(PipelineError::Trace(e));
    }
    Ok(summary)
}
