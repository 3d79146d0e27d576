use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use flowguard_core::amm::scenario::{
    tally, ScenarioError, ScenarioKind, ScenarioParams, ScenarioStream,
};
use flowguard_core::cft::BuildError;
use flowguard_core::detect::DetectorConfig;
use flowguard_core::lift::{dump_tree, LiftConfig};
use flowguard_core::pipeline::{lift_bundle, run_stream, Outcome, PipelineConfig, PipelineError};
use flowguard_core::report::{write_findings, ReportFormat};
use flowguard_core::trace::{write_bundle, BundleReader, TraceBundle, TraceError};
use flowguard_core::units::Tolerance;

#[derive(Parser, Debug)]
#[command(
    name = "flowguard",
    version,
    about = "Detect price-manipulation patterns in transaction traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyse trace files and report findings.
    Analyze(AnalyzeArgs),
    /// Generate a scenario trace file and its manifest.
    Simulate(SimulateArgs),
    /// Print the lifted tree of one bundle.
    LiftDump(LiftDumpArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Trace files to read, in order; `-` reads stdin.
    #[arg(long, required = true, num_args = 1.., env = "FLOWGUARD_INPUT", value_delimiter = ',')]
    input: Vec<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long, env = "FLOWGUARD_OUT")]
    out: Option<PathBuf>,
    /// Relative tolerance for matching a trade's output with the reverse trade's input.
    #[arg(long, env = "FLOWGUARD_TOLERANCE_AMOUNT_EQ", default_value = "0")]
    tolerance_amount_eq: Tolerance,
    /// Relative tolerance for the indirect rule's round-trip amounts.
    #[arg(long, env = "FLOWGUARD_TOLERANCE_INDIRECT", default_value = "1/100")]
    tolerance_indirect: Tolerance,
    /// Relative tolerance for transfer chains during lifting.
    #[arg(long, env = "FLOWGUARD_TOLERANCE_CHAIN", default_value = "0")]
    tolerance_chain: Tolerance,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, env = "FLOWGUARD_JOBS", value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// `jsonl` or `text`.
    #[arg(long, env = "FLOWGUARD_FORMAT", default_value = "jsonl")]
    format: ReportFormat,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// direct, indirect, arbitrage, benign or mixed.
    #[arg(long, env = "FLOWGUARD_KIND")]
    kind: ScenarioKind,
    #[arg(long, env = "FLOWGUARD_SEED", default_value_t = 0)]
    seed: u64,
    /// Scenario parameters as key=value, repeated or comma separated.
    #[arg(long, num_args = 1.., env = "FLOWGUARD_PARAMS")]
    params: Vec<String>,
    /// Number of bundles for the mixed kind (same as count=N).
    #[arg(long, env = "FLOWGUARD_COUNT")]
    count: Option<u64>,
    /// Trace destination; stdout when omitted.
    #[arg(long, env = "FLOWGUARD_OUT")]
    out: Option<PathBuf>,
    /// Manifest destination; defaults to `<out>.manifest.json`.
    #[arg(long, env = "FLOWGUARD_MANIFEST")]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LiftDumpArgs {
    #[arg(long, env = "FLOWGUARD_INPUT")]
    input: PathBuf,
    /// Bundle to dump; the first one when omitted.
    #[arg(long)]
    bundle: Option<String>,
    #[arg(long, env = "FLOWGUARD_TOLERANCE_CHAIN", default_value = "0")]
    tolerance_chain: Tolerance,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("unknown bundle `{0}`")]
    UnknownBundle(String),
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("write failed: {0}")]
    Output(#[source] io::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Trace(_)
            | CliError::Scenario(_)
            | CliError::Build(_)
            | CliError::UnknownBundle(_)
            | CliError::Open { .. } => 2,
            CliError::Output(_) | CliError::Internal(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Trace(t) => CliError::Trace(t),
            PipelineError::Sink(io) => CliError::Output(io),
        }
    }
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead + Send>, CliError> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).map_err(|source| CliError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Box::new(BufReader::new(f)))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(CliError::Output)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Bundles of several files, read back to back.
struct MultiInput {
    readers: VecDeque<Box<dyn BufRead + Send>>,
    current: Option<BundleReader<Box<dyn BufRead + Send>>>,
    failed: bool,
}

impl Iterator for MultiInput {
    type Item = Result<TraceBundle, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(r) = &mut self.current {
                match r.next() {
                    Some(item) => {
                        if item.as_ref().is_err_and(TraceError::is_fatal) {
                            self.failed = true;
                        }
                        return Some(item);
                    }
                    None => self.current = None,
                }
            }
            self.current = Some(BundleReader::new(self.readers.pop_front()?));
        }
    }
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let readers = a
        .input
        .iter()
        .map(|p| open_input(p))
        .collect::<Result<VecDeque<_>, _>>()?;
    let input = MultiInput {
        readers,
        current: None,
        failed: false,
    };
    let cfg = PipelineConfig {
        lift: LiftConfig {
            chain_rel_tol: a.tolerance_chain,
        },
        detect: DetectorConfig {
            amount_eq_rel_tol: a.tolerance_amount_eq,
            indirect_in_out_rel_tol: a.tolerance_indirect,
        },
    };
    let jobs = a.jobs.map(|j| j as usize).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let mut out = open_output(a.out.as_deref())?;
    let format = a.format;
    let result = run_stream(input, &cfg, jobs, |o| match o {
        Outcome::Analyzed(r) => write_findings(&mut out, &r.findings, &r.actions, format),
        Outcome::Skipped { bundle_id, reason } => {
            eprintln!(
                "skipped bundle {}: {reason}",
                bundle_id.as_deref().unwrap_or("?")
            );
            Ok(())
        }
    });
    out.flush().map_err(CliError::Output)?;
    let summary = result?;
    eprintln!("{summary}");
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut params = ScenarioParams::parse(&a.params)?;
    if let Some(n) = a.count {
        params = params.with("count", n);
    }
    let stream = ScenarioStream::new(a.kind, &params, a.seed)?;
    let mut manifest = stream.manifest_header(&params);
    let mut out = open_output(a.out.as_deref())?;
    for item in stream {
        let (bundle, m) = item?;
        write_bundle(&mut out, &bundle).map_err(CliError::Output)?;
        tally(&mut manifest.totals, &m);
        manifest.bundles.push(m);
    }
    out.flush().map_err(CliError::Output)?;

    let manifest_path = a.manifest.or_else(|| {
        a.out.as_ref().map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    if let Some(p) = manifest_path {
        let f = BufWriter::new(File::create(&p).map_err(CliError::Output)?);
        serde_json::to_writer_pretty(f, &manifest)
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn cmd_lift_dump(a: LiftDumpArgs) -> Result<(), CliError> {
    let reader = BundleReader::new(open_input(&a.input)?);
    let mut found = None;
    for item in reader {
        let b = item?;
        if a.bundle.as_deref().is_none_or(|id| id == b.bundle_id) {
            found = Some(b);
            break;
        }
    }
    let bundle =
        found.ok_or_else(|| CliError::UnknownBundle(a.bundle.clone().unwrap_or_default()))?;
    let lifted = lift_bundle(
        &bundle,
        &LiftConfig {
            chain_rel_tol: a.tolerance_chain,
        },
    )?;
    let mut out = io::stdout().lock();
    out.write_all(dump_tree(&lifted.tree).as_bytes())
        .map_err(CliError::Output)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::LiftDump(a) => cmd_lift_dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
