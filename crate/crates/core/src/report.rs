//! Report records for findings, as JSON lines or plain text.

use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actions::DefiAction;
use crate::detect::{Finding, FindingKind, RuleClause};
use crate::units::{Address, AssetId, SignedAmount};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Jsonl,
    Text,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ReportFormat::Jsonl),
            "text" => Ok(ReportFormat::Text),
            other => Err(format!(
                "unknown report format `{other}` (expected jsonl or text)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WitnessEntry {
    pub index: usize,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub kind: FindingKind,
    pub bundle_id: String,
    /// Findings are leads for manual review, never verdicts.
    pub confidence: String,
    pub attacker: Address,
    pub pool: Address,
    pub victim: Option<Address>,
    pub profit_asset: AssetId,
    pub profit_amount: SignedAmount,
    pub witness: Vec<WitnessEntry>,
    pub rule_trace: Vec<RuleClause>,
}

impl ReportRecord {
    pub fn new(f: &Finding, actions: &[DefiAction]) -> Self {
        ReportRecord {
            kind: f.kind,
            bundle_id: f.bundle_id.clone(),
            confidence: "candidate".to_string(),
            attacker: f.attacker,
            pool: f.pool,
            victim: f.victim,
            profit_asset: f.profit_asset,
            profit_amount: f.profit_amount,
            witness: f
                .witness
                .iter()
                .map(|&i| WitnessEntry {
                    index: i,
                    summary: actions.get(i).map(|a| a.to_string()).unwrap_or_default(),
                })
                .collect(),
            rule_trace: f.rule_trace.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let victim = self
            .victim
            .map(|v| v.to_string())
            .unwrap_or_else(|| "-".into());
        let witness: Vec<String> = self
            .witness
            .iter()
            .map(|w| format!("#{} {}", w.index, w.summary))
            .collect();
        format!(
            "{} {} attacker={} pool={} victim={} profit={} {} witness=[{}]",
            self.bundle_id,
            self.kind,
            self.attacker,
            self.pool,
            victim,
            self.profit_amount,
            self.profit_asset,
            witness.join("; ")
        )
    }
}

/// Writes one line per finding.
pub fn write_findings<W: Write>(
    w: &mut W,
    findings: &[Finding],
    actions: &[DefiAction],
    format: ReportFormat,
) -> io::Result<()> {
    for f in findings {
        let rec = ReportRecord::new(f, actions);
        match format {
            ReportFormat::Jsonl => {
                serde_json::to_writer(&mut *w, &rec).map_err(io::Error::other)?;
                w.write_all(b"\n")?;
            }
            ReportFormat::Text => writeln!(w, "{}", rec.to_text())?,
        }
    }
    Ok(())
}
