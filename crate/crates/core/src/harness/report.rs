use serde::{Deserialize, Serialize};

use super::config::OptimizerKind;
use super::experiment::ChunkChoice;
use crate::error::{Error, Result};

/// Outcome of the oracle cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verification {
    Passed {
        max_param_divergence: f64,
        max_momentum_divergence: f64,
        tolerance: f64,
    },
    Failed {
        max_param_divergence: f64,
        max_momentum_divergence: f64,
        tolerance: f64,
    },
    /// Too many parameters for a numeric run; only shapes were simulated.
    Unverified,
}

impl Verification {
    pub fn checked(params: f64, momenta: f64, tolerance: f64) -> Self {
        if params <= tolerance && momenta <= tolerance {
            Verification::Passed {
                max_param_divergence: params,
                max_momentum_divergence: momenta,
                tolerance,
            }
        } else {
            Verification::Failed {
                max_param_divergence: params,
                max_momentum_divergence: momenta,
                tolerance,
            }
        }
    }

    /// False only for a failed check; unverified rows do not fail the gate.
    pub fn passed(&self) -> bool {
        !matches!(self, Verification::Failed { .. })
    }

    pub fn is_verified(&self) -> bool {
        matches!(self, Verification::Passed { .. })
    }

    pub fn max_param_divergence(&self) -> Option<f64> {
        match self {
            Verification::Passed { max_param_divergence, .. } | Verification::Failed { max_param_divergence, .. } => {
                Some(*max_param_divergence)
            }
            Verification::Unverified => None,
        }
    }

    fn cell(&self) -> String {
        match self {
            Verification::Passed { max_param_divergence, .. } => format!("ok ({max_param_divergence:.1e})"),
            Verification::Failed { max_param_divergence, .. } => format!("FAILED ({max_param_divergence:.1e})"),
            Verification::Unverified => "unverified".into(),
        }
    }
}

/// One configuration's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub optimizer: OptimizerKind,
    pub pipeline: bool,
    /// `None` for Distributed Muon, which has no owner assignment.
    pub sort_by_flops: Option<bool>,
    /// `None` when the step runs as a single chunk.
    pub chunk_size: Option<usize>,
    pub ranks: usize,
    pub params: usize,
    pub steps: usize,
    pub step_time_ms: f64,
    /// Largest transient optimizer memory on any rank.
    pub peak_mem_mb: f64,
    pub peak_mem_per_rank_mb: Vec<f64>,
    /// Newton-Schulz FLOPs of one step, each parameter counted once.
    pub useful_flops_per_step: u64,
    pub tflops_per_rank: f64,
    pub collectives: usize,
    pub ns_compute_events: usize,
    /// `(max - min) / mean` of per-rank Newton-Schulz FLOPs.
    pub rank_flops_imbalance: f64,
    pub verification: Verification,
}

impl ReportRow {
    pub fn label(&self) -> &'static str {
        match self.optimizer {
            OptimizerKind::Distributed => "Distributed Muon",
            OptimizerKind::Parallel => "Parallel Muon",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report rows serialize")
    }
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "O",
        Some(false) => "X",
        None => "--",
    }
}

/// `digits` decimals for values of 1 or more; small values keep three
/// significant digits so tiny models do not print as zero.
fn magnitude(v: f64, digits: usize) -> String {
    if v == 0.0 || v.abs() >= 1.0 {
        format!("{v:.digits$}")
    } else {
        let d = (2 - v.abs().log10().floor() as i64).max(digits as i64) as usize;
        format!("{v:.d$}")
    }
}

/// Render rows as an aligned text table.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = [
        "Configuration",
        "Pipelining",
        "Sort Param.",
        "Chunk Size",
        "Time (ms)",
        "Peak Mem (MB)",
        "TFLOPS/rank",
        "Oracle",
    ];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            let distributed = r.optimizer == OptimizerKind::Distributed;
            [
                r.label().to_string(),
                if distributed { "--".into() } else { flag(Some(r.pipeline)).into() },
                flag(r.sort_by_flops).into(),
                r.chunk_size.map_or("--".into(), |c| c.to_string()),
                format!("{:.2}", r.step_time_ms),
                magnitude(r.peak_mem_mb, 0),
                magnitude(r.tflops_per_rank, 1),
                r.verification.cell(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: Vec<&str>| {
        let mut out = String::new();
        for (i, (c, w)) in cols.iter().zip(widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            // Text columns left-aligned, numbers right-aligned.
            if (4..7).contains(&i) {
                out.push_str(&format!("{c:>w$}"));
            } else {
                out.push_str(&format!("{c:<w$}"));
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// A set of rows written together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.verification.passed())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_table(&self) -> String {
        render_table(&self.rows)
    }

    /// Write `<path>` as JSON and the table next to it with a `.txt`
    /// extension.
    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        write_pair(path, &self.to_json(), &self.to_table())
    }
}

fn write_pair(path: &std::path::Path, json: &str, table: &str) -> Result<()> {
    std::fs::write(path, format!("{json}\n")).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let txt = path.with_extension("txt");
    std::fs::write(&txt, table).map_err(|e| Error::Io(format!("{}: {e}", txt.display())))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub chunk: ChunkChoice,
    pub row: ReportRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub fastest: ChunkChoice,
    pub leanest: ChunkChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub summary: SweepSummary,
}

impl SweepReport {
    /// `choices` and `rows` are parallel; ties go to the earlier entry.
    pub fn new(choices: Vec<ChunkChoice>, rows: Vec<ReportRow>) -> Self {
        assert!(!rows.is_empty() && choices.len() == rows.len());
        let argmin = |key: fn(&ReportRow) -> f64| {
            let mut best = 0;
            for (i, r) in rows.iter().enumerate() {
                if key(r) < key(&rows[best]) {
                    best = i;
                }
            }
            choices[best]
        };
        let summary = SweepSummary {
            fastest: argmin(|r| r.step_time_ms),
            leanest: argmin(|r| r.peak_mem_mb),
        };
        let entries = choices
            .into_iter()
            .zip(rows)
            .map(|(chunk, row)| SweepEntry { chunk, row })
            .collect();
        SweepReport { entries, summary }
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.row.verification.passed())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<ReportRow> = self.entries.iter().map(|e| e.row.clone()).collect();
        let name = |c: ChunkChoice| match c {
            ChunkChoice::Size(n) => n.to_string(),
            ChunkChoice::All => "all".into(),
        };
        format!(
            "{}\nfastest chunk size: {}\nlowest peak memory: {}\n",
            render_table(&rows),
            name(self.summary.fastest),
            name(self.summary.leanest)
        )
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        write_pair(path, &self.to_json(), &self.to_table())
    }
}
