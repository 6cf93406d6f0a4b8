//! Per-round measurement records and their serialized forms: a CSV time
//! series, a JSON run summary, and a two-run comparison report.
//!
//! Floats are printed with 12 significant digits, enough that a parse
//! round-trip recovers them to well under 1e-9 relative error while the
//! byte output stays identical across platforms for identical runs. A
//! non-finite value anywhere in a record is a hard error at append time,
//! never silently written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What one aggregation round produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    /// Cumulative virtual seconds at the moment the round closed.
    pub virtual_time: f64,
    /// Training loss of the post-aggregation global model on the pooled
    /// training split.
    pub train_loss: f64,
    /// Holdout accuracy of the post-aggregation global model.
    pub eval_metric: f64,
    /// Mean fraction of the round its participants spent computing.
    pub utilization: f64,
    /// Local iterations each participating client ran; zero marks a client
    /// that sat the round out.
    pub per_client_e: Vec<u32>,
}

impl RoundMetrics {
    pub fn mean_e(&self) -> f64 {
        let active: Vec<u32> = self.per_client_e.iter().copied().filter(|e| *e > 0).collect();
        if active.is_empty() {
            return 0.0;
        }
        active.iter().map(|e| *e as f64).sum::<f64>() / active.len() as f64
    }
}

/// Append-only log of a whole run, tagged with the fingerprints of the
/// configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub config_fingerprint: String,
    pub task_fingerprint: String,
    pub strategy: String,
    pub rounds: Vec<RoundMetrics>,
}

impl MetricsLog {
    pub fn new(config_fingerprint: String, task_fingerprint: String, strategy: &str) -> Self {
        MetricsLog {
            config_fingerprint,
            task_fingerprint,
            strategy: strategy.to_string(),
            rounds: Vec::new(),
        }
    }

    /// Appends one round, enforcing the log invariants: consecutive round
    /// indices from zero, strictly increasing virtual time, finite values.
    pub fn push(&mut self, row: RoundMetrics) -> Result<()> {
        if row.round != self.rounds.len() as u64 {
            return Err(Error::InvalidArgument(format!(
                "round indices must be consecutive: expected {}, got {}",
                self.rounds.len(),
                row.round
            )));
        }
        for (name, v) in [
            ("virtual_time", row.virtual_time),
            ("train_loss", row.train_loss),
            ("eval_metric", row.eval_metric),
            ("utilization", row.utilization),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: match name {
                        "virtual_time" => "metrics virtual_time",
                        "train_loss" => "metrics train_loss",
                        "eval_metric" => "metrics eval_metric",
                        _ => "metrics utilization",
                    },
                });
            }
        }
        if let Some(prev) = self.rounds.last() {
            if row.virtual_time <= prev.virtual_time {
                return Err(Error::InvalidArgument(format!(
                    "virtual_time must increase: {} then {}",
                    prev.virtual_time, row.virtual_time
                )));
            }
        } else if row.virtual_time <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "virtual_time of the first round must be > 0, got {}",
                row.virtual_time
            )));
        }
        if row.per_client_e.is_empty() {
            return Err(Error::Empty("per_client_e"));
        }
        if !(0.0..=1.0 + 1e-9).contains(&row.utilization) {
            return Err(Error::InvalidArgument(format!(
                "utilization must lie in [0, 1], got {}",
                row.utilization
            )));
        }
        self.rounds.push(row);
        Ok(())
    }

    pub fn total_virtual_time(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.virtual_time)
    }

    // ── CSV time series ─────────────────────────────────────────────────

    /// One header plus one row per round, `\n` line endings, fields quoted
    /// per CSV convention when they would need it (ours never do).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("round,virtual_time,train_loss,eval_metric,utilization,mean_E\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.round,
                fmt_sig(r.virtual_time),
                fmt_sig(r.train_loss),
                fmt_sig(r.eval_metric),
                fmt_sig(r.utilization),
                fmt_sig(r.mean_e()),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    // ── JSON summary ────────────────────────────────────────────────────

    pub fn summary(&self) -> Result<RunSummary> {
        let last = self.rounds.last().ok_or(Error::Empty("metrics log"))?;
        let n = self.rounds.len() as f64;
        Ok(RunSummary {
            schema: 1,
            config_fingerprint: self.config_fingerprint.clone(),
            task_fingerprint: self.task_fingerprint.clone(),
            strategy: self.strategy.clone(),
            rounds: self.rounds.len() as u64,
            total_virtual_time: last.virtual_time,
            mean_round_time: last.virtual_time / n,
            final_train_loss: last.train_loss,
            final_eval_metric: last.eval_metric,
            mean_utilization: self.rounds.iter().map(|r| r.utilization).sum::<f64>() / n,
            mean_e: self.rounds.iter().map(|r| r.mean_e()).sum::<f64>() / n,
        })
    }

    pub fn write_summary(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary()?)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Roll-up of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: u32,
    pub config_fingerprint: String,
    pub task_fingerprint: String,
    pub strategy: String,
    pub rounds: u64,
    pub total_virtual_time: f64,
    pub mean_round_time: f64,
    pub final_train_loss: f64,
    pub final_eval_metric: f64,
    pub mean_utilization: f64,
    pub mean_e: f64,
}

/// One parsed CSV row. The CSV carries the per-round mean of the local
/// iteration counts rather than the full per-client vector, so parsing a
/// file back recovers this reduced form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub round: u64,
    pub virtual_time: f64,
    pub train_loss: f64,
    pub eval_metric: f64,
    pub utilization: f64,
    pub mean_e: f64,
}

/// Parses text produced by [`MetricsLog::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::MetricsParse("empty CSV".into()))?;
    if header.trim_end() != "round,virtual_time,train_loss,eval_metric,utilization,mean_E" {
        return Err(Error::MetricsParse(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::MetricsParse(format!(
                "row {} has {} fields, expected 6",
                i + 2,
                fields.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            fields[j]
                .parse::<f64>()
                .map_err(|e| Error::MetricsParse(format!("row {}: {e}: {:?}", i + 2, fields[j])))
        };
        rows.push(CsvRow {
            round: fields[0]
                .parse::<u64>()
                .map_err(|e| Error::MetricsParse(format!("row {}: {e}: {:?}", i + 2, fields[0])))?,
            virtual_time: num(1)?,
            train_loss: num(2)?,
            eval_metric: num(3)?,
            utilization: num(4)?,
            mean_e: num(5)?,
        });
    }
    Ok(rows)
}

// ── comparison ──────────────────────────────────────────────────────────

/// Baseline-versus-candidate report over two runs of the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema: u32,
    pub rounds: u64,
    pub baseline_strategy: String,
    pub candidate_strategy: String,
    pub baseline_mean_round_time: f64,
    pub candidate_mean_round_time: f64,
    /// `1 − candidate_mean_round_time / baseline_mean_round_time`;
    /// positive when the candidate finishes rounds faster.
    pub time_saving_fraction: f64,
    /// Candidate minus baseline, final round.
    pub final_train_loss_delta: f64,
    /// Candidate minus baseline, final round.
    pub final_eval_metric_delta: f64,
}

/// Compares two logs round for round. Both must cover the same number of
/// rounds and carry the same task fingerprint; otherwise the comparison
/// would not be apples to apples and the call fails.
pub fn compare(baseline: &MetricsLog, candidate: &MetricsLog) -> Result<ComparisonReport> {
    if baseline.rounds.is_empty() || candidate.rounds.is_empty() {
        return Err(Error::Empty("metrics log"));
    }
    if baseline.rounds.len() != candidate.rounds.len() {
        return Err(Error::Incompatible(format!(
            "round counts differ: baseline {} vs candidate {}",
            baseline.rounds.len(),
            candidate.rounds.len()
        )));
    }
    if baseline.task_fingerprint != candidate.task_fingerprint {
        return Err(Error::Incompatible(format!(
            "task fingerprints differ: baseline {} vs candidate {}",
            baseline.task_fingerprint, candidate.task_fingerprint
        )));
    }
    let b_last = baseline.rounds.last().unwrap();
    let c_last = candidate.rounds.last().unwrap();
    let n = baseline.rounds.len() as f64;
    let b_mean = b_last.virtual_time / n;
    let c_mean = c_last.virtual_time / n;
    Ok(ComparisonReport {
        schema: 1,
        rounds: baseline.rounds.len() as u64,
        baseline_strategy: baseline.strategy.clone(),
        candidate_strategy: candidate.strategy.clone(),
        baseline_mean_round_time: b_mean,
        candidate_mean_round_time: c_mean,
        time_saving_fraction: 1.0 - c_mean / b_mean,
        final_train_loss_delta: c_last.train_loss - b_last.train_loss,
        final_eval_metric_delta: c_last.eval_metric - b_last.eval_metric,
    })
}

/// Formats with 12 significant digits in scientific notation, the fixed
/// width that keeps emission byte-stable and parseable.
fn fmt_sig(v: f64) -> String {
    format!("{v:.11e}")
}
