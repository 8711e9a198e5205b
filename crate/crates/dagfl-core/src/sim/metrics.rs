//! Event logging, replay rows, and metric derivation.
//!
//! Every run emits an ordered list of [`ReplayRow`]s (serialized as JSON
//! lines) from which all summary metrics can be re-derived offline, plus a
//! simpler per-event metrics CSV.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One line of the metrics CSV: `time,client,epoch,event,accuracy`.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub time: f64,
    pub client: u64,
    pub epoch: u64,
    pub event: &'static str,
    pub accuracy: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("time,client,epoch,event,accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.time, r.client, r.epoch, r.event, r.accuracy
        );
    }
    out
}

/// One line of the replay log. The log is sufficient to rebuild the ledger
/// (`genesis` + `upload` rows) and every summary metric offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReplayRow {
    Genesis {
        time: f64,
        seq: u64,
        client_id: u64,
        signature: Vec<f64>,
        model_accuracy: f64,
        current_epoch: u64,
        validation_node_id: u64,
        timestamp: f64,
        digest: String,
    },
    Bootstrap {
        time: f64,
        seq: u64,
        client: u64,
        val_accuracy: f64,
        test_accuracy: f64,
    },
    Selection {
        time: f64,
        seq: u64,
        client: u64,
        epoch: u64,
        reachable_pool: usize,
        unreachable_pool: usize,
        quota_reachable: usize,
        picked_reachable: usize,
        picked_unreachable: usize,
        chosen: Vec<u64>,
        evaluations: usize,
    },
    Upload {
        time: f64,
        seq: u64,
        client: u64,
        node_id: u64,
        parents: Vec<u64>,
        signature: Vec<f64>,
        model_accuracy: f64,
        current_epoch: u64,
        validation_node_id: u64,
        selection_start: f64,
        val_accuracy: f64,
        test_accuracy: f64,
        mean_val_accuracy: f64,
        mean_test_accuracy: f64,
    },
    Terminate {
        time: f64,
        seq: u64,
        reason: String,
    },
}

impl ReplayRow {
    pub fn time(&self) -> f64 {
        match self {
            ReplayRow::Genesis { time, .. }
            | ReplayRow::Bootstrap { time, .. }
            | ReplayRow::Selection { time, .. }
            | ReplayRow::Upload { time, .. }
            | ReplayRow::Terminate { time, .. } => *time,
        }
    }
}

pub fn replay_jsonl(rows: &[ReplayRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("replay serialization"));
        out.push('\n');
    }
    out
}

pub fn parse_replay(text: &str) -> Result<Vec<ReplayRow>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// What ended the run.
pub const TERMINATED_TARGET: &str = "target-accuracy";
pub const TERMINATED_PATIENCE: &str = "patience";
pub const TERMINATED_MAX_ITERS: &str = "max-iterations";

/// Summary metrics of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    /// Simulated seconds until mean client test accuracy first reached the
    /// target; `None` when no target was set or it was never reached.
    pub time_to_target: Option<f64>,
    pub final_mean_accuracy: f64,
    pub uploads_per_sec: f64,
    pub mean_latency: f64,
    pub terminated_by: String,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serialization")
    }
}

/// Derives the summary from a replay log. `target` controls the
/// time-to-target measurement over mean client test accuracy.
pub fn collect_metrics(rows: &[ReplayRow], target: Option<f64>) -> RunSummary {
    let mut uploads = 0u64;
    let mut latency_total = 0.0;
    let mut final_mean = f64::NAN;
    let mut time_to_target = None;
    let mut terminated_by = TERMINATED_MAX_ITERS.to_string();
    let mut end_time = 0.0f64;
    let mut bootstrap_total = 0.0;
    let mut bootstrap_count = 0u64;
    for row in rows {
        end_time = end_time.max(row.time());
        match row {
            ReplayRow::Bootstrap { test_accuracy, .. } => {
                bootstrap_total += test_accuracy;
                bootstrap_count += 1;
            }
            ReplayRow::Upload {
                time,
                selection_start,
                mean_test_accuracy,
                ..
            } => {
                uploads += 1;
                latency_total += time - selection_start;
                final_mean = *mean_test_accuracy;
                if time_to_target.is_none() {
                    if let Some(t) = target {
                        if *mean_test_accuracy >= t {
                            time_to_target = Some(*time);
                        }
                    }
                }
            }
            ReplayRow::Terminate { reason, .. } => {
                terminated_by = reason.clone();
            }
            _ => {}
        }
    }
    if final_mean.is_nan() {
        final_mean = if bootstrap_count > 0 {
            bootstrap_total / bootstrap_count as f64
        } else {
            0.0
        };
    }
    RunSummary {
        time_to_target,
        final_mean_accuracy: final_mean,
        uploads_per_sec: if end_time > 0.0 {
            uploads as f64 / end_time
        } else {
            0.0
        },
        mean_latency: if uploads > 0 {
            latency_total / uploads as f64
        } else {
            0.0
        },
        terminated_by,
    }
}

/// Selection-trace CSV row (written when tracing is enabled): one line per
/// candidate tip per selection.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub time: f64,
    pub selector: u64,
    pub tip: u64,
    pub reachable: bool,
    pub tipc: f64,
    pub freshness: f64,
    pub similarity: Option<f64>,
    pub accuracy: Option<f64>,
    pub chosen: bool,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out =
        String::from("time,selector,tip,reachable,tipc,freshness,similarity,accuracy,chosen\n");
    for r in rows {
        let similarity = r.similarity.map(|v| v.to_string()).unwrap_or_default();
        let accuracy = r.accuracy.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.time,
            r.selector,
            r.tip,
            r.reachable,
            r.tipc,
            r.freshness,
            similarity,
            accuracy,
            r.chosen
        );
    }
    out
}
