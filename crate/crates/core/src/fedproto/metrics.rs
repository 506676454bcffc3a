//! Metric log rows and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::kge::RankingMetrics;

pub const METRIC_CSV_HEADER: &str = "round,client,split,hits1,hits3,hits10,mrr,wall_seconds";

/// One evaluation of one client (or the `aggregate`) on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub client: String,
    pub split: String,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub wall_seconds: f64,
}

impl MetricRow {
    pub fn new(round: usize, client: impl Into<String>, split: &str, m: &RankingMetrics, wall_seconds: f64) -> Self {
        Self {
            round,
            client: client.into(),
            split: split.to_string(),
            hits1: m.hits1,
            hits3: m.hits3,
            hits10: m.hits10,
            mrr: m.mrr,
            wall_seconds,
        }
    }

    /// Metrics use shortest round-trip formatting so values re-parse exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.round, self.client, self.split, self.hits1, self.hits3, self.hits10, self.mrr, self.wall_seconds
        )
    }

    /// Same row without the timing column, for comparisons across runs.
    pub fn metrics_key(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round, self.client, self.split, self.hits1, self.hits3, self.hits10, self.mrr
        )
    }
}

pub fn write_metrics_csv(mut w: impl Write, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(w, "{METRIC_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}
