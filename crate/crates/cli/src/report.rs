//! Output files: line-delimited metrics and audit logs, CSV summaries.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::run::{AuditRecord, EvalMetrics, MetricsReport};

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics(path: &Path, history: &[MetricsReport]) -> Result<()> {
    write_jsonl(path, history)
}

pub fn write_audit(path: &Path, audit: &[AuditRecord]) -> Result<()> {
    write_jsonl(path, audit)
}

/// One row of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub seed: u64,
    pub frames: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub token_accuracy: f64,
    pub exact_match: f64,
    pub routing_rate: f64,
    pub routing_rate_high: f64,
    pub routing_rate_low: f64,
    pub mean_frame_set: f64,
    pub mean_token_fraction: f64,
    pub final_train_loss: f64,
}

impl SummaryRow {
    pub fn new(label: &str, seed: u64, frames: usize, m: &EvalMetrics, train_loss: f64) -> Self {
        Self {
            label: label.into(),
            seed,
            frames,
            bleu1: m.bleu[0],
            bleu2: m.bleu[1],
            bleu3: m.bleu[2],
            bleu4: m.bleu[3],
            token_accuracy: m.token_accuracy,
            exact_match: m.exact_match,
            routing_rate: m.routing_rate,
            routing_rate_high: m.routing_rate_high,
            routing_rate_low: m.routing_rate_low,
            mean_frame_set: m.mean_frame_set,
            mean_token_fraction: m.mean_token_fraction,
            final_train_loss: train_loss,
        }
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> EvalMetrics {
        EvalMetrics {
            videos: 2,
            loss: 0.5,
            token_accuracy: 0.75,
            bleu: [1.0, 0.5, 0.25, 0.125],
            routing_rate: 0.5,
            routing_rate_high: 1.0,
            routing_rate_low: 0.0,
            mean_frame_set: 6.5,
            mean_token_fraction: 0.6,
            exact_match: 0.5,
        }
    }

    #[test]
    fn summary_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![
            SummaryRow::new("baseline", 0, 2, &metrics(), 0.1),
            SummaryRow::new("mams", 0, 16, &metrics(), 0.2),
        ];
        write_summary(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("label,seed,frames,bleu1"));
        assert!(lines[2].starts_with("mams,0,16,1.0,0.5,0.25,0.125"));
    }

    #[test]
    fn metrics_are_line_delimited() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let recs = vec![
            MetricsReport {
                epoch: 0,
                steps: 3,
                train_loss: 2.0,
                train_routing_rate: 0.5,
                train_mean_frame_set: 5.0,
                eval: None,
            },
            MetricsReport {
                epoch: 1,
                steps: 6,
                train_loss: 1.0,
                train_routing_rate: 0.5,
                train_mean_frame_set: 5.0,
                eval: Some(metrics()),
            },
        ];
        write_metrics(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let back: Vec<MetricsReport> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, recs);
    }
}
