//! Structured metrics: one JSON record per line, one line per round, plus a
//! final summary record. A CSV exporter flattens the round records for
//! plotting.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

/// Per-round record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// Clients missing from the masked-input survivor set.
    pub dropped: usize,
    /// Sizes of the nested survivor sets `U1..U6`.
    pub survivor_counts: [usize; 6],
    /// Server-side abort reason, if the round died.
    pub abort: Option<String>,
    /// Honest clients that aborted this round.
    pub client_aborts: usize,
    /// Hex digest of the released aggregate.
    pub aggregate_checksum: Option<String>,
    /// Post-removal noise level predicted by the plan.
    pub analytic_variance: Option<f64>,
    /// Sample variance of (decoded aggregate - plaintext input sum).
    pub empirical_variance: Option<f64>,
    /// Cumulative translated privacy loss after this round.
    pub cumulative_epsilon: Option<f64>,
    /// True when stage-5 losses forced an under-removed release.
    pub overspent: bool,
    /// Simulated network/stage seconds for this round.
    pub simulated_seconds: f64,
    /// Pipelined completion time for this round's aggregation, when the
    /// planner is on.
    pub pipeline_completion: Option<f64>,
}

/// Final record of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rounds_completed: u32,
    pub rounds_aborted: u32,
    /// Target variance the rounds enforced (planned or configured).
    pub sigma_sq_star: Option<f64>,
    /// Terminal cumulative privacy loss.
    pub terminal_epsilon: Option<f64>,
    /// Completed rounds whose empirical residual variance fell inside a
    /// five-standard-error band around the analytic level.
    pub variance_band_passes: u32,
    pub variance_band_checks: u32,
    pub variance_verified: Option<bool>,
    pub pipeline: Option<PipelineSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub chunks: u32,
    pub completion: f64,
    pub completion_single_chunk: f64,
    pub speedup: f64,
}

/// One line of the JSON-lines stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricsRecord {
    Round(RoundMetrics),
    Summary(ExperimentSummary),
}

impl MetricsRecord {
    pub fn write_line<W: Write>(&self, writer: &mut W) -> std::io::Result<()> {
        let line = serde_json::to_string(self).expect("metrics serialize");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")
    }
}

/// Flattens the round records of a JSON-lines stream into CSV.
pub fn export_csv<R: BufRead, W: Write>(reader: R, writer: W) -> std::io::Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record([
        "round",
        "dropped",
        "u1",
        "u2",
        "u3",
        "u4",
        "u5",
        "u6",
        "abort",
        "client_aborts",
        "analytic_variance",
        "empirical_variance",
        "cumulative_epsilon",
        "overspent",
        "simulated_seconds",
        "pipeline_completion",
    ])?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let MetricsRecord::Round(r) = record else {
            continue;
        };
        let opt_f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.write_record([
            r.round.to_string(),
            r.dropped.to_string(),
            r.survivor_counts[0].to_string(),
            r.survivor_counts[1].to_string(),
            r.survivor_counts[2].to_string(),
            r.survivor_counts[3].to_string(),
            r.survivor_counts[4].to_string(),
            r.survivor_counts[5].to_string(),
            r.abort.clone().unwrap_or_default(),
            r.client_aborts.to_string(),
            opt_f(r.analytic_variance),
            opt_f(r.empirical_variance),
            opt_f(r.cumulative_epsilon),
            r.overspent.to_string(),
            r.simulated_seconds.to_string(),
            opt_f(r.pipeline_completion),
        ])?;
    }
    csv.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_round() -> RoundMetrics {
        RoundMetrics {
            round: 1,
            dropped: 1,
            survivor_counts: [4, 4, 3, 3, 3, 0],
            abort: None,
            client_aborts: 0,
            aggregate_checksum: Some("aabbcc".into()),
            analytic_variance: Some(1.0),
            empirical_variance: Some(0.97),
            cumulative_epsilon: Some(0.4),
            overspent: false,
            simulated_seconds: 0.0,
            pipeline_completion: None,
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let record = MetricsRecord::Round(sample_round());
        let mut buf = Vec::new();
        record.write_line(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("{\"record\":\"round\""));
        let back: MetricsRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, record);
    }

    #[test]
    fn csv_export_flattens_rounds() {
        let mut jsonl = Vec::new();
        MetricsRecord::Round(sample_round()).write_line(&mut jsonl).unwrap();
        MetricsRecord::Summary(ExperimentSummary {
            rounds_completed: 1,
            rounds_aborted: 0,
            sigma_sq_star: Some(1.0),
            terminal_epsilon: Some(0.4),
            variance_band_passes: 1,
            variance_band_checks: 1,
            variance_verified: Some(true),
            pipeline: None,
        })
        .write_line(&mut jsonl)
        .unwrap();
        let mut csv = Vec::new();
        export_csv(std::io::Cursor::new(jsonl), &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 2); // header + one round, summary skipped
        assert!(lines[1].starts_with("1,1,4,4,3,3,3,0"));
    }
}
