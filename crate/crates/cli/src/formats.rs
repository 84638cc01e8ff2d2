//! On-disk formats for run outputs.
//!
//! - `trace.csv`: one row per (step, agent) with true and estimated
//!   coordinates and the network error at that step; floats carry 17
//!   significant digits so reading a trace back is bit-faithful.
//! - `events.jsonl`: one update event per line, everything the chain
//!   analysis needs (weights, contact times, consumed estimates).
//! - `summary.json`: per-trial summaries plus the batch aggregate.
//! - `slices.json`: the slice decomposition and growth-bound report.
//! - `manifest.json`: effective config, artifact version, outputs, timing.

use crate::CliError;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use vch_core::agent::UpdateEvent;
use vch_core::ltv::{GrowthReport, SliceReport};
use vch_core::sim::{AgentSnapshot, AggregateStats, SimConfig, StepRecord, TrialSummary};
use vch_core::Vec2;

pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SLICES_FILE: &str = "slices.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// 17 significant digits: enough for f64 round trips.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trace(path: &Path, records: &[StepRecord]) -> Result<(), CliError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "k,agent_id,x_true,y_true,x_est,y_est,err")?;
    for rec in records {
        for (id, a) in rec.agents.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                rec.k,
                id,
                fmt(a.true_position.x),
                fmt(a.true_position.y),
                fmt(a.estimate.x),
                fmt(a.estimate.y),
                fmt(rec.error)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One parsed trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub agent_id: usize,
    pub true_position: Vec2,
    pub estimate: Vec2,
    pub err: f64,
}

/// A trace regrouped by step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceData {
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub k: u64,
    pub agents: Vec<AgentSnapshot>,
    /// The err column of every row of this step.
    pub errors: Vec<f64>,
}

impl TraceData {
    pub fn n_agents(&self) -> usize {
        self.steps.first().map_or(0, |s| s.agents.len())
    }

    pub fn truth_table(&self) -> Vec<Vec<Vec2>> {
        self.steps
            .iter()
            .map(|s| s.agents.iter().map(|a| a.true_position).collect())
            .collect()
    }

    pub fn estimate_table(&self) -> Vec<Vec<Vec2>> {
        self.steps
            .iter()
            .map(|s| s.agents.iter().map(|a| a.estimate).collect())
            .collect()
    }
}

pub fn read_trace(path: &Path) -> Result<TraceData, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| CliError::Runtime(format!("{}: empty file", path.display())))?;
    if header.trim() != "k,agent_id,x_true,y_true,x_est,y_est,err" {
        return Err(CliError::Runtime(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }

    let mut data = TraceData::default();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(CliError::Runtime(format!(
                "{}: row {} has {} fields",
                path.display(),
                idx + 2,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64, CliError> {
            fields[i].parse().map_err(|_| {
                CliError::Runtime(format!(
                    "{}: row {}: bad number `{}`",
                    path.display(),
                    idx + 2,
                    fields[i]
                ))
            })
        };
        let row = TraceRow {
            k: fields[0].parse().map_err(|_| {
                CliError::Runtime(format!(
                    "{}: row {}: bad step index",
                    path.display(),
                    idx + 2
                ))
            })?,
            agent_id: fields[1].parse().map_err(|_| {
                CliError::Runtime(format!("{}: row {}: bad agent id", path.display(), idx + 2))
            })?,
            true_position: Vec2::new(num(2)?, num(3)?),
            estimate: Vec2::new(num(4)?, num(5)?),
            err: num(6)?,
        };
        match data.steps.last_mut() {
            Some(step) if step.k == row.k => {
                if row.agent_id != step.agents.len() {
                    return Err(CliError::Runtime(format!(
                        "{}: row {}: agent ids out of order",
                        path.display(),
                        idx + 2
                    )));
                }
                step.agents.push(AgentSnapshot {
                    true_position: row.true_position,
                    estimate: row.estimate,
                });
                step.errors.push(row.err);
            }
            _ => data.steps.push(TraceStep {
                k: row.k,
                agents: vec![AgentSnapshot {
                    true_position: row.true_position,
                    estimate: row.estimate,
                }],
                errors: vec![row.err],
            }),
        }
    }
    for (i, step) in data.steps.iter().enumerate() {
        if step.k != i as u64 {
            return Err(CliError::Runtime(format!(
                "{}: step indices not contiguous at k = {}",
                path.display(),
                step.k
            )));
        }
        if step.agents.len() != data.steps[0].agents.len() {
            return Err(CliError::Runtime(format!(
                "{}: ragged agent count at k = {}",
                path.display(),
                step.k
            )));
        }
    }
    Ok(data)
}

pub fn write_events<'a>(
    path: &Path,
    events: impl Iterator<Item = &'a UpdateEvent>,
) -> Result<(), CliError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for ev in events {
        let line = serde_json::to_string(ev)
            .map_err(|e| CliError::Runtime(format!("event serialization: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<UpdateEvent>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut events = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: UpdateEvent = serde_json::from_str(&line)
            .map_err(|e| CliError::Runtime(format!("{}: line {}: {e}", path.display(), idx + 1)))?;
        events.push(ev);
    }
    Ok(events)
}

/// summary.json body: one entry per trial plus the aggregate for batches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub config: SimConfig,
    pub trials: Vec<TrialSummary>,
    pub aggregate: Option<AggregateStats>,
}

/// slices.json body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlicesDoc {
    /// None when the run did not track the chain.
    pub report: Option<SliceReport>,
    pub growth: Option<GrowthReport>,
}

/// manifest.json body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub seed: u64,
    pub config: SimConfig,
    pub outputs: Vec<String>,
    pub wall_clock_ms: u64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization: {e}")))?;
    std::fs::write(path, body + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_the_trace_format() {
        let values = [
            0.1,
            -5.000000000000001,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.2345678901234567e300,
            0.0,
        ];
        for v in values {
            let s = fmt(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }
}
