//! JSON-lines transition records and the expert-dataset manifest.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionRecord {
    /// Identifies the instance, usually its file name.
    pub problem_ref: String,
    pub step: usize,
    pub action: Action,
    pub reward: f64,
    pub terminal: bool,
    pub feasible: bool,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn write_records<W: Write>(mut out: W, records: &[TransitionRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses JSON-lines text; blank lines are skipped. Steps must count up from
/// zero within each `problem_ref` run and rewards must be finite.
pub fn parse_records(text: &str) -> Result<Vec<TransitionRecord>, TrajectoryError> {
    read_records(text.as_bytes())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<TransitionRecord>, TrajectoryError> {
    let mut out: Vec<TransitionRecord> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TransitionRecord = serde_json::from_str(&line)
            .map_err(|source| TrajectoryError::Parse { line: line_no, source })?;
        if !rec.reward.is_finite() {
            return Err(TrajectoryError::Invalid {
                line: line_no,
                reason: "reward must be finite".into(),
            });
        }
        let expected = match out.last() {
            Some(prev) if prev.problem_ref == rec.problem_ref && !prev.terminal => prev.step + 1,
            _ => 0,
        };
        if rec.step != expected {
            return Err(TrajectoryError::Invalid {
                line: line_no,
                reason: format!("expected step {expected}, found {}", rec.step),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Splits records into episodes (each ends at a terminal record or at a
/// change of `problem_ref`).
pub fn episodes(records: &[TransitionRecord]) -> Vec<&[TransitionRecord]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..records.len() {
        let last = i + 1 == records.len();
        if records[i].terminal || last || records[i + 1].step == 0 {
            out.push(&records[start..=i]);
            start = i + 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance: String,
    pub solved: bool,
    pub proven_optimal: bool,
    pub makespan: Option<f64>,
}

/// Index of an expert dataset: one entry per instance file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub trajectories: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
