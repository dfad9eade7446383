//! Columnar trace files and structured reports.
//!
//! Traces are comma-separated with a header line. Floats are written in
//! scientific notation with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::influence::{InfluenceMap, InfluencePath};
use crate::learning::{BeliefRecord, LearningMode, MsdRecord, MsdTrace};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Splits a CSV document into data rows, checking the header.
fn data_rows<'a>(
    path: &Path,
    text: &'a str,
    header: &str,
) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, IoError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => {
            return Err(parse_err(
                path,
                1,
                format!("expected header {header:?}, found {other:?}"),
            ))
        }
    }
    Ok(lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i + 2, l.split(',').collect())))
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    cols: &[&str],
    idx: usize,
) -> Result<T, IoError> {
    cols.get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing column {idx}")))?
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad value in column {idx}")))
}

pub const MSD_HEADER: &str = "step,msd,mode,theta_hat,event";

pub fn msd_trace_csv(trace: &MsdTrace) -> String {
    let mut out = String::from(MSD_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            format_float(r.msd),
            trace.mode.as_str(),
            r.theta_hat,
            r.event.as_deref().unwrap_or("")
        );
    }
    out
}

pub fn read_msd_trace(path: &Path) -> Result<MsdTrace, IoError> {
    let text = read_file(path)?;
    let mut mode = LearningMode::Known;
    let mut records = Vec::new();
    for (line, cols) in data_rows(path, &text, MSD_HEADER)? {
        mode = match cols.get(2).copied() {
            Some("known") => LearningMode::Known,
            Some("vote") => LearningMode::Vote,
            _ => return Err(parse_err(path, line, "unknown mode")),
        };
        let event = cols.get(4).filter(|e| !e.is_empty()).map(|e| e.to_string());
        records.push(MsdRecord {
            step: field(path, line, &cols, 0)?,
            msd: field(path, line, &cols, 1)?,
            theta_hat: field(path, line, &cols, 3)?,
            event,
        });
    }
    Ok(MsdTrace { mode, records })
}

/// Two learners on one observation stream, side by side.
pub const COMPARE_HEADER: &str = "step,msd_known,msd_vote,theta_hat,event";

pub fn compare_csv(known: &MsdTrace, vote: &MsdTrace) -> String {
    let mut out = String::from(COMPARE_HEADER);
    out.push('\n');
    for (k, v) in known.records.iter().zip(&vote.records) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            k.step,
            format_float(k.msd),
            format_float(v.msd),
            k.theta_hat,
            k.event.as_deref().unwrap_or("")
        );
    }
    out
}

/// One row per step: `step,theta_hat,psi_<agent>_<hypothesis>...`.
pub fn belief_trace_csv(records: &[BeliefRecord], n: usize, theta_count: usize) -> String {
    let mut out = String::from("step,theta_hat");
    for k in 0..n {
        for t in 0..theta_count {
            let _ = write!(out, ",psi_{k}_{t}");
        }
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{}", r.step, r.theta_hat);
        for k in 0..n {
            for t in 0..theta_count {
                out.push(',');
                out.push_str(&format_float(r.psi[(k, t)]));
            }
        }
        out.push('\n');
    }
    out
}

pub const MAP_HEADER: &str = "source,raw,normalized";

pub fn influence_map_csv(map: &InfluenceMap) -> String {
    let mut out = String::from(MAP_HEADER);
    out.push('\n');
    for s in &map.sources {
        let _ = writeln!(
            out,
            "{},{},{}",
            s.source,
            format_float(s.raw),
            format_float(s.normalized)
        );
    }
    out
}

pub const PATH_HEADER: &str = "rank,source,target,hops,score,nodes";

/// Node sequences are `-`-joined, e.g. `3-7-0`.
pub fn paths_csv(paths: &[InfluencePath]) -> String {
    let mut out = String::from(PATH_HEADER);
    out.push('\n');
    for (rank, p) in paths.iter().enumerate() {
        let nodes: Vec<String> = p.nodes.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            rank + 1,
            p.source(),
            p.target(),
            p.hops(),
            format_float(p.score),
            nodes.join("-")
        );
    }
    out
}

pub fn read_paths(path: &Path) -> Result<Vec<InfluencePath>, IoError> {
    let text = read_file(path)?;
    let mut paths = Vec::new();
    for (line, cols) in data_rows(path, &text, PATH_HEADER)? {
        let nodes = cols
            .get(5)
            .ok_or_else(|| parse_err(path, line, "missing nodes"))?
            .split('-')
            .map(|v| v.parse().map_err(|_| parse_err(path, line, "bad node")))
            .collect::<Result<Vec<usize>, _>>()?;
        paths.push(InfluencePath {
            nodes,
            score: field(path, line, &cols, 4)?,
        });
    }
    Ok(paths)
}

/// Influence report: per-source influence on a target and its strongest
/// incoming paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub target: usize,
    pub d: usize,
    pub delta: f64,
    pub map: InfluenceMap,
    pub top_paths: Vec<InfluencePath>,
}

impl InfluenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(path: &Path, text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| parse_err(path, e.line(), e.to_string()))
    }
}
