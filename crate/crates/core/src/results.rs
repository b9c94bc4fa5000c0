//! Results files: the per-round CSV, its JSON mirror, and the aggregated
//! accuracy curves.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alcore::RoundLog;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str = "method,repeat,round,labeled_count,accuracy,wall_time_s";
pub const CURVES_HEADER: &str = "method,round,labeled_count,mean_accuracy,std_accuracy,repeats";

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub repeat: usize,
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub wall_time_s: f64,
}

impl From<&RoundLog> for ResultRow {
    fn from(l: &RoundLog) -> Self {
        ResultRow {
            method: l.method.name().to_string(),
            repeat: l.repeat,
            round: l.round,
            labeled_count: l.labeled_count,
            accuracy: l.test_accuracy,
            wall_time_s: l.wall_time_seconds,
        }
    }
}

fn sorted_rows(logs: &[RoundLog]) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = logs.iter().map(ResultRow::from).collect();
    rows.sort_by(|a, b| (&a.method, a.repeat, a.round).cmp(&(&b.method, b.repeat, b.round)));
    rows
}

/// Rows sorted by (method, repeat, round). Floats use the shortest
/// representation that round-trips.
pub fn results_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in sorted_rows(logs) {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.repeat, r.round, r.labeled_count, r.accuracy, r.wall_time_s
        ));
    }
    out
}

#[derive(Serialize)]
struct JsonMirror<'a> {
    config: &'a ExperimentConfig,
    rows: Vec<ResultRow>,
}

/// The results plus the fully resolved config.
pub fn results_json(cfg: &ExperimentConfig, logs: &[RoundLog]) -> String {
    let mirror = JsonMirror {
        config: cfg,
        rows: sorted_rows(logs),
    };
    let mut s = serde_json::to_string_pretty(&mirror).expect("results serialise");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Parses a results CSV; the header must match exactly.
pub fn parse_results<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::format("line 1", e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RESULTS_HEADER {
        return Err(Error::format(
            "line 1",
            format!("expected header `{RESULTS_HEADER}`, found `{header}`"),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<ResultRow>() {
        let row = rec.map_err(|e| {
            let loc = e
                .position()
                .map_or_else(|| "unknown position".into(), |p| format!("line {}", p.line()));
            Error::format(loc, e.to_string())
        })?;
        if !(0.0..=1.0).contains(&row.accuracy) {
            return Err(Error::format(
                format!("row {}", rows.len() + 2),
                format!("accuracy {} outside [0, 1]", row.accuracy),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_results(std::io::BufReader::new(f)).map_err(|e| e.context(path.display().to_string()))
}

/// Mean and population standard deviation of accuracy over repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub method: String,
    pub round: usize,
    pub labeled_count: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub repeats: usize,
}

/// Aggregates per (method, round). Repeats that disagree on the labeled
/// count of a round are rejected.
pub fn curves(rows: &[ResultRow]) -> Result<Vec<CurvePoint>> {
    let mut groups: BTreeMap<(&str, usize), (usize, Vec<(usize, f64)>)> = BTreeMap::new();
    for r in rows {
        let g = groups
            .entry((r.method.as_str(), r.round))
            .or_insert_with(|| (r.labeled_count, Vec::new()));
        if g.0 != r.labeled_count {
            return Err(Error::format(
                format!("method {}, round {}", r.method, r.round),
                format!("labeled counts differ across repeats ({} vs {})", g.0, r.labeled_count),
            ));
        }
        g.1.push((r.repeat, r.accuracy));
    }
    Ok(groups
        .into_iter()
        .map(|((method, round), (labeled_count, mut accs))| {
            accs.sort_by_key(|&(rep, _)| rep);
            let n = accs.len() as f64;
            let mean = accs.iter().map(|a| a.1).sum::<f64>() / n;
            let var = accs.iter().map(|a| (a.1 - mean) * (a.1 - mean)).sum::<f64>() / n;
            CurvePoint {
                method: method.to_string(),
                round,
                labeled_count,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
                repeats: accs.len(),
            }
        })
        .collect())
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.method, p.round, p.labeled_count, p.mean_accuracy, p.std_accuracy, p.repeats
        ));
    }
    out
}
