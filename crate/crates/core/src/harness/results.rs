use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// One line of `results.jsonl`: a metric report with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub experiment: String,
    pub command: String,
    pub method: String,
    pub train_source: Option<String>,
    pub dataset: String,
    pub fold: Option<usize>,
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
    pub test_hash: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

/// Per-command summary written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub checkpoint_hash: Option<String>,
    pub results: Vec<ResultLine>,
    /// Metrics requested but not applicable to a method.
    pub skipped: Vec<String>,
    pub wall_clock_s: f64,
    pub trace_path: Option<String>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv { path: path.to_path_buf(), reason: e.to_string() }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::config(path.display().to_string(), e.to_string())))
        .collect()
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    experiment: &'a str,
    command: &'a str,
    method: &'a str,
    train_source: Option<&'a str>,
    dataset: &'a str,
    fold: Option<usize>,
    metric: &'a str,
    mean: f64,
    se: f64,
    s: usize,
    t: usize,
}

/// One row per report, without the per-dataset values.
pub fn write_summary_csv(path: &Path, lines: &[ResultLine]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if lines.is_empty() {
        w.write_record(["experiment", "command", "method", "train_source", "dataset", "fold", "metric", "mean", "se", "s", "t"])
            .map_err(|e| csv_err(path, e))?;
    }
    for l in lines {
        w.serialize(SummaryRow {
            experiment: &l.experiment,
            command: &l.command,
            method: &l.method,
            train_source: l.train_source.as_deref(),
            dataset: &l.dataset,
            fold: l.fold,
            metric: &l.report.metric,
            mean: l.report.mean,
            se: l.report.se,
            s: l.report.s,
            t: l.report.t,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Tidy long-format row for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub experiment: String,
    pub method: String,
    pub dataset: String,
    pub fold: Option<usize>,
    pub iter: Option<usize>,
    pub metric: String,
    pub value: f64,
}

pub const PLOT_HEADER: [&str; 7] = ["experiment", "method", "dataset", "fold", "iter", "metric", "value"];

/// One plot row (the mean) per result line.
pub fn plot_rows(lines: &[ResultLine]) -> Vec<PlotRow> {
    lines
        .iter()
        .map(|l| PlotRow {
            experiment: l.experiment.clone(),
            method: l.method.clone(),
            dataset: l.dataset.clone(),
            fold: l.fold,
            iter: None,
            metric: l.report.metric.clone(),
            value: l.report.mean,
        })
        .collect()
}

/// Writes rows as CSV; an empty slice gives a header-only file. Floats use
/// the shortest representation that parses back to the same value.
pub fn emit_plotdata(rows: &[PlotRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(PLOT_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plotdata(path: &Path) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plotdata_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        emit_plotdata(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        let rows = vec![
            PlotRow {
                experiment: "e".into(),
                method: "m".into(),
                dataset: "d,quoted".into(),
                fold: Some(2),
                iter: None,
                metric: "x".into(),
                value: 0.1 + 0.2,
            },
            PlotRow { experiment: "e".into(), method: "m".into(), dataset: "d".into(), fold: None, iter: Some(7), metric: "x".into(), value: -1e-300 },
        ];
        emit_plotdata(&rows[..1], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        emit_plotdata(&rows, &path).unwrap();
        assert_eq!(read_plotdata(&path).unwrap(), rows);
    }
}
