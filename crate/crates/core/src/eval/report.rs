use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::closed_loop::SuccessTable;
use super::metrics::{MetricReport, REPORT_VERSION};
use crate::error::{Error, Result};

/// Everything `eval` writes: offline metrics and optional closed-loop results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub metrics: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_loop: Option<SuccessTable>,
}

impl Report {
    pub fn new(metrics: MetricReport, closed_loop: Option<SuccessTable>) -> Self {
        Report {
            format_version: REPORT_VERSION,
            metrics,
            closed_loop,
        }
    }
}

const ABSENT: &str = "n/a";

fn ticks(v: Option<f64>) -> String {
    v.map_or(ABSENT.to_string(), |x| format!("{x:.2}"))
}

fn percent(v: Option<f64>) -> String {
    v.map_or(ABSENT.to_string(), |x| format!("{:.2}%", 100.0 * x))
}

/// Aligned two-column table, one row per metric.
pub fn render_table(r: &Report) -> String {
    let m = &r.metrics;
    let mut rows: Vec<(String, String)> = vec![
        ("RMSE (overall)".into(), ticks(Some(m.rmse_overall))),
        ("RMSE (approach)".into(), ticks(m.rmse_approach)),
        ("RMSE (transport)".into(), ticks(m.rmse_transport)),
        ("Endpoint mean".into(), ticks(Some(m.endpoint_mean))),
        ("Endpoint median".into(), ticks(Some(m.endpoint_median))),
    ];
    for (name, v) in ["x_L", "y_L", "x_R", "y_R"].iter().zip(m.rmse_per_axis) {
        rows.push((format!("RMSE ({name})"), ticks(Some(v))));
    }
    rows.push(("Direction accuracy".into(), percent(m.direction_accuracy)));
    rows.push((
        "Mean cosine".into(),
        m.mean_cosine
            .map_or(ABSENT.to_string(), |c| format!("{c:.4}")),
    ));
    rows.push((
        "Phase Acc. (overall)".into(),
        percent(Some(m.phase_acc_overall)),
    ));
    rows.push((
        "Phase Acc. (approach)".into(),
        percent(m.phase_acc_approach),
    ));
    rows.push((
        "Phase Acc. (transport)".into(),
        percent(m.phase_acc_transport),
    ));
    rows.push(("Samples".into(), m.n_samples.to_string()));
    rows.push(("Moving pairs".into(), m.n_moving.to_string()));
    if let Some(cl) = &r.closed_loop {
        for row in &cl.rows {
            rows.push((
                format!("Approach success ({})", row.task),
                percent(Some(row.approach_success)),
            ));
            rows.push((
                format!("Transport success ({})", row.task),
                percent(Some(row.transport_success)),
            ));
        }
    }
    let width = rows
        .iter()
        .map(|(k, _)| k.chars().count())
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v:>10}");
    }
    out
}

/// Writes `path` as JSON and the table next to it with a `.txt` extension.
pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let txt = path.with_extension("txt");
    fs::write(&txt, render_table(report)).map_err(|e| Error::io(&txt, e))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: Report = serde_json::from_str(&text)?;
    if r.format_version != REPORT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported report version {}",
            r.format_version
        )));
    }
    Ok(r)
}
