//! JSON and CSV rendering of run results.

use std::path::Path;

use itsa_core::flops::{CostReport, Mechanism};
use itsa_core::gradcheck::GradCheckReport;
use serde::{Deserialize, Serialize};

use crate::ablate::AblationRow;
use crate::bench::BenchResult;
use crate::error::{BenchError, Result};
use crate::spec::Format;

pub const CSV_HEADER: [&str; 13] = [
    "mechanism",
    "T",
    "H",
    "W",
    "C",
    "c",
    "heads",
    "points",
    "levels",
    "steps",
    "flops_total",
    "latency_median_s",
    "latency_min_s",
];

/// Extra trailing columns of the ablation CSV.
pub const ABLATION_COLUMNS: [&str; 2] = ["axis", "setting"];

pub const GRADCHECK_HEADER: [&str; 6] = ["target", "seed", "group", "max_rel_error", "tolerance", "passed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "results", rename_all = "lowercase")]
pub enum Report {
    Bench(BenchResult),
    Flops(Vec<CostReport>),
    Gradcheck(Vec<GradCheckReport>),
    Ablation(Vec<AblationRow>),
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cost_row(r: &CostReport, min: Option<f64>) -> Vec<String> {
    let c = &r.config;
    let heads = match r.mechanism {
        Mechanism::Itsa => c.heads,
        Mechanism::Mhsa => c.mhsa_heads,
    };
    vec![
        r.mechanism.to_string(),
        c.tasks.to_string(),
        c.height.to_string(),
        c.width.to_string(),
        c.channels.to_string(),
        c.active_pe_channels().to_string(),
        heads.to_string(),
        c.points.to_string(),
        c.levels.to_string(),
        c.steps.to_string(),
        r.flops_total.to_string(),
        opt(r.latency_seconds),
        opt(min),
    ]
}

fn csv_error(e: impl std::fmt::Display) -> BenchError {
    BenchError::Resource(format!("cannot render CSV: {e}"))
}

pub fn render(report: &Report, format: Format) -> Result<String> {
    if format == Format::Json {
        return serde_json::to_string_pretty(report).map_err(|e| BenchError::Resource(e.to_string()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    match report {
        Report::Bench(b) => {
            w.write_record(CSV_HEADER).map_err(csv_error)?;
            for t in &b.timings {
                w.write_record(cost_row(&t.cost, Some(t.latency_min_s))).map_err(csv_error)?;
            }
        }
        Report::Flops(rs) => {
            w.write_record(CSV_HEADER).map_err(csv_error)?;
            for r in rs {
                w.write_record(cost_row(r, None)).map_err(csv_error)?;
            }
        }
        Report::Ablation(rows) => {
            w.write_record(CSV_HEADER.iter().chain(&ABLATION_COLUMNS)).map_err(csv_error)?;
            for row in rows {
                let mut rec = cost_row(&row.cost, None);
                rec.push(row.axis.clone());
                rec.push(row.setting.clone());
                w.write_record(rec).map_err(csv_error)?;
            }
        }
        Report::Gradcheck(rs) => {
            w.write_record(GRADCHECK_HEADER).map_err(csv_error)?;
            for r in rs {
                for (group, err) in &r.groups {
                    w.write_record([
                        r.target.clone(),
                        r.seed.to_string(),
                        group.clone(),
                        err.to_string(),
                        r.tolerance.to_string(),
                        (*err < r.tolerance).to_string(),
                    ])
                    .map_err(csv_error)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

/// Writes to `path`, or to stdout when no path is given.
pub fn emit_report(report: &Report, format: Format, path: Option<&Path>) -> Result<()> {
    let text = render(report, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| BenchError::Io { path: p.to_path_buf(), source }),
        None => {
            print!("{text}");
            if format == Format::Json {
                println!();
            }
            Ok(())
        }
    }
}
