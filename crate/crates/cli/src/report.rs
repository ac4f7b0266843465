//! Result persistence: CSV (canonical data interface), JSON (full result
//! set), and an SVG chart. File names follow `{mode}_{timestamp}_{seed}`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Format;
use crate::experiment::ResultSet;
use crate::svg::{line_chart, Series};
use crate::CliError;

pub const CSV_HEADER: &str = "iter,trial,mse_emp,v_ab,v_ba,gamma";
pub const CSV_AGG_HEADER: &str = "iter,mc_mean,mc_std,se_pred,rel_dev";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV body: one row per iteration per trial, then the aggregate block.
pub fn render_csv(result: &ResultSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_HEADER}");
    for trial in &result.trials {
        for row in &trial.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.iter, row.trial, row.mse_emp, row.v_ab, row.v_ba, row.gamma
            );
        }
    }
    let _ = writeln!(out, "# aggregate");
    let _ = writeln!(out, "{CSV_AGG_HEADER}");
    for row in &result.aggregate {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.iter,
            opt(row.mc_mean),
            opt(row.mc_std),
            opt(row.se_pred),
            opt(row.rel_dev)
        );
    }
    if let Some(sweep) = &result.sweep {
        let _ = writeln!(out, "# sweep axis={}", sweep.axis);
        let _ = writeln!(out, "axis_value,fp_count,attractor_mse,unique");
        for row in &sweep.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                row.axis_value, row.fp_count, row.attractor_mse, row.unique
            );
        }
    }
    out
}

fn render_svg(result: &ResultSet) -> Option<String> {
    let mc: Vec<(f64, f64)> = result
        .aggregate
        .iter()
        .filter_map(|r| r.mc_mean.map(|m| (r.iter as f64, m)))
        .collect();
    let se: Vec<(f64, f64)> = result
        .aggregate
        .iter()
        .filter_map(|r| r.se_pred.map(|p| (r.iter as f64, p)))
        .collect();
    if mc.is_empty() && se.is_empty() {
        return None;
    }
    let lo: Vec<(f64, f64)> = result
        .aggregate
        .iter()
        .filter_map(|r| match (r.mc_mean, r.mc_std) {
            (Some(m), Some(s)) => Some((r.iter as f64, (m - s).max(1e-300))),
            _ => None,
        })
        .collect();
    let hi: Vec<(f64, f64)> = result
        .aggregate
        .iter()
        .filter_map(|r| match (r.mc_mean, r.mc_std) {
            (Some(m), Some(s)) => Some((r.iter as f64, m + s)),
            _ => None,
        })
        .collect();
    let mut series = Vec::new();
    if !mc.is_empty() {
        series.push(Series {
            name: "monte carlo mean",
            points: &mc,
            stroke: "#4477aa",
            dashed: false,
        });
    }
    if !se.is_empty() {
        series.push(Series {
            name: "state evolution",
            points: &se,
            stroke: "#cc6677",
            dashed: true,
        });
    }
    let band = if lo.is_empty() {
        None
    } else {
        Some((lo.as_slice(), hi.as_slice()))
    };
    Some(line_chart(
        &format!("{} (N={}, delta={})", result.config.mode, result.config.n, result.realized_delta),
        "iteration",
        "mse",
        &series,
        band,
    ))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the selected formats into `output_dir`, returning the paths.
/// An empty format set writes nothing and logs a warning.
pub fn emit_report(result: &ResultSet, formats: &[Format]) -> Result<Vec<PathBuf>, CliError> {
    if formats.is_empty() {
        log::warn!("no output formats selected; nothing written");
        return Ok(Vec::new());
    }
    let dir = PathBuf::from(&result.config.output_dir);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let base = format!(
        "{}_{}_{}",
        result.config.mode, result.timestamp, result.config.base_seed
    );
    let mut formats: Vec<Format> = formats.to_vec();
    formats.sort();
    formats.dedup();
    let mut written = Vec::new();
    for format in formats {
        match format {
            Format::Csv => {
                let path = dir.join(format!("{base}.csv"));
                write_file(&path, &render_csv(result))?;
                written.push(path);
            }
            Format::Json => {
                let path = dir.join(format!("{base}.json"));
                let body = serde_json::to_string_pretty(result)
                    .map_err(|e| CliError::Validation(vec![format!("JSON encoding: {e}")]))?;
                write_file(&path, &body)?;
                written.push(path);
            }
            Format::Svg => match render_svg(result) {
                Some(body) => {
                    let path = dir.join(format!("{base}.svg"));
                    write_file(&path, &body)?;
                    written.push(path);
                }
                None => log::warn!("no per-iteration data to chart; SVG skipped"),
            },
        }
    }
    Ok(written)
}
