//! CSV ingestion and per-phase error summaries.
//!
//! `report` re-reads a run's CSV (and, when present, the `.meta` sidecar
//! written next to it) and prints error statistics per experiment phase:
//! before the disturbance onset, while the disturbance acts unrejected, and
//! after the rejection is switched on. Phase boundaries come from the
//! resolved config in the sidecar; without a sidecar the whole run is one
//! phase.

use std::path::Path;

use thiserror::Error;

use crate::config::RunMetadata;
use crate::sim::EventAction;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot read {path}: {source}")]
    ReadFailed {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:1: missing or malformed header")]
    BadHeader { path: String },
    #[error("{path}:{line}: expected {expected} columns, found {found}")]
    ColumnCount {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: column {column}: bad number {value:?}")]
    BadNumber {
        path: String,
        line: usize,
        column: String,
        value: String,
    },
    #[error("{path}: no data rows")]
    EmptyCsv { path: String },
    #[error("sidecar {path}: {source}")]
    BadSidecar {
        path: String,
        #[source]
        source: crate::config::ConfigError,
    },
}

/// Parsed CSV columns needed for reporting.
#[derive(Debug, Clone)]
pub struct CsvRun {
    pub times: Vec<f64>,
    pub err_opt: Vec<f64>,
    pub err_consensus: Vec<f64>,
    pub columns: Vec<String>,
}

/// Statistics of one error series over one phase.
#[derive(Debug, Clone)]
pub struct SeriesStats {
    pub mean: f64,
    pub max: f64,
    pub last: f64,
}

/// One phase of the run.
#[derive(Debug, Clone)]
pub struct PhaseStats {
    pub label: String,
    pub start: f64,
    pub end: f64,
    pub samples: usize,
    pub err_opt: SeriesStats,
    pub err_consensus: SeriesStats,
}

/// Parses a run CSV, reporting malformed content with its line number.
pub fn read_csv(path: &Path) -> Result<CsvRun, ReportError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::ReadFailed {
        path: display.clone(),
        source,
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(ReportError::BadHeader {
        path: display.clone(),
    })?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize, ReportError> {
        columns
            .iter()
            .position(|c| c == name)
            .ok_or(ReportError::BadHeader {
                path: display.clone(),
            })
    };
    let t_idx = find("t")?;
    let opt_idx = find("err_opt")?;
    let cons_idx = find("err_consensus")?;

    let mut run = CsvRun {
        times: Vec::new(),
        err_opt: Vec::new(),
        err_consensus: Vec::new(),
        columns: columns.clone(),
    };
    for (zero_line, row) in lines {
        let line = zero_line + 1;
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != columns.len() {
            return Err(ReportError::ColumnCount {
                path: display,
                line,
                expected: columns.len(),
                found: fields.len(),
            });
        }
        let parse = |idx: usize| -> Result<f64, ReportError> {
            fields[idx]
                .trim()
                .parse::<f64>()
                .map_err(|_| ReportError::BadNumber {
                    path: display.clone(),
                    line,
                    column: columns[idx].clone(),
                    value: fields[idx].to_string(),
                })
        };
        run.times.push(parse(t_idx)?);
        run.err_opt.push(parse(opt_idx)?);
        run.err_consensus.push(parse(cons_idx)?);
    }
    if run.times.is_empty() {
        return Err(ReportError::EmptyCsv { path: display });
    }
    Ok(run)
}

/// Loads the `.meta` sidecar next to a CSV, if one exists.
pub fn read_sidecar(csv_path: &Path) -> Result<Option<RunMetadata>, ReportError> {
    let meta_path = csv_path.with_extension("meta");
    if !meta_path.exists() {
        return Ok(None);
    }
    let display = meta_path.display().to_string();
    let text = std::fs::read_to_string(&meta_path).map_err(|source| ReportError::ReadFailed {
        path: display.clone(),
        source,
    })?;
    RunMetadata::from_toml(&text)
        .map(Some)
        .map_err(|source| ReportError::BadSidecar {
            path: display,
            source,
        })
}

/// Phase boundaries of a run: disturbance onsets of disturbed agents plus
/// compensation-toggle event times, restricted to the open horizon.
pub fn phase_boundaries(meta: &RunMetadata) -> Vec<f64> {
    let horizon = meta.run.horizon;
    let mut boundaries: Vec<f64> = Vec::new();
    for agent in &meta.config.agents {
        if !agent.disturbance.freqs.is_empty() {
            boundaries.push(agent.disturbance.onset);
        }
    }
    for event in &meta.config.events {
        match event.action {
            EventAction::EnableDEps | EventAction::DisableDEps => boundaries.push(event.time),
        }
    }
    boundaries.retain(|&t| t > 0.0 && t < horizon);
    boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
    boundaries.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    boundaries
}

/// Splits a run into phases at the given boundaries and summarizes each.
pub fn phase_stats(run: &CsvRun, boundaries: &[f64]) -> Vec<PhaseStats> {
    let t_end = *run.times.last().unwrap();
    let mut cuts = vec![0.0];
    cuts.extend_from_slice(boundaries);
    cuts.push(f64::INFINITY);

    let labels: Vec<String> = match boundaries.len() {
        0 => vec!["full-run".to_string()],
        1 => vec!["pre-onset".to_string(), "disturbed".to_string()],
        2 => vec![
            "pre-onset".to_string(),
            "disturbed".to_string(),
            "post-rejection".to_string(),
        ],
        n => (0..=n).map(|i| format!("phase-{}", i + 1)).collect(),
    };

    let mut phases = Vec::new();
    for (idx, window) in cuts.windows(2).enumerate() {
        let (a, b) = (window[0], window[1]);
        let select: Vec<usize> = run
            .times
            .iter()
            .enumerate()
            .filter(|(_, &t)| t >= a && t < b)
            .map(|(i, _)| i)
            .collect();
        if select.is_empty() {
            continue;
        }
        let stats = |series: &[f64]| -> SeriesStats {
            let vals: Vec<f64> = select.iter().map(|&i| series[i]).collect();
            SeriesStats {
                mean: vals.iter().sum::<f64>() / vals.len() as f64,
                max: vals.iter().fold(0.0_f64, |m, &v| m.max(v)),
                last: *vals.last().unwrap(),
            }
        };
        phases.push(PhaseStats {
            label: labels[idx].clone(),
            start: a,
            end: b.min(t_end),
            samples: select.len(),
            err_opt: stats(&run.err_opt),
            err_consensus: stats(&run.err_consensus),
        });
    }
    phases
}

/// Renders the report text for a CSV path (the `report` CLI subcommand).
pub fn render_report(csv_path: &Path) -> Result<String, ReportError> {
    let run = read_csv(csv_path)?;
    let sidecar = read_sidecar(csv_path)?;
    let boundaries = sidecar.as_ref().map(|m| phase_boundaries(m)).unwrap_or_default();
    let phases = phase_stats(&run, &boundaries);

    let mut out = String::new();
    out.push_str(&format!(
        "report for {} ({} samples, t in [{:.3}, {:.3}])\n",
        csv_path.display(),
        run.times.len(),
        run.times.first().unwrap(),
        run.times.last().unwrap()
    ));
    match &sidecar {
        Some(meta) => out.push_str(&format!(
            "phases from sidecar: boundaries at {:?} (run '{}', seed {})\n",
            boundaries, meta.run.name, meta.run.seed
        )),
        None => out.push_str("no sidecar found; treating the whole run as one phase\n"),
    }
    for p in &phases {
        out.push_str(&format!(
            "  {:<16} [{:>8.3}, {:>8.3})  n={:<6} err_opt mean={:.3e} max={:.3e} last={:.3e}  \
             err_consensus mean={:.3e} max={:.3e} last={:.3e}\n",
            p.label,
            p.start,
            p.end,
            p.samples,
            p.err_opt.mean,
            p.err_opt.max,
            p.err_opt.last,
            p.err_consensus.mean,
            p.err_consensus.max,
            p.err_consensus.last,
        ));
    }
    Ok(out)
}
