use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::runner::{to_csv, write_atomic, RoundRecord};
use crate::baselines::BaselineKind;
use crate::error::{Error, Result};

/// Runs of each scheme found in a result directory, ordered by seed.
pub type TraceSet = BTreeMap<BaselineKind, Vec<Vec<RoundRecord>>>;

pub fn load_traces(dir: &Path) -> Result<TraceSet> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: BTreeMap<BaselineKind, BTreeMap<u64, Vec<RoundRecord>>> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some((scheme, seed)) = parse_trace_name(&path) else { continue };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parse { path: path.clone(), message: e.to_string() }))
            .collect::<Result<Vec<RoundRecord>>>()?;
        found.entry(scheme).or_default().insert(seed, records);
    }
    Ok(found.into_iter().map(|(k, runs)| (k, runs.into_values().collect())).collect())
}

fn parse_trace_name(path: &Path) -> Option<(BaselineKind, u64)> {
    if path.extension()? != "jsonl" {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let (scheme, seed) = stem.rsplit_once('_')?;
    Some((scheme.parse().ok()?, seed.parse().ok()?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub round: usize,
    pub wall_clock: f64,
    pub gap: Option<f64>,
    #[serde(rename = "F_mean")]
    pub f_mean: f64,
    #[serde(rename = "A1_mean")]
    pub a1_mean: f64,
    pub avg_clients: f64,
}

fn average(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn average_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.map(|v| average(v.into_iter()))
}

/// Per-round means across seeds, up to the shortest run.
pub fn seed_average(runs: &[Vec<RoundRecord>]) -> Vec<ReportRow> {
    let rounds = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..rounds)
        .map(|r| ReportRow {
            round: r,
            wall_clock: average(runs.iter().map(|x| x[r].wall_clock)),
            gap: average_opt(runs.iter().map(|x| x[r].gap_mean)),
            f_mean: average(runs.iter().map(|x| x[r].f_mean)),
            a1_mean: average(runs.iter().map(|x| x[r].a1_mean)),
            avg_clients: average(runs.iter().map(|x| x[r].avg_clients)),
        })
        .collect()
}

pub fn report_file_name(scheme: BaselineKind) -> String {
    format!("report_{scheme}.csv")
}

/// One seed-averaged CSV per scheme.
pub fn report(dir: &Path) -> Result<Vec<PathBuf>> {
    let traces = load_traces(dir)?;
    if traces.is_empty() {
        return Err(Error::MissingTraces(dir.to_path_buf()));
    }
    let mut out = Vec::new();
    for (scheme, runs) in &traces {
        let path = dir.join(report_file_name(*scheme));
        write_atomic(&path, &to_csv(&seed_average(runs))?)?;
        out.push(path);
    }
    Ok(out)
}

/// The last round finished within `budget` of simulated time.
pub fn record_at_budget(records: &[RoundRecord], budget: f64) -> Option<&RoundRecord> {
    records.iter().take_while(|r| r.wall_clock <= budget).last()
}

/// Seed-averaged wall clock, gap and accuracy after one round.
type SeriesPoint = (f64, Option<f64>, Option<f64>);

pub const COMPARISON_FILE: &str = "comparison.csv";
pub const COMPARISON_POINTS: usize = 50;

/// Header of the comparison table for the given schemes.
pub fn comparison_header(schemes: &[BaselineKind]) -> Vec<String> {
    let mut h = vec!["wall_clock".to_string()];
    for s in schemes {
        h.push(format!("{s}_gap"));
        h.push(format!("{s}_accuracy"));
    }
    h
}

/// Gap and accuracy of every scheme on a common wall-clock grid that ends
/// at the shortest scheme's total time. Each value is that of the last
/// round the scheme completed by the grid time.
pub fn compare(dir: &Path) -> Result<PathBuf> {
    let traces = load_traces(dir)?;
    if traces.len() < 2 {
        return Err(Error::MissingTraces(dir.to_path_buf()));
    }
    let schemes: Vec<BaselineKind> = traces.keys().copied().collect();
    let series: Vec<Vec<SeriesPoint>> = traces
        .values()
        .map(|runs| {
            let rounds = runs.iter().map(Vec::len).min().unwrap_or(0);
            (0..rounds)
                .map(|r| {
                    (
                        average(runs.iter().map(|x| x[r].wall_clock)),
                        average_opt(runs.iter().map(|x| x[r].gap_mean)),
                        average_opt(runs.iter().map(|x| x[r].accuracy_mean)),
                    )
                })
                .collect()
        })
        .collect();
    let horizon = series.iter().map(|s| s.last().map_or(0.0, |p| p.0)).fold(f64::INFINITY, f64::min);
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Domain(format!("csv: {e}"));
    w.write_record(comparison_header(&schemes)).map_err(csv_err)?;
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for i in 1..=COMPARISON_POINTS {
        let t = horizon * i as f64 / COMPARISON_POINTS as f64;
        let mut row = vec![t.to_string()];
        for s in &series {
            let at = s.iter().take_while(|p| p.0 <= t).last();
            row.push(fmt(at.and_then(|p| p.1)));
            row.push(fmt(at.and_then(|p| p.2)));
        }
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Domain(format!("csv: {e}")))?;
    let path = dir.join(COMPARISON_FILE);
    write_atomic(&path, &bytes)?;
    Ok(path)
}
