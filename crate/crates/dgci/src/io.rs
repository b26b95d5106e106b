//! File formats: dataset CSV, edge lists, versioned JSON results, and the
//! plot-data CSVs.
//!
//! Dataset CSV layout: header row `t,<name>,...`; the first column holds
//! times in (0, 1), the remaining columns the observation values. Floats
//! are written with the shortest round-trip representation, so a write /
//! load cycle reproduces values exactly.

use crate::dataset::TimeSeriesDataset;
use crate::error::{DgciError, Result};
use crate::harness::{ExperimentReport, RepRecord};
use crate::inference::{EdgeSet, TestResult};
use crate::kernel::{smoothed_mean, KernelSpec, Side};
use crate::simgen::GroundTruth;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Version stamp embedded in every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    payload: T,
}

fn check_version(found: u32) -> Result<()> {
    if found != SCHEMA_VERSION {
        return Err(DgciError::SchemaVersion {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(())
}

/// Checks the version stamp before attempting to parse the payload, so a
/// future schema is reported as a version mismatch rather than a parse
/// failure.
fn read_versioned<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| DgciError::Parse {
            line: 1,
            column: 1,
            message: "missing schema_version".into(),
        })?;
    check_version(found as u32)?;
    let doc: Versioned<T> = serde_json::from_value(value)?;
    Ok(doc.payload)
}

/// Loads a dataset CSV, rejecting malformed cells with their line number.
pub fn load_dataset(path: &Path) -> Result<TimeSeriesDataset> {
    load_dataset_with_mode(path, false)
}

/// As [`load_dataset`]; with `normalize_time` the first column is ignored
/// and row `i` (0-based) receives time `(i + 0.5) / n`, mapping frame
/// indices onto (0, 1).
pub fn load_dataset_with_mode(path: &Path, normalize_time: bool) -> Result<TimeSeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.get(0).map(str::trim) != Some("t") {
        return Err(DgciError::Parse {
            line: 1,
            column: 1,
            message: "first column must be named 't'".into(),
        });
    }
    let p = headers.len() - 1;
    if p < 2 {
        return Err(DgciError::TooFewColumns { min: 2, found: p });
    }
    let mut times: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|pos| pos.line() as usize)
            .unwrap_or(0);
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DgciError::Parse {
                line,
                column: col + 1,
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(DgciError::Parse {
                    line,
                    column: col + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            if col == 0 {
                if !normalize_time && (v <= 0.0 || v >= 1.0) {
                    return Err(DgciError::OutOfRangeTime { line, value: v });
                }
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = times.len();
    if n < 2 {
        return Err(DgciError::TooFewRows { min: 2, found: n });
    }
    if normalize_time {
        for (i, t) in times.iter_mut().enumerate() {
            *t = (i as f64 + 0.5) / n as f64;
        }
    }
    let observations = Array2::from_shape_vec((n, p), values)
        .map_err(|e| DgciError::Config(format!("ragged csv: {e}")))?;
    TimeSeriesDataset::new(Array1::from_vec(times), observations)
}

/// Writes the dataset with header `t,x1,..,xp` and exact float round trip.
pub fn write_dataset(path: &Path, data: &TimeSeriesDataset) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "t")?;
    for j in 1..=data.p() {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for i in 0..data.n() {
        write!(w, "{}", data.times()[i])?;
        for j in 0..data.p() {
            write!(w, ",{}", data.row(i)[j])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Subtracts the two-sided kernel-smoothed mean at each observation time.
/// Rows whose window is empty fall back to the global mean (logged).
pub fn center_dataset(data: &TimeSeriesDataset, h: f64) -> Result<TimeSeriesDataset> {
    let spec = KernelSpec::new(h, Side::TwoSided)?;
    let n = data.n();
    let p = data.p();
    let mut global: Option<Array1<f64>> = None;
    let mut centered = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        let mu = match smoothed_mean(data, data.times()[i], &spec) {
            Ok(mu) => mu,
            Err(DgciError::EmptyWindow { .. }) => {
                log::warn!(
                    "empty centering window at t = {}; using the global mean",
                    data.times()[i]
                );
                global
                    .get_or_insert_with(|| {
                        let mut m = Array1::<f64>::zeros(p);
                        for r in 0..n {
                            m += &data.row(r);
                        }
                        m / n as f64
                    })
                    .clone()
            }
            Err(e) => return Err(e),
        };
        for j in 0..p {
            centered[[i, j]] = data.row(i)[j] - mu[j];
        }
    }
    TimeSeriesDataset::new(data.times().to_owned(), centered)
}

/// Edge restriction file: one `j,k` pair per line (0-based, j < k).
/// Empty lines, `#` comments, and a literal `j,k` header are skipped.
pub fn load_edge_set(path: &Path, p: usize) -> Result<EdgeSet> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line == "j,k" {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>, col: usize| -> Result<usize> {
            s.map(str::trim)
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or(DgciError::Parse {
                    line: idx + 1,
                    column: col,
                    message: format!("cannot parse edge line {line:?}"),
                })
        };
        let j = parse(parts.next(), 1)?;
        let k = parse(parts.next(), 2)?;
        if parts.next().is_some() {
            return Err(DgciError::Parse {
                line: idx + 1,
                column: 3,
                message: "edge lines must have exactly two fields".into(),
            });
        }
        pairs.push((j, k));
    }
    EdgeSet::new(pairs, p)
}

pub fn write_test_result(path: &Path, result: &TestResult) -> Result<()> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        payload: result.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_test_result(path: &Path) -> Result<TestResult> {
    read_versioned(path)
}

pub fn write_report(path: &Path, report: &ExperimentReport) -> Result<()> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        payload: report.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    read_versioned(path)
}

pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        payload: truth.clone(),
    };
    let json = serde_json::to_string_pretty(&doc)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    read_versioned(path)
}

/// Per-grid-time plot data: one row per kept time with the max statistic
/// and rejected-edge count. Dropped times are listed in the JSON result.
pub fn write_statistics_csv(path: &Path, result: &TestResult) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "t,max_stat,n_rejected")?;
    for (i, &t) in result.grid_times.iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            t,
            result.per_time_max_stat[i],
            result.rejected[i].edges.len()
        )?;
    }
    Ok(())
}

/// Per-repetition records for plotting and re-aggregation.
pub fn write_reps_csv(path: &Path, records: &[RepRecord]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "rep,seed,ok,reject,change_points,detected_edges,true_positives,false_positives,truth_edges,break_hits,error"
    )?;
    for r in records {
        let cps = r
            .change_points
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let hits = r
            .break_hits
            .iter()
            .map(|&h| if h { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.rep,
            r.seed,
            r.error.is_none(),
            r.reject,
            cps,
            r.detected_edges,
            r.true_positives,
            r.false_positives,
            r.truth_edges,
            hits,
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn sample() -> TimeSeriesDataset {
        TimeSeriesDataset::new(
            array![0.25, 0.5, 0.75],
            array![
                [1.25, -0.5],
                [0.1, 0.30000000000000004],
                [1e-17, 2.5e300]
            ],
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = sample();
        write_dataset(&path, &data).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn loader_reports_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "t,x1,x2\n0.5,1.0,2.0\n0.6,oops,3.0\n").unwrap();
        match load_dataset(&path) {
            Err(DgciError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn loader_rejects_boundary_time() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "t,x1,x2\n0.5,1.0,2.0\n1.0,2.0,3.0\n").unwrap();
        match load_dataset(&path) {
            Err(DgciError::OutOfRangeTime { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, 1.0);
            }
            other => panic!("expected out-of-range time, got {other:?}"),
        }
    }

    #[test]
    fn loader_counts_rows_and_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("short.csv");
        fs::write(&path, "t,x1,x2\n0.5,1.0,2.0\n").unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DgciError::TooFewRows { found: 1, .. })
        ));
        let path2 = dir.path().join("header.csv");
        fs::write(&path2, "time,x1,x2\n0.5,1.0,2.0\n").unwrap();
        assert!(matches!(load_dataset(&path2), Err(DgciError::Parse { line: 1, .. })));
    }

    #[test]
    fn normalize_time_maps_frames() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("frames.csv");
        fs::write(&path, "t,x1,x2\n1,1.0,2.0\n2,3.0,4.0\n3,5.0,6.0\n4,7.0,8.0\n").unwrap();
        let data = load_dataset_with_mode(&path, true).unwrap();
        assert_eq!(data.times()[0], 0.125);
        assert_eq!(data.times()[3], 0.875);
    }

    #[test]
    fn centering_constant_series_gives_zero() {
        let data = TimeSeriesDataset::new(
            array![0.2, 0.4, 0.6, 0.8],
            array![[3.0, -1.0], [3.0, -1.0], [3.0, -1.0], [3.0, -1.0]],
        )
        .unwrap();
        let centered = center_dataset(&data, 0.3).unwrap();
        for i in 0..4 {
            for j in 0..2 {
                assert!(centered.row(i)[j].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_file_round_trip_and_validation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        fs::write(&path, "j,k\n# comment\n0,1\n2,3\n").unwrap();
        let edges = load_edge_set(&path, 4).unwrap();
        assert_eq!(edges.pairs(), &[(0, 1), (2, 3)]);
        fs::write(&path, "1,0\n").unwrap();
        assert!(load_edge_set(&path, 4).is_err());
        fs::write(&path, "0,9\n").unwrap();
        assert!(load_edge_set(&path, 4).is_err());
    }

    #[test]
    fn result_files_check_schema_version() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("r.json");
        fs::write(
            &path,
            r#"{"schema_version": 999, "n": 2, "p": 2}"#,
        )
        .unwrap();
        assert!(matches!(
            read_test_result(&path),
            Err(DgciError::SchemaVersion { found: 999, .. })
        ));
    }
}
