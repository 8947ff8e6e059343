//! JSON and CSV output files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the exact bits that were written.

use std::fs;
use std::path::{Path, PathBuf};

use dsml::planner::PlanResult;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::validate::{mean_std, ValidationReport};
use crate::CliError;

pub const PLAN_FILE: &str = "plan.json";
pub const SATISFACTION_FILE: &str = "satisfaction_vs_N.csv";
pub const LOCATIONS_FILE: &str = "locations.csv";
pub const VIOLATIONS_FILE: &str = "violations.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRun {
    pub repetition: usize,
    pub seed: u64,
    pub result: PlanResult,
}

/// Contents of `plan.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub config: RunConfig,
    pub runs: Vec<PlanRun>,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub runs_per_task: usize,
    pub seed: u64,
    pub repetitions: Vec<ValidationReport>,
    pub mean_overall_violation_rate: f64,
    pub max_overall_violation_rate: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json { path: path.to_path_buf(), source: e })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json { path: path.to_path_buf(), source: e })
}

/// Formats a float for CSV; non-finite values use Rust's spelling (`NaN`, `inf`).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Csv { path: path.to_path_buf(), source: e })?;
    let csv_err = |e| CliError::Csv { path: path.to_path_buf(), source: e };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Header and rows of `satisfaction_vs_N.csv`: one row per `N`, one column
/// per repetition (empty where that repetition stopped earlier), then the
/// mean and sample standard deviation of the present values.
pub fn satisfaction_table(runs: &[PlanRun]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["N".to_string()];
    header.extend(runs.iter().map(|r| format!("rep_{}", r.repetition)));
    header.extend(["mean".to_string(), "std".to_string()]);
    let max_n = runs.iter().map(|r| r.result.n_final).max().unwrap_or(0);
    let rows = (0..=max_n)
        .map(|n| {
            let cells: Vec<Option<f64>> = runs
                .iter()
                .map(|r| r.result.satisfaction_history.iter().find(|h| h.n == n).map(|h| h.satisfaction))
                .collect();
            let present: Vec<f64> = cells.iter().flatten().copied().collect();
            let (mean, std) = mean_std(&present);
            let mut row = vec![n.to_string()];
            row.extend(cells.into_iter().map(opt_cell));
            row.extend([fmt_f64(mean), fmt_f64(std)]);
            row
        })
        .collect();
    (header, rows)
}

pub fn locations_table(runs: &[PlanRun], state_dim: usize, input_dim: usize) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["repetition".to_string(), "index".to_string()];
    header.extend((1..=state_dim).map(|i| format!("x{i}")));
    header.extend((1..=input_dim).map(|i| format!("u{i}")));
    let rows = runs
        .iter()
        .flat_map(|r| {
            r.result.locations.iter().enumerate().map(move |(i, loc)| {
                let mut row = vec![r.repetition.to_string(), i.to_string()];
                row.extend(loc.iter().map(|&v| fmt_f64(v)));
                row
            })
        })
        .collect();
    (header, rows)
}

pub fn violations_table(reports: &[ValidationReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["repetition", "task", "t", "violating_runs", "runs", "mean", "std", "max"]
        .map(String::from)
        .to_vec();
    let rows = reports
        .iter()
        .flat_map(|rep| {
            rep.tasks.iter().flat_map(move |task| {
                task.steps.iter().map(move |s| {
                    vec![
                        rep.repetition.to_string(),
                        task.task.to_string(),
                        s.t.to_string(),
                        s.violating_runs.to_string(),
                        task.runs.to_string(),
                        fmt_f64(s.mean),
                        fmt_f64(s.std),
                        fmt_f64(s.max),
                    ]
                })
            })
        })
        .collect();
    (header, rows)
}

/// Writes `plan.json`, `satisfaction_vs_N.csv` and `locations.csv`.
pub fn write_plan_artifacts(dir: &Path, plan: &PlanFile) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let paths = [PLAN_FILE, SATISFACTION_FILE, LOCATIONS_FILE].map(|f| dir.join(f));
    write_json(&paths[0], plan)?;
    let (h, rows) = satisfaction_table(&plan.runs);
    write_csv(&paths[1], &h, &rows)?;
    let sys = &plan.config.system;
    let (h, rows) = locations_table(&plan.runs, sys.state_dim.get(), sys.input_dim);
    write_csv(&paths[2], &h, &rows)?;
    Ok(paths.to_vec())
}

/// Writes `violations.csv` and `report.json`.
pub fn write_validation_artifacts(dir: &Path, report: &ReportFile) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let paths = [VIOLATIONS_FILE, REPORT_FILE].map(|f| dir.join(f));
    let (h, rows) = violations_table(&report.repetitions);
    write_csv(&paths[0], &h, &rows)?;
    write_json(&paths[1], report)?;
    Ok(paths.to_vec())
}

/// Reads a CSV file into its header and records.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Csv { path: path.to_path_buf(), source: e })?;
    let header = r
        .headers()
        .map_err(|e| CliError::Csv { path: path.to_path_buf(), source: e })?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Csv { path: path.to_path_buf(), source: e })?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dsml::planner::{HistoryEntry, Termination};

    fn run(rep: usize, sats: &[f64]) -> PlanRun {
        PlanRun {
            repetition: rep,
            seed: rep as u64,
            result: PlanResult {
                locations: vec![vec![0.1; 4]; sats.len() - 1],
                n_final: sats.len() - 1,
                satisfaction_history: sats
                    .iter()
                    .enumerate()
                    .map(|(n, &s)| HistoryEntry {
                        n,
                        satisfaction: s,
                        surrogate: 1.0,
                    })
                    .collect(),
                traces: Vec::new(),
                terminated_by: Termination::Satisfied,
            },
        }
    }

    #[test]
    fn ragged_repetitions_leave_empty_cells() {
        let (h, rows) = satisfaction_table(&[run(0, &[0.0, 1.0]), run(1, &[0.0, 0.5, 1.0])]);
        assert_eq!(h, ["N", "rep_0", "rep_1", "mean", "std"]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2], ["2", "", "1", "1", "0"]);
        assert_eq!(rows[1][3], "0.75");
    }

    #[test]
    fn shortest_float_format() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }
}
