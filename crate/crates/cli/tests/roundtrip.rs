use std::fs;
use std::path::Path;

use dsml::planner::{HistoryEntry, PlanResult, Termination};
use dsml_cli::artifacts::{
    read_csv, read_json, write_plan_artifacts, write_validation_artifacts, PlanFile, PlanRun, ReportFile,
    LOCATIONS_FILE, PLAN_FILE, SATISFACTION_FILE, VIOLATIONS_FILE,
};
use dsml_cli::config::{Count, NonNegative, Positive, Probability};
use dsml_cli::validate::{StepStats, TaskReport, ValidationReport};
use dsml_cli::RunConfig;
use proptest::prelude::*;
use tempfile::TempDir;

fn base() -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/linear_2d.toml");
    RunConfig::from_toml(&fs::read_to_string(path).unwrap(), "fixture").unwrap()
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

fn run_strategy(rep: usize) -> impl Strategy<Value = PlanRun> {
    (0usize..5, any::<bool>()).prop_flat_map(move |(n, satisfied)| {
        (
            prop::collection::vec(prop::collection::vec(finite(), 4), n),
            prop::collection::vec((0.0f64..=1.0, finite()), n + 1),
            any::<u64>(),
        )
            .prop_map(move |(locations, hist, seed)| PlanRun {
                repetition: rep,
                seed,
                result: PlanResult {
                    locations,
                    n_final: n,
                    satisfaction_history: hist
                        .into_iter()
                        .enumerate()
                        .map(|(n, (satisfaction, surrogate))| HistoryEntry { n, satisfaction, surrogate })
                        .collect(),
                    traces: Vec::new(),
                    terminated_by: if satisfied { Termination::Satisfied } else { Termination::Cap },
                },
            })
    })
}

fn report_strategy(rep: usize) -> impl Strategy<Value = ValidationReport> {
    let step = (0usize..10, finite(), finite(), finite());
    prop::collection::vec(prop::collection::vec(step, 1..4), 1..3).prop_map(move |tasks| ValidationReport {
        repetition: rep,
        seed: 9,
        runs: 10,
        measurements: 0,
        tasks: tasks
            .into_iter()
            .enumerate()
            .map(|(j, steps)| TaskReport {
                task: j + 1,
                runs: 10,
                violating_runs: 0,
                run_rate: 0.0,
                evaluation_rate: 0.0,
                diverged_runs: 0,
                max_mean_violation: 0.0,
                steps: steps
                    .into_iter()
                    .enumerate()
                    .map(|(t, (violating_runs, mean, std, max))| StepStats { t: t + 1, violating_runs, mean, std, max })
                    .collect(),
            })
            .collect(),
        joint_violating_runs: 0,
        overall_violation_rate: 0.0,
        overall_satisfaction_rate: 1.0,
    })
}

fn cell(s: &str) -> f64 {
    s.parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_survives_toml(
        delta in 1e-6f64..0.999,
        sf2 in 1e-6f64..1e3,
        ls in prop::collection::vec(1e-3f64..1e2, 2),
        samples in 1usize..10_000,
        max_n in 1usize..100,
        seed in 0u64..i64::MAX as u64,
        noise in prop::option::of(0.0f64..1.0),
        step in 1e-4f64..10.0,
        warm in any::<bool>(),
        runs in 1usize..1000,
    ) {
        let mut cfg = base();
        cfg.planner.delta = Probability::try_from(delta).unwrap();
        cfg.gp.signal_variance = Positive::try_from(sf2).unwrap();
        cfg.gp.lengthscales = ls.into_iter().map(|l| Positive::try_from(l).unwrap()).collect();
        cfg.gp.noise_variance = noise.map(|v| NonNegative::try_from(v).unwrap());
        cfg.planner.samples = Count::try_from(samples).unwrap();
        cfg.planner.max_n = Count::try_from(max_n).unwrap();
        cfg.planner.seed = seed;
        cfg.planner.warm_start = warm;
        cfg.planner.optimizer.step_size = step;
        cfg.validation.runs = Count::try_from(runs).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, "round trip").unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn plan_artifacts_parse_back_exactly(a in run_strategy(0), b in run_strategy(1)) {
        let dir = TempDir::new().unwrap();
        let plan = PlanFile { config: base(), runs: vec![a, b] };
        write_plan_artifacts(dir.path(), &plan).unwrap();
        prop_assert_eq!(&read_json::<PlanFile>(&dir.path().join(PLAN_FILE)).unwrap(), &plan);

        let (header, rows) = read_csv(&dir.path().join(SATISFACTION_FILE)).unwrap();
        let longest = plan.runs.iter().map(|r| r.result.n_final).max().unwrap();
        prop_assert_eq!(rows.len(), longest + 1);
        for row in &rows {
            prop_assert_eq!(row.len(), header.len());
        }
        for run in &plan.runs {
            for (n, row) in rows.iter().enumerate() {
                let c = &row[1 + run.repetition];
                match run.result.satisfaction_history.get(n) {
                    Some(h) => prop_assert_eq!(cell(c).to_bits(), h.satisfaction.to_bits()),
                    None => prop_assert_eq!(c.as_str(), ""),
                }
            }
        }

        let (header, rows) = read_csv(&dir.path().join(LOCATIONS_FILE)).unwrap();
        prop_assert_eq!(header.len(), 6);
        let expected: Vec<(usize, usize, &Vec<f64>)> = plan
            .runs
            .iter()
            .flat_map(|r| r.result.locations.iter().enumerate().map(move |(i, l)| (r.repetition, i, l)))
            .collect();
        prop_assert_eq!(rows.len(), expected.len());
        for (row, (rep, i, loc)) in rows.iter().zip(expected) {
            prop_assert_eq!(row[0].parse::<usize>().unwrap(), rep);
            prop_assert_eq!(row[1].parse::<usize>().unwrap(), i);
            let values: Vec<u64> = row[2..].iter().map(|s| cell(s).to_bits()).collect();
            let want: Vec<u64> = loc.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(values, want);
        }
    }

    #[test]
    fn violation_artifacts_parse_back_exactly(a in report_strategy(0), b in report_strategy(1)) {
        let dir = TempDir::new().unwrap();
        let report = ReportFile {
            runs_per_task: 10,
            seed: 9,
            repetitions: vec![a, b],
            mean_overall_violation_rate: 0.0,
            max_overall_violation_rate: 0.0,
        };
        write_validation_artifacts(dir.path(), &report).unwrap();
        let (header, rows) = read_csv(&dir.path().join(VIOLATIONS_FILE)).unwrap();
        let steps: Vec<(usize, usize, &StepStats)> = report
            .repetitions
            .iter()
            .flat_map(|r| r.tasks.iter().flat_map(move |t| t.steps.iter().map(move |s| (r.repetition, t.task, s))))
            .collect();
        prop_assert_eq!(rows.len(), steps.len());
        for (row, (rep, task, s)) in rows.iter().zip(steps) {
            prop_assert_eq!(row.len(), header.len());
            prop_assert_eq!(&row[..5], &[rep.to_string(), task.to_string(), s.t.to_string(), s.violating_runs.to_string(), "10".to_string()][..]);
            prop_assert_eq!(cell(&row[5]).to_bits(), s.mean.to_bits());
            prop_assert_eq!(cell(&row[6]).to_bits(), s.std.to_bits());
            prop_assert_eq!(cell(&row[7]).to_bits(), s.max.to_bits());
        }
    }
}

#[test]
fn preset_survives_toml() {
    let cfg = RunConfig::paper_demo().unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap(), "round trip").unwrap(), cfg);
    let mut full = cfg.clone();
    full.apply_full_scale();
    assert_eq!(RunConfig::from_toml(&full.to_toml().unwrap(), "round trip").unwrap(), full);
}
