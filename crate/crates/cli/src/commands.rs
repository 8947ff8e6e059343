//! Subcommands and their command-line arguments.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dsml::planner::{plan, Termination};
use dsml::rng::derive_seed;

use crate::artifacts::{self, PlanFile, PlanRun, ReportFile};
use crate::config::{Count, RunConfig};
use crate::validate::validate;
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "dsml", version, about = "Plan GP measurement locations for multi-task learning-based control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the planner and write plan.json, satisfaction_vs_N.csv and locations.csv.
    Plan(PlanArgs),
    /// Measure the true system at planned locations and simulate the tasks.
    Validate(ValidateArgs),
    /// Plan and validate the built-in demo, then print a summary.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Config file, or `paper-demo` for the built-in preset.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides planner.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides output.dir.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Horizon 100, 100 samples, 10 repetitions.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// plan.json written by `dsml plan`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Config to use instead of the one stored in the plan.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides validation.runs.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Overrides validation.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to the directory containing the plan.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Overrides planner.seed of the preset.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Overrides validation.runs.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub full_scale: bool,
}

/// Process exit status. `Satisfied` and `Cap` refer to the planner outcome;
/// validation alone exits with `Satisfied` when it completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Satisfied = 0,
    Error = 1,
    Cap = 2,
}

impl Outcome {
    pub fn code(self) -> i32 {
        self as i32
    }
}

pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Validate(a) => cmd_validate(a).map(|_| Outcome::Satisfied),
        Command::Demo(a) => cmd_demo(a),
    }
}

/// Seed of repetition `rep` derived from a base seed.
pub fn repetition_seed(base: u64, rep: usize) -> u64 {
    derive_seed(base, rep as u64)
}

fn outcome_of(runs: &[PlanRun]) -> Outcome {
    if runs.iter().all(|r| r.result.terminated_by == Termination::Satisfied) {
        Outcome::Satisfied
    } else {
        Outcome::Cap
    }
}

/// Runs every repetition of the planner described by `cfg`.
pub fn plan_all(cfg: &RunConfig) -> Result<PlanFile, CliError> {
    let reps = cfg.planner.repetitions.get();
    let mut runs = Vec::with_capacity(reps);
    for rep in 0..reps {
        let seed = repetition_seed(cfg.planner.seed, rep);
        let problem = cfg.build_problem(seed)?;
        eprintln!("planning repetition {}/{reps} (seed {seed})", rep + 1);
        let result = plan(&problem, &cfg.planner_config(seed)?)?;
        let last = result.satisfaction_history.last().map_or(f64::NAN, |h| h.satisfaction);
        eprintln!("  N_final = {}, C = {last}, {:?}", result.n_final, result.terminated_by);
        runs.push(PlanRun {
            repetition: rep,
            seed,
            result,
        });
    }
    Ok(PlanFile {
        config: cfg.clone(),
        runs,
    })
}

/// Validates every repetition stored in `plan` with `cfg`'s validation block.
pub fn validate_all(plan: &PlanFile, cfg: &RunConfig) -> Result<ReportFile, CliError> {
    let runs = cfg.validation.runs.get();
    let repetitions = plan
        .runs
        .iter()
        .map(|r| {
            let problem = cfg.build_problem(r.seed)?;
            let seed = repetition_seed(cfg.validation.seed, r.repetition);
            validate(&problem, &r.result.locations, runs, seed, r.repetition)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rates: Vec<f64> = repetitions.iter().map(|r| r.overall_violation_rate).collect();
    Ok(ReportFile {
        runs_per_task: runs,
        seed: cfg.validation.seed,
        mean_overall_violation_rate: rates.iter().sum::<f64>() / rates.len().max(1) as f64,
        max_overall_violation_rate: rates.iter().copied().fold(0.0, f64::max),
        repetitions,
    })
}

fn load_for_plan(config: &Path, seed: Option<u64>, out_dir: Option<PathBuf>, full_scale: bool) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if full_scale {
        cfg.apply_full_scale();
    }
    if let Some(s) = seed {
        cfg.planner.seed = s;
    }
    if let Some(d) = out_dir {
        cfg.output.dir = d;
    }
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_plan(a: PlanArgs) -> Result<Outcome, CliError> {
    let cfg = load_for_plan(&a.config, a.seed, a.out_dir, a.full_scale)?;
    let plan = plan_all(&cfg)?;
    print_paths(&artifacts::write_plan_artifacts(&cfg.output.dir, &plan)?);
    Ok(outcome_of(&plan.runs))
}

fn cmd_validate(a: ValidateArgs) -> Result<ReportFile, CliError> {
    let plan: PlanFile = artifacts::read_json(&a.plan)?;
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => plan.config.clone(),
    };
    if let Some(r) = a.runs {
        cfg.validation.runs = Count::try_from(r).map_err(CliError::Config)?;
    }
    if let Some(s) = a.seed {
        cfg.validation.seed = s;
    }
    let dir = a
        .out_dir
        .unwrap_or_else(|| a.plan.parent().map(Path::to_path_buf).unwrap_or_default());
    let report = validate_all(&plan, &cfg)?;
    print_paths(&artifacts::write_validation_artifacts(&dir, &report)?);
    Ok(report)
}

fn cmd_demo(a: DemoArgs) -> Result<Outcome, CliError> {
    let mut cfg = load_for_plan(Path::new("paper-demo"), a.seed, a.out_dir, a.full_scale)?;
    if let Some(r) = a.runs {
        cfg.validation.runs = Count::try_from(r).map_err(CliError::Config)?;
    }
    let plan = plan_all(&cfg)?;
    let mut written = artifacts::write_plan_artifacts(&cfg.output.dir, &plan)?;
    let report = validate_all(&plan, &cfg)?;
    written.extend(artifacts::write_validation_artifacts(&cfg.output.dir, &report)?);
    print!("{}", summary_table(&plan, &report));
    print_paths(&written);
    Ok(outcome_of(&plan.runs))
}

/// Plain-text table with one line per repetition.
pub fn summary_table(plan: &PlanFile, report: &ReportFile) -> String {
    let tasks = report.repetitions.first().map_or(0, |r| r.tasks.len());
    let mut out = format!("{:>4} {:>20} {:>7} {:>6} {:>10}", "rep", "seed", "N_final", "C", "outcome");
    for j in 1..=tasks {
        out += &format!(" {:>7}", format!("task{j}"));
    }
    out += &format!(" {:>8}\n", "overall");
    for (run, val) in plan.runs.iter().zip(&report.repetitions) {
        let c = run.result.satisfaction_history.last().map_or(f64::NAN, |h| h.satisfaction);
        let outcome = match run.result.terminated_by {
            Termination::Satisfied => "satisfied",
            Termination::Cap => "cap",
        };
        out += &format!(
            "{:>4} {:>20} {:>7} {:>6.3} {:>10}",
            run.repetition, run.seed, run.result.n_final, c, outcome
        );
        for t in &val.tasks {
            out += &format!(" {:>7.3}", t.run_rate);
        }
        out += &format!(" {:>8.3}\n", val.overall_violation_rate);
    }
    out += &format!(
        "task columns: fraction of {} true-system runs with a violation\n",
        report.runs_per_task
    );
    out
}
