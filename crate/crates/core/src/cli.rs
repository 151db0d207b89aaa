//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{complexity_scale, estimate_structural, study_statistics, PilotReport, StudyReport};
use crate::calibration::{bias_band, calibrate, EstimatorKind, MultilevelPlan, StructuralParams};
use crate::config::{ExperimentConfig, ModelConfig, Resolved, SCHEMA_VERSION};
use crate::engine::{Engine, LevelSampler};
use crate::error::{Error, Result};
use crate::stream::replication_seed;
use crate::weights::{ml2r_weights, WeightTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Seed offset separating per-epsilon study seeds from pilot seeds.
const STUDY_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Parser)]
#[command(name = "multilevel", version, about = "MLMC and ML2R estimators with optimal calibration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the ML2R weight table.
    Weights(WeightsArgs),
    /// Calibrate plans for every estimator and epsilon.
    Calibrate(ExperimentArgs),
    /// Run replicated estimators and summarise them.
    Run(ExperimentArgs),
    /// Run over an epsilon grid and add cost-scaling tables.
    Study(ExperimentArgs),
    /// Estimate the structural constants by a pilot run.
    Pilot(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2)]
    pub root: u32,
    #[arg(long)]
    pub depth: usize,
    /// Also write `weights.csv` to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cap on the projected cost, in `1/h` units.
    #[arg(long)]
    pub budget: Option<f64>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.budget.is_some() {
            cfg.budget = self.budget;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Regime(_) | Error::Io(_) => EXIT_CONFIG,
        Error::BudgetExceeded { .. } => EXIT_BUDGET,
        Error::Replication { source, .. } => exit_code(source),
        _ => EXIT_NUMERICAL,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Weights(a) => cmd_weights(a),
        Command::Calibrate(a) => cmd_calibrate(&a.load()?),
        Command::Run(a) => cmd_run(&a.load()?, false),
        Command::Study(a) => cmd_run(&a.load()?, true),
        Command::Pilot(a) => cmd_pilot(&a.load()?),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &json_text(value)?)
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io(format!("{}: {e}", cfg.output_dir.display())))?;
    Ok(&cfg.output_dir)
}

fn weights_csv<W: std::io::Write>(table: &WeightTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "refiner", "raw", "cumulative", "residual"]).map_err(csv_err)?;
    for (j, res) in table.row_residuals().iter().enumerate() {
        w.write_record([
            (j + 1).to_string(),
            table.refiner(j + 1).to_string(),
            table.raw[j].to_string(),
            table.cumulative[j].to_string(),
            res.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_weights(a: &WeightsArgs) -> Result<()> {
    let table = ml2r_weights(a.alpha, a.root, a.depth)?;
    weights_csv(&table, std::io::stdout())?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        weights_csv(&table, fs::File::create(dir.join("weights.csv"))?)?;
    }
    Ok(())
}

/// Plan file contents.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct PlanFile {
    pub schema_version: u32,
    pub plans: Vec<MultilevelPlan>,
}

impl PlanFile {
    pub fn load(path: &Path) -> Result<PlanFile> {
        let text = fs::read_to_string(path)?;
        let file: PlanFile = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for p in &file.plans {
            p.validate()?;
        }
        Ok(file)
    }
}

fn plans_for(cfg: &ExperimentConfig, resolved: &Resolved) -> Result<Vec<MultilevelPlan>> {
    let grid = cfg.epsilon_grid();
    if grid.is_empty() {
        return Err(Error::Config("no epsilon given".into()));
    }
    let mut plans = Vec::new();
    for &eps in &grid {
        for (kind, p) in &resolved.params {
            plans.push(calibrate(eps, p, cfg.root, *kind)?);
        }
    }
    Ok(plans)
}

fn report_warnings(plans: &[MultilevelPlan]) {
    for p in plans {
        for w in &p.warnings {
            eprintln!("warning: {} at epsilon = {}: {w}", p.kind, p.epsilon);
        }
    }
}

fn setup(cfg: &ExperimentConfig) -> Result<(Engine, crate::config::ModelSampler, Resolved)> {
    let engine = Engine::new(cfg.workers)?;
    let sampler = cfg.model.build()?;
    if let Some(budget) = cfg.budget {
        let projected = pilot_cost(cfg, &sampler);
        if projected > budget {
            return Err(Error::BudgetExceeded { projected, budget });
        }
    }
    let resolved = cfg.resolve(&engine, &sampler)?;
    Ok((engine, sampler, resolved))
}

/// Cost of the structural pilot, zero when every constant is given.
fn pilot_cost(cfg: &ExperimentConfig, sampler: &crate::config::ModelSampler) -> f64 {
    if !cfg.needs_pilot() {
        return 0.0;
    }
    cfg.pilot.samples as f64 * (1.0 + cfg.root as f64) / sampler.h_bold()
}

pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<()> {
    let (_, _, resolved) = setup(cfg)?;
    let plans = plans_for(cfg, &resolved)?;
    report_warnings(&plans);
    let dir = output_dir(cfg)?;
    write_json(
        &dir.join("plans.json"),
        &PlanFile {
            schema_version: SCHEMA_VERSION,
            plans: plans.clone(),
        },
    )?;
    let mut w = csv::Writer::from_writer(std::io::stdout());
    w.write_record(["epsilon", "kind", "depth", "h", "n_total", "mu_star", "cost_theoretical"])
        .map_err(csv_err)?;
    for p in &plans {
        w.write_record([
            p.epsilon.to_string(),
            p.kind.to_string(),
            p.depth.to_string(),
            p.h.to_string(),
            p.n_total.to_string(),
            p.mu_star.to_string(),
            p.theoretical_cost().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_pilot(cfg: &ExperimentConfig) -> Result<()> {
    let engine = Engine::new(cfg.workers)?;
    let sampler = cfg.model.build()?;
    let (_, beta) = cfg.model.rates();
    let beta = cfg.structural.beta.unwrap_or(beta);
    let report = estimate_structural(&engine, &sampler, cfg.root, beta, cfg.pilot.samples, cfg.seed)?;
    let dir = output_dir(cfg)?;
    write_json(&dir.join("pilot.json"), &report)?;
    println!(
        "var_y0 = {}\nv1 = {}\nc1 = {} (se {})\ntheta = {}",
        report.var_y0_hat, report.v1_hat, report.c1.value, report.c1.std_error, report.theta_hat
    );
    Ok(())
}

/// Echo of the settings that determine the results.
#[derive(Debug, Clone, Serialize)]
struct ExperimentEcho<'a> {
    model: &'a ModelConfig,
    estimators: &'a [EstimatorKind],
    root: u32,
    epsilons: Vec<f64>,
    replications: usize,
    seed: u64,
}

#[derive(Debug, Clone, Serialize)]
struct StudyEntry {
    kind: EstimatorKind,
    epsilon: f64,
    master_seed: u64,
    plan: MultilevelPlan,
    report: StudyReport,
    /// `|m_hat|` inside the bias band widened by 3 standard errors (MLMC).
    in_band: Option<bool>,
    estimates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct StudyFile<'a> {
    schema_version: u32,
    experiment: ExperimentEcho<'a>,
    oracle: Option<f64>,
    pilot: Option<PilotReport>,
    params: Vec<(EstimatorKind, StructuralParams)>,
    entries: Vec<StudyEntry>,
}

fn band_flag(plan: &MultilevelPlan, report: &StudyReport) -> Result<Option<bool>> {
    if plan.kind != EstimatorKind::Mlmc {
        return Ok(None);
    }
    let Some(m) = report.m_hat else { return Ok(None) };
    let (lo, hi) = bias_band(plan.params.alpha, plan.root)?;
    let slack = 3.0 * report.m_hat_se;
    Ok(Some(m.abs() >= lo - slack && m.abs() <= hi + slack))
}

/// In-memory outputs of a `run` or `study`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub study_json: String,
    pub summary_csv: String,
    /// Present for grid studies.
    pub cost_csv: Option<String>,
}

/// Runs the experiment without touching the filesystem.
pub fn run_experiment(cfg: &ExperimentConfig, grid_study: bool) -> Result<ExperimentOutput> {
    if grid_study && cfg.epsilons.as_ref().is_none_or(|v| v.is_empty()) {
        return Err(Error::Config("study needs a non-empty `epsilons` grid".into()));
    }
    let (engine, sampler, resolved) = setup(cfg)?;
    let plans = plans_for(cfg, &resolved)?;
    report_warnings(&plans);
    if let Some(budget) = cfg.budget {
        let projected: f64 =
            pilot_cost(cfg, &sampler) + plans.iter().map(|p| p.theoretical_cost()).sum::<f64>() * cfg.replications as f64;
        if projected > budget {
            return Err(Error::BudgetExceeded { projected, budget });
        }
    }
    let oracle = cfg.model.oracle();
    let grid = cfg.epsilon_grid();
    let mut entries = Vec::with_capacity(plans.len());
    for plan in &plans {
        let idx = grid.iter().position(|&e| e == plan.epsilon).unwrap_or(0) as u64;
        let master = replication_seed(cfg.seed, STUDY_SEED_OFFSET + idx);
        let study = engine.study(plan, &sampler, master, cfg.replications)?;
        let report = if cfg.replications >= 2 {
            study_statistics(&study, oracle)?
        } else {
            single_run_report(&study, oracle)
        };
        entries.push(StudyEntry {
            kind: plan.kind,
            epsilon: plan.epsilon,
            master_seed: master,
            in_band: band_flag(plan, &report)?,
            plan: plan.clone(),
            estimates: study.estimates(),
            report,
        });
    }
    let summary_csv = summary_csv(&entries, oracle.is_some())?;
    let cost_csv = if grid_study { Some(cost_csv(&entries)?) } else { None };
    let file = StudyFile {
        schema_version: SCHEMA_VERSION,
        experiment: ExperimentEcho {
            model: &cfg.model,
            estimators: &cfg.estimators,
            root: cfg.root,
            epsilons: grid,
            replications: cfg.replications,
            seed: cfg.seed,
        },
        oracle,
        pilot: resolved.pilot.clone(),
        params: resolved.params.clone(),
        entries,
    };
    Ok(ExperimentOutput {
        study_json: json_text(&file)?,
        summary_csv,
        cost_csv,
    })
}

pub fn cmd_run(cfg: &ExperimentConfig, grid_study: bool) -> Result<()> {
    let out = run_experiment(cfg, grid_study)?;
    let dir = output_dir(cfg)?;
    write_text(&dir.join("summary.csv"), &out.summary_csv)?;
    if let Some(cost) = &out.cost_csv {
        write_text(&dir.join("cost.csv"), cost)?;
    }
    write_text(&dir.join("study.json"), &out.study_json)?;
    print!("{}", out.summary_csv);
    Ok(())
}

fn single_run_report(study: &crate::engine::ReplicationStudy, oracle: Option<f64>) -> StudyReport {
    let run = &study.runs[0];
    let eps = study.plan.epsilon;
    let bias = oracle.map(|i0| run.estimate - i0);
    StudyReport {
        epsilon: eps,
        kind: study.plan.kind,
        replications: 1,
        mean: run.estimate,
        rmse: bias.map(f64::abs),
        bias,
        m_hat: bias.map(|b| b / eps),
        m_hat_se: f64::NAN,
        sd: f64::NAN,
        sigma_hat: run.std_error / eps,
        skewness: f64::NAN,
        excess_kurtosis: f64::NAN,
        ks_distance: f64::NAN,
        cost_theoretical: study.plan.theoretical_cost(),
        cost_measured_mean: run.measured_cost,
        cost_measured_median: run.measured_cost,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn summary_csv(entries: &[StudyEntry], with_oracle: bool) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["epsilon", "kind"];
    if with_oracle {
        header.extend(["rmse", "bias", "m_hat"]);
    }
    header.extend(["cost_theoretical", "cost_measured", "sigma_hat", "replications", "depth", "h", "n_total", "mean", "sd"]);
    if with_oracle {
        header.extend(["m_hat_se", "in_band"]);
    }
    header.extend(["skewness", "excess_kurtosis", "ks_distance"]);
    w.write_record(&header).map_err(csv_err)?;
    for e in entries {
        let r = &e.report;
        let mut row = vec![e.epsilon.to_string(), e.kind.to_string()];
        if with_oracle {
            row.extend([opt(r.rmse), opt(r.bias), opt(r.m_hat)]);
        }
        row.extend([
            r.cost_theoretical.to_string(),
            r.cost_measured_mean.to_string(),
            r.sigma_hat.to_string(),
            r.replications.to_string(),
            e.plan.depth.to_string(),
            e.plan.h.to_string(),
            e.plan.n_total.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
        ]);
        if with_oracle {
            row.extend([r.m_hat_se.to_string(), e.in_band.map(|b| b.to_string()).unwrap_or_default()]);
        }
        row.extend([r.skewness.to_string(), r.excess_kurtosis.to_string(), r.ks_distance.to_string()]);
        w.write_record(&row).map_err(csv_err)?;
    }
    finish_csv(w)
}

fn cost_csv(entries: &[StudyEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epsilon",
        "kind",
        "cost_theoretical",
        "cost_measured",
        "v_epsilon",
        "cost_over_v",
        "cost_times_epsilon_sq",
        "ml2r_over_mlmc",
    ])
    .map_err(csv_err)?;
    for e in entries {
        let p = &e.plan;
        let cost = p.theoretical_cost();
        let v = complexity_scale(p.kind, p.epsilon, p.params.alpha, p.params.beta, p.root);
        let ratio = match p.kind {
            EstimatorKind::Ml2r => entries
                .iter()
                .find(|o| o.kind == EstimatorKind::Mlmc && o.epsilon == p.epsilon)
                .map(|o| cost / o.plan.theoretical_cost()),
            EstimatorKind::Mlmc => None,
        };
        w.write_record([
            p.epsilon.to_string(),
            p.kind.to_string(),
            cost.to_string(),
            e.report.cost_measured_mean.to_string(),
            v.to_string(),
            (cost / v).to_string(),
            (cost * p.epsilon * p.epsilon).to_string(),
            opt(ratio),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}
