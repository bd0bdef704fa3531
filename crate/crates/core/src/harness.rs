//! Closed-loop success estimation, budget/deadline and simulation-budget
//! sweeps, and report output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::WorkflowInstance;
use crate::planner::{McppPolicy, PlannerConfig};
use crate::policy::{run_policy, uniform_plan, BasePolicy, Policy, RunOutcome, UniformPolicy};
use crate::rng::{domain, StreamKey};
use crate::units::{secs_to_millis, usd_to_micro};

/// One concrete evaluated method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mcpp,
    Uniform { model: usize },
    Retry { model: usize, width: u32 },
}

/// A method family as named on the command line; `Uniform` and `Retry`
/// expand to every model (and width) and report the best.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodFamily {
    Mcpp,
    Uniform,
    Retry,
}

impl MethodFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodFamily::Mcpp => "mcpp",
            MethodFamily::Uniform => "uniform",
            MethodFamily::Retry => "retry",
        }
    }

    /// Concrete methods of the family, in model-then-width order.
    pub fn expand(self, n_models: usize, widths: &[u32]) -> Vec<Method> {
        match self {
            MethodFamily::Mcpp => vec![Method::Mcpp],
            MethodFamily::Uniform => (0..n_models).map(|model| Method::Uniform { model }).collect(),
            MethodFamily::Retry => (0..n_models)
                .flat_map(|model| widths.iter().map(move |&width| Method::Retry { model, width }))
                .collect(),
        }
    }
}

impl FromStr for MethodFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mcpp" => Ok(MethodFamily::Mcpp),
            "uniform" => Ok(MethodFamily::Uniform),
            "retry" | "base" => Ok(MethodFamily::Retry),
            other => Err(Error::Input(format!(
                "unknown method {other:?} (expected mcpp, uniform or retry)"
            ))),
        }
    }
}

impl fmt::Display for MethodFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Knobs shared by every evaluated cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub planner: PlannerConfig,
    pub n_eval: usize,
    pub delta: f64,
    pub seed: u64,
}

/// One report row; budgets in USD, deadlines in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub model_set: String,
    pub width_set: String,
    pub budget_usd: f64,
    pub deadline_s: f64,
    pub n_eval: usize,
    /// Simulations per pair; 0 for methods that do not plan.
    pub n_sim: u32,
    pub success_rate: f64,
    pub ci_radius: f64,
    pub mean_planner_s: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    /// Stable order: method, budget, deadline, then simulation budget.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.budget_usd.total_cmp(&b.budget_usd))
                .then(a.deadline_s.total_cmp(&b.deadline_s))
                .then(a.n_sim.cmp(&b.n_sim))
        });
    }

    pub fn find(&self, method: &str, budget_usd: f64, deadline_s: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.budget_usd == budget_usd && r.deadline_s == deadline_s)
    }
}

/// Two-sided Hoeffding radius `√(ln(2/δ) / (2n))` for a mean of `n`
/// indicators.
pub fn ci_radius(n_eval: usize, delta: f64) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::Input("n_eval must be at least 1".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Input(format!("delta {delta} outside (0, 1)")));
    }
    Ok(((2.0 / delta).ln() / (2.0 * n_eval as f64)).sqrt())
}

/// Execution and planning streams of replicate `i`.
pub fn replicate_streams(seed: u64, i: usize) -> (StreamKey, StreamKey) {
    let root = StreamKey::root(seed);
    (
        root.child(domain::EXECUTION).child(i as u64),
        root.child(domain::PLANNING).child(i as u64),
    )
}

/// One closed-loop run of `method` on `execution`; MCPP plans against
/// `planning`.
pub fn run_method(
    execution: &WorkflowInstance,
    planning: &WorkflowInstance,
    method: Method,
    config: &PlannerConfig,
    exec: StreamKey,
    plan: StreamKey,
) -> Result<RunOutcome> {
    match method {
        Method::Mcpp => {
            let mut p = McppPolicy::new(planning, config, plan);
            run_policy(execution, &mut p, exec)
        }
        Method::Uniform { model } => {
            let mut p = UniformPolicy::new(uniform_plan(execution, model)?);
            run_policy(execution, &mut p, exec)
        }
        Method::Retry { model, width } => {
            let mut p: Box<dyn Policy> = Box::new(BasePolicy::new(model, width));
            run_policy(execution, p.as_mut(), exec)
        }
    }
}

fn check_method(method: Method, instance: &WorkflowInstance) -> Result<()> {
    let model = match method {
        Method::Mcpp => return Ok(()),
        Method::Uniform { model } | Method::Retry { model, .. } => model,
    };
    if model >= instance.n_models() {
        return Err(Error::Input(format!("model index {model} outside the catalog")));
    }
    if let Method::Retry { width: 0, .. } = method {
        return Err(Error::Input("retry width must be positive".into()));
    }
    Ok(())
}

fn describe(method: Method, instance: &WorkflowInstance, widths: &[u32]) -> (String, String, String) {
    let id = |m: usize| instance.catalog.get(m).id.clone();
    let join = |v: Vec<String>| v.join("+");
    match method {
        Method::Mcpp => (
            "mcpp".into(),
            join((0..instance.n_models()).map(id).collect()),
            join(widths.iter().map(u32::to_string).collect()),
        ),
        Method::Uniform { model } => (format!("uniform-{}", id(model)), id(model), "floor".into()),
        Method::Retry { model, width } => (format!("retry-{}-k{width}", id(model)), id(model), width.to_string()),
    }
}

/// `P̂_succ` of `method` from `n_eval` independent runs, with its Hoeffding
/// radius. Replicates run on the current rayon pool; the result does not
/// depend on the number of workers.
pub fn estimate_success_probability(
    execution: &WorkflowInstance,
    planning: Option<&WorkflowInstance>,
    method: Method,
    settings: &EvalSettings,
) -> Result<ReportRow> {
    let ci = ci_radius(settings.n_eval, settings.delta)?;
    settings.planner.validate()?;
    check_method(method, execution)?;
    let planning = planning.unwrap_or(execution);
    // replicates already saturate the pool
    let config = PlannerConfig {
        parallel: settings.n_eval == 1 && settings.planner.parallel,
        ..settings.planner.clone()
    };
    let runs: Vec<(bool, Option<f64>)> = (0..settings.n_eval)
        .into_par_iter()
        .map(|i| {
            let (exec, plan) = replicate_streams(settings.seed, i);
            let out = run_method(execution, planning, method, &config, exec, plan)?;
            Ok((out.success, out.mean_planner_seconds()))
        })
        .collect::<Result<_>>()?;
    let wins = runs.iter().filter(|r| r.0).count();
    let timed: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
    let mean_planner_s = if timed.is_empty() {
        0.0
    } else {
        timed.iter().sum::<f64>() / timed.len() as f64
    };
    let (name, model_set, width_set) = describe(method, execution, &settings.planner.widths);
    Ok(ReportRow {
        method: name,
        model_set,
        width_set,
        budget_usd: crate::units::micro_to_usd(execution.budget),
        deadline_s: crate::units::millis_to_secs(execution.deadline),
        n_eval: settings.n_eval,
        n_sim: if method == Method::Mcpp {
            settings.planner.sims_per_pair
        } else {
            0
        },
        success_rate: wins as f64 / settings.n_eval as f64,
        ci_radius: ci,
        mean_planner_s,
        seed: settings.seed,
    })
}

/// Best of `rows` under the family name; ties keep the earliest row.
fn best_row(family: MethodFamily, rows: &[ReportRow]) -> Option<ReportRow> {
    let mut best: Option<&ReportRow> = None;
    for r in rows {
        if best.is_none_or(|b| r.success_rate > b.success_rate) {
            best = Some(r);
        }
    }
    best.map(|b| ReportRow {
        method: family.as_str().into(),
        ..b.clone()
    })
}

/// Full factorial evaluation over `budgets × deadlines`. Uniform and Retry
/// contribute one row per model (and width) plus a row named after the
/// family holding the best of them.
pub fn sweep(
    instance: &WorkflowInstance,
    planning: Option<&WorkflowInstance>,
    families: &[MethodFamily],
    budgets_usd: &[f64],
    deadlines_s: &[f64],
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    if families.is_empty() || budgets_usd.is_empty() || deadlines_s.is_empty() {
        return Err(Error::Input("methods, budgets and deadlines must be non-empty".into()));
    }
    let mut report = EvaluationReport::default();
    for &b in budgets_usd {
        for &d in deadlines_s {
            let (budget, deadline) = (usd_to_micro(b), secs_to_millis(d));
            let cell = instance.clone().with_constraints(budget, deadline);
            let planning_cell = planning.map(|p| p.clone().with_constraints(budget, deadline));
            for &family in families {
                let rows = family
                    .expand(instance.n_models(), &settings.planner.widths)
                    .into_iter()
                    .map(|m| estimate_success_probability(&cell, planning_cell.as_ref(), m, settings))
                    .collect::<Result<Vec<_>>>()?;
                if family != MethodFamily::Mcpp {
                    report.rows.extend(best_row(family, &rows));
                }
                report.rows.extend(rows);
            }
        }
    }
    report.sort();
    Ok(report)
}

/// MCPP at each simulation budget in `m_values` over `budgets × deadlines`.
pub fn m_sweep(
    instance: &WorkflowInstance,
    m_values: &[u32],
    budgets_usd: &[f64],
    deadlines_s: &[f64],
    settings: &EvalSettings,
) -> Result<EvaluationReport> {
    if m_values.is_empty() || m_values.contains(&0) {
        return Err(Error::Input("simulation budgets must be non-empty and positive".into()));
    }
    let mut report = EvaluationReport::default();
    for &m in m_values {
        let s = EvalSettings {
            planner: settings.planner.clone().with_sims(m),
            ..settings.clone()
        };
        report
            .rows
            .extend(sweep(instance, None, &[MethodFamily::Mcpp], budgets_usd, deadlines_s, &s)?.rows);
    }
    report.sort();
    Ok(report)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Input(format!("unknown format {other:?}"))),
        }
    }
}

pub const CSV_HEADER: &str =
    "method,model_set,width_set,budget_usd,deadline_s,n_eval,n_sim,success_rate,ci_radius,mean_planner_s,seed";

pub fn report_to_string(report: &EvaluationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if report.rows.is_empty() {
                w.write_record(CSV_HEADER.split(','))
                    .map_err(|e| Error::Input(e.to_string()))?;
            }
            for r in &report.rows {
                w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Input(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Input(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
    }
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<EvaluationReport> {
    match format {
        ReportFormat::Csv => {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            let rows = r
                .deserialize()
                .collect::<std::result::Result<Vec<ReportRow>, _>>()
                .map_err(|e| Error::Parse(e.to_string()))?;
            Ok(EvaluationReport { rows })
        }
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string())),
    }
}

pub fn emit_report(report: &EvaluationReport, format: ReportFormat, path: &Path) -> Result<()> {
    if report.rows.is_empty() {
        return Err(Error::Input("refusing to write an empty report".into()));
    }
    let text = report_to_string(report, format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
