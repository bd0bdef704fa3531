//! `mcpp`: generate, validate, plan, run and evaluate budget- and
//! deadline-constrained workflows.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mcpp_core::harness::{replicate_streams, run_method};
use mcpp_core::io::{load_workflow, parse_pools, write_pools, write_workflow, PoolLine};
use mcpp_core::noise::{perturb, PoolNoise};
use mcpp_core::units::{secs_to_millis, usd_to_micro};
use mcpp_core::{
    emit_report, generate_instance, m_sweep, select_action, sweep, validate, EvalSettings, ExactOracle, ExecState,
    Method, MethodFamily, Mode, ModelCatalog, ModelSpec, NoiseKind, NoiseSpec, PlannerConfig, ReportFormat, Selection,
    Shape, SyntheticSpec, WorkflowInstance,
};

#[derive(Parser)]
#[command(
    name = "mcpp",
    version,
    about = "Monte Carlo portfolio planning for constrained DAG workflows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workflow (and pools in empirical mode).
    Gen(GenArgs),
    /// Report every invariant violation of a workflow.
    Validate {
        #[arg(long)]
        workflow: PathBuf,
    },
    /// Plan the first action from the initial state.
    Plan(PlanArgs),
    /// Execute one closed-loop run and print its trace.
    Run(RunArgs),
    /// Estimate success probabilities over a budget/deadline grid.
    Eval(EvalArgs),
    /// MCPP success and planner time across simulation budgets.
    Msweep(MsweepArgs),
    /// Perturb a pool file the way a noisy planner would see it.
    Noise(NoiseArgs),
    /// Exact values of every reachable state of a small parametric workflow.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Chain,
    Diamond,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Parametric,
    Empirical,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "chain")]
    shape: ShapeArg,
    /// Edge probability for random DAGs.
    #[arg(long, default_value_t = 0.3)]
    p_edge: f64,
    #[arg(long, default_value_t = 3)]
    models: usize,
    #[arg(long, value_enum, default_value = "empirical")]
    mode: ModeArg,
    #[arg(long, default_value_t = 512)]
    pool_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct PlannerArgs {
    /// Monte Carlo simulations per (candidate, continuation) pair.
    #[arg(long, default_value_t = 64)]
    sims: u32,
    /// Sampling-width grid K.
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    widths: Vec<u32>,
    /// Largest action space enumerated in full.
    #[arg(long, default_value_t = 4096)]
    cap: usize,
}

impl PlannerArgs {
    fn config(&self) -> PlannerConfig {
        PlannerConfig::default()
            .with_sims(self.sims)
            .with_widths(self.widths.clone())
            .with_cap(self.cap)
    }
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    workflow: PathBuf,
    /// Budget in USD.
    #[arg(long)]
    budget: f64,
    /// Deadline in seconds.
    #[arg(long)]
    deadline: u64,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mcpp,
    Uniform,
    Retry,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long, value_enum, default_value = "mcpp")]
    method: MethodArg,
    /// Model id for uniform and retry.
    #[arg(long)]
    model: Option<String>,
    /// Width for retry.
    #[arg(long, default_value_t = 1)]
    width: u32,
    #[arg(long)]
    budget: f64,
    #[arg(long)]
    deadline: u64,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "mcpp,uniform,retry")]
    methods: Vec<MethodFamily>,
    /// Budgets in USD.
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<f64>,
    /// Deadlines in seconds.
    #[arg(long, value_delimiter = ',', required = true)]
    deadlines: Vec<u64>,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long, default_value_t = 10_000)]
    n_eval: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pools the planner simulates from instead of the execution pools.
    #[arg(long)]
    planner_pools: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MsweepArgs {
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
    m_values: Vec<u32>,
    #[arg(long, value_delimiter = ',', required = true)]
    budgets: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    deadlines: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    widths: Vec<u32>,
    #[arg(long, default_value_t = 4096)]
    cap: usize,
    #[arg(long, default_value_t = 1_000)]
    n_eval: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKindArg {
    Tokens,
    Success,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, value_enum)]
    kind: NoiseKindArg,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-pool perturbation details as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    workflow: PathBuf,
    #[arg(long)]
    budget: f64,
    #[arg(long)]
    deadline: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    widths: Vec<u32>,
    #[arg(long, default_value_t = 4096)]
    cap: usize,
    #[arg(long)]
    out: PathBuf,
}

fn load(path: &Path, budget_usd: f64, deadline_s: u64) -> Result<WorkflowInstance> {
    let inst = load_workflow(path)?;
    let violations = validate(&inst);
    if !violations.is_empty() {
        bail!(mcpp_core::Error::Invalid(violations));
    }
    Ok(inst.with_constraints(usd_to_micro(budget_usd), secs_to_millis(deadline_s as f64)))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build()?;
            Ok(pool.install(f))
        }
    }
}

fn gen(a: &GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        nodes: a.nodes,
        shape: match a.shape {
            ShapeArg::Chain => Shape::Chain,
            ShapeArg::Diamond => Shape::DiamondStack,
            ShapeArg::Random => Shape::Random { p_edge: a.p_edge },
        },
        models: a.models,
        mode: match a.mode {
            ModeArg::Parametric => Mode::Parametric,
            ModeArg::Empirical => Mode::Empirical,
        },
        pool_size: a.pool_size,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let inst = generate_instance(&spec)?;
    write_workflow(&a.out, &inst)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn model_index(inst: &WorkflowInstance, id: Option<&str>) -> Result<usize> {
    let id = id.context("--model is required for this method")?;
    inst.catalog
        .index_of(id)
        .with_context(|| format!("unknown model {id:?}"))
}

#[derive(Serialize)]
struct PlanOutput<'a> {
    budget_usd: f64,
    deadline_s: u64,
    #[serde(flatten)]
    selection: PlanSelection<'a>,
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum PlanSelection<'a> {
    Chosen {
        action: &'a mcpp_core::AllocationAction,
        score: f64,
        best_continuation: mcpp_core::BasePolicy,
        radius: f64,
        candidates: usize,
        table: &'a [mcpp_core::ActionScore],
    },
    NoFeasible {
        candidates: usize,
    },
}

fn plan(a: &PlanArgs) -> Result<()> {
    let inst = load(&a.workflow, a.budget, a.deadline)?;
    let (_, plan_stream) = replicate_streams(a.seed, 0);
    let selection = select_action(
        &ExecState::initial(&inst),
        &inst,
        &a.planner.config(),
        plan_stream.child(0),
    )?;
    let selection = match &selection {
        Selection::Chosen(p) => PlanSelection::Chosen {
            action: &p.action,
            score: p.score,
            best_continuation: p.best_continuation,
            radius: p.radius,
            candidates: p.candidates,
            table: &p.table,
        },
        Selection::NoFeasible { candidates } => PlanSelection::NoFeasible {
            candidates: *candidates,
        },
    };
    print_json(&PlanOutput {
        budget_usd: a.budget,
        deadline_s: a.deadline,
        selection,
    })
}

fn run(a: &RunArgs) -> Result<()> {
    let inst = load(&a.workflow, a.budget, a.deadline)?;
    let method = match a.method {
        MethodArg::Mcpp => Method::Mcpp,
        MethodArg::Uniform => Method::Uniform {
            model: model_index(&inst, a.model.as_deref())?,
        },
        MethodArg::Retry => Method::Retry {
            model: model_index(&inst, a.model.as_deref())?,
            width: a.width,
        },
    };
    let config = a.planner.config();
    config.validate()?;
    let (exec, plan) = replicate_streams(a.seed, 0);
    let outcome = run_method(&inst, &inst, method, &config, exec, plan)?;
    print_json(&outcome)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let inst = load(&a.workflow, 0.0, 0)?;
    let planning = match &a.planner_pools {
        None => None,
        Some(p) => {
            if inst.mode() != Mode::Empirical {
                bail!("--planner-pools needs an empirical workflow");
            }
            let pools = mcpp_core::io::read_pools(p, inst.n_nodes(), &inst.catalog)?;
            Some(inst.with_pools(pools)?)
        }
    };
    let settings = EvalSettings {
        planner: a.planner.config(),
        n_eval: a.n_eval,
        delta: a.delta,
        seed: a.seed,
    };
    let deadlines: Vec<f64> = a.deadlines.iter().map(|&d| d as f64).collect();
    let report = with_workers(a.output.workers, || {
        sweep(&inst, planning.as_ref(), &a.methods, &a.budgets, &deadlines, &settings)
    })??;
    emit_report(&report, a.output.format.into(), &a.output.out)?;
    eprintln!("wrote {} rows to {}", report.rows.len(), a.output.out.display());
    Ok(())
}

fn msweep(a: &MsweepArgs) -> Result<()> {
    let inst = load(&a.workflow, 0.0, 0)?;
    let settings = EvalSettings {
        planner: PlannerConfig::default().with_widths(a.widths.clone()).with_cap(a.cap),
        n_eval: a.n_eval,
        delta: a.delta,
        seed: a.seed,
    };
    let deadlines: Vec<f64> = a.deadlines.iter().map(|&d| d as f64).collect();
    let report = with_workers(a.output.workers, || {
        m_sweep(&inst, &a.m_values, &a.budgets, &deadlines, &settings)
    })??;
    emit_report(&report, a.output.format.into(), &a.output.out)?;
    eprintln!("wrote {} rows to {}", report.rows.len(), a.output.out.display());
    Ok(())
}

/// Reads a pool file without a workflow: nodes are sized by the largest id
/// and models are indexed in order of first appearance.
fn standalone_pools(path: &Path) -> Result<(mcpp_core::PoolTable, ModelCatalog)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids: Vec<String> = Vec::new();
    let mut n_nodes = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoolLine = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        n_nodes = n_nodes.max(rec.node + 1);
        if !ids.contains(&rec.model) {
            ids.push(rec.model);
        }
    }
    // throughput only matters for profiles, which noise never derives
    let catalog = ModelCatalog::new(ids.into_iter().map(|id| ModelSpec::new(id, 0.0, 1.0)).collect());
    let pools = parse_pools(text.as_bytes(), n_nodes, &catalog)?;
    Ok((pools, catalog))
}

fn noise(a: &NoiseArgs) -> Result<()> {
    let (pools, catalog) = standalone_pools(&a.input)?;
    let spec = NoiseSpec {
        kind: match a.kind {
            NoiseKindArg::Tokens => NoiseKind::TokenLength,
            NoiseKindArg::Success => NoiseKind::SuccessRate,
        },
        sigma: a.sigma,
        eps: a.eps,
        seed: a.seed,
    };
    // pairs absent from the file stay absent
    let mut present = pools.clone();
    let filler = mcpp_core::RolloutPool::new(vec![mcpp_core::PoolRecord {
        success: false,
        tokens: 1,
        latency_s: 1.0,
    }]);
    let missing: Vec<(usize, usize)> = pools.iter().filter(|p| p.2.is_empty()).map(|p| (p.0, p.1)).collect();
    for &(v, m) in &missing {
        present.set(v, m, filler.clone());
    }
    let (mut noisy, report) = perturb(&present, &spec)?;
    for &(v, m) in &missing {
        noisy.set(v, m, mcpp_core::RolloutPool::default());
    }
    let report: Vec<PoolNoise> = report
        .into_iter()
        .filter(|r| !missing.contains(&(r.node, r.model)))
        .collect();
    write_pools(&a.out, &noisy, &catalog)?;
    if let Some(path) = &a.report {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("perturbed {} pools into {}", report.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct OracleOutput {
    budget_usd: f64,
    deadline_s: u64,
    widths: Vec<u32>,
    initial_value: f64,
    states: Vec<mcpp_core::oracle::StateValues>,
}

fn oracle(a: &OracleArgs) -> Result<()> {
    let inst = load(&a.workflow, a.budget, a.deadline)?;
    let oracle = ExactOracle::new(&inst, &a.widths, a.cap)?;
    let s0 = ExecState::initial(&inst);
    let states = oracle
        .reachable_states(&s0)?
        .iter()
        .map(|s| oracle.describe(s))
        .collect::<mcpp_core::Result<Vec<_>>>()?;
    let out = OracleOutput {
        budget_usd: a.budget,
        deadline_s: a.deadline,
        widths: a.widths.clone(),
        initial_value: oracle.value(&s0)?,
        states,
    };
    fs::write(&a.out, serde_json::to_string_pretty(&out)? + "\n")
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} states to {}", out.states.len(), a.out.display());
    Ok(())
}

fn validate_cmd(path: &Path) -> Result<ExitCode> {
    let inst = load_workflow(path)?;
    let violations = validate(&inst);
    print_json(&violations)?;
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => gen(a).map(|_| ExitCode::SUCCESS),
        Command::Validate { workflow } => validate_cmd(workflow),
        Command::Plan(a) => plan(a).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => run(a).map(|_| ExitCode::SUCCESS),
        Command::Eval(a) => eval(a).map(|_| ExitCode::SUCCESS),
        Command::Msweep(a) => msweep(a).map(|_| ExitCode::SUCCESS),
        Command::Noise(a) => noise(a).map(|_| ExitCode::SUCCESS),
        Command::Oracle(a) => oracle(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // parse failures are distinct from invalid instances
            match e.downcast_ref::<mcpp_core::Error>() {
                Some(mcpp_core::Error::Parse(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
