//! Batch experiment runner: a JSON plan lists validate, solve, check, fit and
//! sweep jobs; each job writes its artifacts under the output directory.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    point_from_slice, validate_spec, ExteriorSpec, Grid, GridFunction, KernelPair, KernelSpec, Point,
    ProblemSpec, Region, Regime,
};
use crate::operators::AssemblyOptions;
use crate::quadrature::{pv_point_eval, PvOptions};
use crate::regularity::{
    boundedness_check, caccioppoli_check, dyadic_radii, holder_exponent_fit, refine_verdicts,
    reverse_holder_check, self_improving_check, sobolev_poincare_check, CheckOptions, InequalityVerdict,
};
use crate::solver::{solve_dirichlet, SolveConfig, SolveReport};

pub const THREADS_ENV: &str = "DPHASE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "dphase", version, about = "Nonlocal double-phase experiment runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Overrides the plan's output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads inside a job.
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Overrides the plan's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run every job of a plan.
    Run { plan: PathBuf },
    /// Parse and validate a plan without running it.
    Validate { plan: PathBuf },
}

// ---------------------------------------------------------------------------
// plan format

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Vec<Job>,
}

fn default_out() -> PathBuf {
    PathBuf::from("dphase-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    #[serde(flatten)]
    pub kind: JobKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobKind {
    Validate(ValidateJob),
    Solve(Box<SolveJob>),
    Check(CheckJob),
    Fit(FitJob),
    Sweep(SweepJob),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateJob {
    pub spec: ProblemSpec,
    #[serde(default)]
    pub assert_regime: Vec<Regime>,
    /// Spot-checks the coefficient assumptions with the plan seed.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub cells: usize,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForcingSpec {
    Constant { value: f64 },
    /// The constant that makes `(1 - |x|^2)_+^{s}` a solution, measured by
    /// the principal-value quadrature at the center node.
    Calibrated { profile: Profile },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Getoor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveJob {
    pub spec: ProblemSpec,
    pub kernel: KernelSpec,
    pub grid: GridSpec,
    pub domain: Region,
    pub exterior: ExteriorSpec,
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub assembly: AssemblyOptions,
    #[serde(default)]
    pub assert_regime: Vec<Regime>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Caccioppoli,
    SobolevPoincare,
    ReverseHolder,
    SelfImproving,
    Boundedness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckJob {
    pub check: CheckName,
    /// Solve jobs on successively refined grids, coarse to fine.
    pub solutions: Vec<String>,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Caccioppoli inner radius; defaults to `radius / 2`.
    #[serde(default)]
    pub inner_radius: Option<f64>,
    #[serde(default = "one")]
    pub eta: f64,
    #[serde(default = "two")]
    pub l: usize,
    #[serde(default = "half")]
    pub sigma: f64,
    /// Left-hand side growth limit per refinement.
    #[serde(default)]
    pub lhs_growth: Option<f64>,
    #[serde(default)]
    pub options: CheckOptions,
    #[serde(default = "yes")]
    pub assert: bool,
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn half() -> f64 {
    0.5
}
fn yes() -> bool {
    true
}
fn four() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitJob {
    pub solution: String,
    pub center: Vec<f64>,
    pub r0: f64,
    /// Smallest radius in cells.
    #[serde(default = "four")]
    pub min_cells: f64,
    #[serde(default)]
    pub slack: Option<f64>,
    /// Requires `alpha >= Theta - slack`.
    #[serde(default)]
    pub assert: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Cells,
    P,
    Q,
    S,
    T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepJob {
    pub base: SolveJob,
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

// ---------------------------------------------------------------------------
// errors and reports

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: parse error at line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("job {id} failed: {msg}")]
    Job { id: String, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid(_) => 2,
            CliError::Job { .. } | CliError::Io(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub job: String,
    pub kind: String,
    pub status: String,
    pub value: String,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub rows: Vec<SummaryRow>,
    /// Ids of jobs whose asserted verdict failed.
    pub failed: Vec<String>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failed.is_empty() {
            0
        } else {
            1
        }
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:<10} {:<6} {}\n", "job", "kind", "status", "value");
        for r in &self.rows {
            s.push_str(&format!("{:<20} {:<10} {:<6} {}\n", r.job, r.kind, r.status, r.value));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// parsing and validation

pub fn parse_plan(text: &str, path: &str) -> Result<ExperimentPlan, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_string(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_plan(&text, &path.display().to_string())
}

fn invalid(id: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("job {id}: {msg}"))
}

fn check_spec(id: &str, spec: &ProblemSpec, regimes: &[Regime]) -> Result<(), CliError> {
    let d = validate_spec(spec).map_err(|e| invalid(id, e))?;
    for r in regimes {
        d.require(spec, *r).map_err(|e| invalid(id, e))?;
    }
    Ok(())
}

fn check_solve(id: &str, job: &SolveJob) -> Result<(), CliError> {
    check_spec(id, &job.spec, &job.assert_regime)?;
    if job.grid.dim != job.spec.dim {
        return Err(invalid(id, format!("grid dimension {} differs from spec dimension {}", job.grid.dim, job.spec.dim)));
    }
    Grid::new(job.grid.dim, job.grid.cells, job.grid.half_width).map_err(|e| invalid(id, e))?;
    if job.domain.center.len() != job.spec.dim {
        return Err(invalid(id, "domain center has the wrong dimension"));
    }
    job.solver.validate().map_err(|e| invalid(id, e))?;
    job.exterior.build().check_tails(&job.spec).map_err(|e| invalid(id, e))?;
    Ok(())
}

/// Structural validation: ids unique, references resolve to earlier solve
/// jobs, specs valid and asserted regimes satisfied.
pub fn validate_plan(plan: &ExperimentPlan) -> Result<(), CliError> {
    let mut seen: HashMap<&str, bool> = HashMap::new();
    for job in &plan.jobs {
        let id = job.id.as_str();
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(invalid(id, "job ids must be non-empty and free of path separators"));
        }
        let refs: Vec<&String> = match &job.kind {
            JobKind::Validate(v) => {
                check_spec(id, &v.spec, &v.assert_regime)?;
                vec![]
            }
            JobKind::Solve(s) => {
                check_solve(id, s)?;
                vec![]
            }
            JobKind::Check(c) => {
                if c.solutions.is_empty() {
                    return Err(invalid(id, "a check needs at least one solution"));
                }
                if !(c.radius > 0.0) {
                    return Err(invalid(id, format!("radius {} must be positive", c.radius)));
                }
                c.solutions.iter().collect()
            }
            JobKind::Fit(f) => {
                if !(f.r0 > 0.0) {
                    return Err(invalid(id, format!("r0 = {} must be positive", f.r0)));
                }
                vec![&f.solution]
            }
            JobKind::Sweep(s) => {
                if s.values.is_empty() {
                    return Err(invalid(id, "a sweep needs at least one value"));
                }
                for v in &s.values {
                    check_solve(id, &sweep_variant(&s.base, s.parameter, *v))?;
                }
                vec![]
            }
        };
        for r in refs {
            match seen.get(r.as_str()) {
                Some(true) => {}
                Some(false) => return Err(invalid(id, format!("{r} is not a solve job"))),
                None => return Err(invalid(id, format!("{r} does not name an earlier job"))),
            }
        }
        let is_solve = matches!(job.kind, JobKind::Solve(_));
        if seen.insert(id, is_solve).is_some() {
            return Err(invalid(id, "duplicate job id"));
        }
    }
    Ok(())
}

fn sweep_variant(base: &SolveJob, p: SweepParameter, v: f64) -> SolveJob {
    let mut j = base.clone();
    match p {
        SweepParameter::Cells => j.grid.cells = v as usize,
        SweepParameter::P => j.spec.p = v,
        SweepParameter::Q => j.spec.q = v,
        SweepParameter::S => j.spec.s = v,
        SweepParameter::T => j.spec.t = v,
    }
    j
}

// ---------------------------------------------------------------------------
// execution

struct Solved {
    job: SolveJob,
    kernel: KernelPair,
    u: GridFunction,
    f: GridFunction,
    g_sup: f64,
}

fn job_err(id: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Job {
        id: id.to_string(),
        msg: e.to_string(),
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8], arts: &mut Vec<String>) -> Result<(), CliError> {
    fs::write(dir.join(name), bytes).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
    arts.push(name.to_string());
    Ok(())
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn point(v: &[f64]) -> Point {
    point_from_slice(v)
}

fn forcing(job: &SolveJob, kernel: &KernelPair, grid: Grid) -> Result<GridFunction, String> {
    let zero = crate::model::Exterior::constant(0.0);
    match &job.forcing {
        ForcingSpec::Constant { value } => {
            let v = *value;
            Ok(GridFunction::from_fn(grid, move |_| v, zero))
        }
        ForcingSpec::Calibrated { profile: Profile::Getoor } => {
            let exact = GridFunction::from_fn(grid, crate::model::getoor_profile, zero.clone());
            let center = grid
                .node_at(&[0.0, 0.0])
                .ok_or("calibration needs the origin to be a grid node")?;
            let c = pv_point_eval(&exact, kernel, &job.spec, center, &PvOptions::default()).map_err(|e| e.to_string())?;
            Ok(GridFunction::from_fn(grid, move |_| c, zero))
        }
    }
}

fn run_solve(job: &SolveJob) -> Result<(Solved, SolveReport), String> {
    let kernel = job.kernel.build();
    let grid = Grid::new(job.grid.dim, job.grid.cells, job.grid.half_width).map_err(|e| e.to_string())?;
    let g = job.exterior.build();
    let f = forcing(job, &kernel, grid)?;
    let report = solve_dirichlet(&job.spec, &kernel, &job.domain, grid, &g, &f, &job.solver, &job.assembly)
        .map_err(|e| e.to_string())?;
    let u = report.solution().clone();
    let g_sup = (0..grid.num_nodes())
        .filter(|&i| !job.domain.contains(&grid.node(i)))
        .map(|i| u.values[i].abs())
        .fold(0.0, f64::max);
    Ok((
        Solved {
            job: job.clone(),
            kernel,
            u,
            f,
            g_sup,
        },
        report,
    ))
}

#[derive(Serialize)]
struct SolutionMeta<'a> {
    grid: &'a GridSpec,
    spec: &'a ProblemSpec,
    kernel: &'a KernelSpec,
    domain: &'a Region,
    exterior: &'a ExteriorSpec,
    forcing_value_at_center: f64,
    values_file: String,
    encoding: &'static str,
    report: &'a SolveReport,
}

fn run_check(c: &CheckJob, sols: &[&Solved]) -> Result<InequalityVerdict, String> {
    let x0 = point(&c.center);
    let mut out = Vec::new();
    for s in sols {
        let (u, f, k, spec) = (&s.u, &s.f, &s.kernel, &s.job.spec);
        let o = &c.options;
        let v = match c.check {
            CheckName::Caccioppoli => {
                caccioppoli_check(u, f, spec, k, &x0, c.radius, c.inner_radius.unwrap_or(0.5 * c.radius), o)
            }
            CheckName::SobolevPoincare => sobolev_poincare_check(u, spec, &x0, c.radius, c.eta, o),
            CheckName::ReverseHolder => reverse_holder_check(u, f, spec, k, &x0, c.radius, c.l, c.sigma, o),
            CheckName::SelfImproving => self_improving_check(u, f, spec, &x0, c.radius, o),
            CheckName::Boundedness => boundedness_check(u, f, spec, k, &x0, c.radius, Some(s.g_sup), o),
        }
        .map_err(|e| e.to_string())?;
        out.push(v);
    }
    Ok(refine_verdicts(&out, c.options.stability_ratio, c.lhs_growth))
}

fn fmt(v: f64) -> String {
    format!("{v:.6e}")
}

/// Runs a validated plan, writing artifacts into `out`.
pub fn run_plan(plan: &ExperimentPlan, out: &Path) -> Result<RunOutcome, CliError> {
    validate_plan(plan)?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut solved: HashMap<String, Solved> = HashMap::new();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for job in &plan.jobs {
        let id = job.id.as_str();
        let mut arts = Vec::new();
        let (kind, pass, value) = match &job.kind {
            JobKind::Validate(v) => {
                let d = validate_spec(&v.spec).map_err(|e| invalid(id, e))?;
                if let Some(ks) = &v.kernel {
                    ks.build()
                        .check_assumptions(v.spec.lambda, v.spec.dim, 4.0, 4.0, 256, &mut rng)
                        .map_err(|e| job_err(id, e))?;
                }
                write(out, &format!("{id}.json"), &json(&d), &mut arts)?;
                ("validate", true, format!("Theta={}", fmt(d.theta)))
            }
            JobKind::Solve(s) => {
                let (sol, report) = run_solve(s).map_err(|e| job_err(id, e))?;
                let bytes: Vec<u8> = sol.u.values.iter().flat_map(|v| v.to_le_bytes()).collect();
                write(out, &format!("{id}.bin"), &bytes, &mut arts)?;
                let meta = SolutionMeta {
                    grid: &s.grid,
                    spec: &s.spec,
                    kernel: &s.kernel,
                    domain: &s.domain,
                    exterior: &s.exterior,
                    forcing_value_at_center: sol.f.eval(&[0.0, 0.0]),
                    values_file: format!("{id}.bin"),
                    encoding: "f64 little-endian, nodes in lexicographic order (x fastest)",
                    report: &report,
                };
                write(out, &format!("{id}.json"), &json(&meta), &mut arts)?;
                let hist: Vec<Vec<String>> = report
                    .convergence_history
                    .iter()
                    .map(|h| {
                        vec![
                            h.outer.to_string(),
                            h.inner.to_string(),
                            fmt(h.residual),
                            h.energy_change.map(fmt).unwrap_or_default(),
                            h.step.map(fmt).unwrap_or_default(),
                        ]
                    })
                    .collect();
                write(
                    out,
                    &format!("{id}.history.csv"),
                    &csv_bytes(&["outer", "inner", "residual", "energy_change", "step"], &hist),
                    &mut arts,
                )?;
                let value = format!("residual={}", fmt(report.final_residual));
                solved.insert(id.to_string(), sol);
                ("solve", report.converged, value)
            }
            JobKind::Check(c) => {
                let sols: Vec<&Solved> = c.solutions.iter().map(|s| &solved[s.as_str()]).collect();
                let v = run_check(c, &sols).map_err(|e| job_err(id, e))?;
                write(out, &format!("{id}.verdict.json"), &json(&v), &mut arts)?;
                let pass = v.passed || !c.assert;
                ("check", pass, format!("C={} ratio={}", fmt(v.fitted_constant), fmt(v.stability_ratio)))
            }
            JobKind::Fit(fj) => {
                let s = &solved[fj.solution.as_str()];
                let radii = dyadic_radii(fj.r0, s.u.grid.h(), fj.min_cells);
                let slack = fj.slack.unwrap_or(CheckOptions::default().holder_slack);
                let fit = holder_exponent_fit(&s.u, &point(&fj.center), &radii, Some(&s.job.spec), slack)
                    .map_err(|e| job_err(id, e))?;
                write(out, &format!("{id}.fit.json"), &json(&fit), &mut arts)?;
                write(out, &format!("{id}.csv"), fit.csv().as_bytes(), &mut arts)?;
                let pass = !fj.assert || fit.passed == Some(true);
                ("fit", pass, format!("alpha={}", fmt(fit.alpha_measured)))
            }
            JobKind::Sweep(sw) => {
                let mut table = Vec::new();
                for v in &sw.values {
                    let variant = sweep_variant(&sw.base, sw.parameter, *v);
                    let (sol, report) = run_solve(&variant).map_err(|e| job_err(id, e))?;
                    table.push(vec![
                        v.to_string(),
                        report.converged.to_string(),
                        fmt(report.final_residual),
                        report.inner_iterations.to_string(),
                        fmt(sol.u.max_abs()),
                    ]);
                }
                write(
                    out,
                    &format!("{id}.csv"),
                    &csv_bytes(&["value", "converged", "residual", "inner_iterations", "sup"], &table),
                    &mut arts,
                )?;
                ("sweep", true, format!("{} runs", sw.values.len()))
            }
        };
        if !pass {
            failed.push(id.to_string());
        }
        rows.push(SummaryRow {
            job: id.to_string(),
            kind: kind.to_string(),
            status: if pass { "ok" } else { "FAIL" }.to_string(),
            value,
            artifacts: arts,
        });
    }
    let summary: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.job.clone(), r.kind.clone(), r.status.clone(), r.value.clone()])
        .collect();
    fs::write(out.join("summary.csv"), csv_bytes(&["job", "kind", "status", "value"], &summary))
        .map_err(|e| CliError::Io(format!("summary.csv: {e}")))?;
    Ok(RunOutcome { rows, failed })
}

fn configure_threads(n: Option<usize>) {
    if let Some(n) = n {
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Entry point; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    configure_threads(cli.threads);
    let path = match &cli.command {
        Command::Run { plan } | Command::Validate { plan } => plan.clone(),
    };
    let mut plan = match load_plan(&path) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Some(s) = cli.seed {
        plan.seed = s;
    }
    if let Some(d) = cli.output_dir {
        plan.output_dir = d;
    }
    let res = match cli.command {
        Command::Validate { .. } => validate_plan(&plan).map(|_| {
            println!("plan ok: {} jobs", plan.jobs.len());
            0
        }),
        Command::Run { .. } => run_plan(&plan, &plan.output_dir).map(|o| {
            print!("{}", o.table());
            for id in &o.failed {
                eprintln!("job {id} failed its asserted verdict");
            }
            o.exit_code()
        }),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
