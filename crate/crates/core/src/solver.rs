//! Dirichlet solver: damped Newton on the frozen convex energy, wrapped in a
//! relaxed Picard loop for the solution-dependent coefficient.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::FunctionalOptions;
use crate::model::{Exterior, Grid, GridFunction, KernelPair, ProblemSpec, Region};
use crate::operators::{AssemblyOptions, OperatorError, WeakFormAssembly};
use crate::regularity::{ball_sup, boundedness_terms, RhsTerm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Target for the sup-norm of the residual divided by `int phi_i`.
    pub inner_tol: f64,
    /// Target for `||u_{k+1} - u_k||_inf` in the outer loop.
    pub outer_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    pub relaxation: f64,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Start from the `p = 2`, `a = 1`, `b = 0` solution with the same data.
    pub harmonic_init: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            inner_tol: 1e-8,
            outer_tol: 1e-6,
            max_inner: 60,
            max_outer: 40,
            relaxation: 0.5,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 40,
            harmonic_init: true,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.to_string()));
        if !(self.inner_tol > 0.0) || !(self.outer_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must lie in (0, 1]");
        }
        if !(self.armijo > 0.0 && self.armijo < 0.5) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("line search needs 0 < armijo < 1/2 and 0 < backtrack < 1");
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return bad("iteration caps must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerStep {
    pub outer: usize,
    pub inner: usize,
    pub residual: f64,
    /// Energy change of the accepted step; absent for the final check.
    pub energy_change: Option<f64>,
    pub step: Option<f64>,
    pub shift: Option<f64>,
    /// The step was accepted on residual decrease because the predicted energy
    /// decrease was below the round-off of the energy.
    #[serde(default)]
    pub residual_merit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterStep {
    pub outer: usize,
    /// `||u_{k+1} - u_k||_inf`.
    pub update: f64,
    /// Sampled `||A_{k+1} - A_k||_inf`.
    pub drift: f64,
    /// `omega_a(||u_{k+1} - u_k||_inf)`.
    pub modulus_bound: f64,
    pub within_modulus: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinfCheck {
    pub lhs: f64,
    pub rhs_terms: Vec<RhsTerm>,
    pub fitted_constant: f64,
    pub finite: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: Option<GridFunction>,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub convergence_history: Vec<InnerStep>,
    pub outer_history: Vec<OuterStep>,
    pub linf_bound_check: Option<LinfCheck>,
}

impl SolveReport {
    pub fn solution(&self) -> &GridFunction {
        self.solution.as_ref().expect("report carries its solution")
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("inner solve did not reach the residual target in {} iterations (residual {})", .0.inner_iterations, .0.final_residual)]
    NonConvergence(Box<SolveReport>),
    #[error("line search stagnated at residual {} after {} iterations", .0.final_residual, .0.inner_iterations)]
    Stagnation(Box<SolveReport>),
    #[error("outer iteration did not settle in {} steps; last update {}", .0.outer_iterations, .0.outer_history.last().map(|s| s.update).unwrap_or(f64::NAN))]
    OuterNonConvergence(Box<SolveReport>),
}

/// Relative size below which an energy difference is not resolvable.
const ENERGY_ROUNDOFF: f64 = 1e-12;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn zero_forcing(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |_| 0.0, Exterior::constant(0.0))
}

/// Solution of the `p = q = 2`, `a = 1`, `b = 0` problem with the data of `asm`.
pub fn harmonic_extension(asm: &WeakFormAssembly, f: &GridFunction) -> Result<GridFunction, SolverError> {
    let spec = ProblemSpec {
        p: 2.0,
        q: 2.0,
        ..asm.spec.clone()
    };
    let mut lin = WeakFormAssembly::new(
        &spec,
        &KernelPair::constant(1.0),
        &asm.domain,
        asm.grid,
        &asm.exterior,
        &asm.opts,
    )?;
    let u0 = lin.constrained(|_| 0.0);
    lin.freeze(&u0)?;
    let (g, h) = lin.gradient_hessian(&u0, f)?;
    let chol = Cholesky::new(h).ok_or_else(|| {
        SolverError::Config("linear initialization matrix is not positive definite".into())
    })?;
    let d = chol.solve(&DVector::from_vec(g));
    let x: Vec<f64> = lin.dofs(&u0).iter().zip(d.iter()).map(|(a, b)| a - b).collect();
    Ok(lin.with_dofs(&u0, &x))
}

/// Minimizes the frozen energy of `asm` from `init` (or the harmonic start).
pub fn solve_frozen(
    asm: &WeakFormAssembly,
    f: &GridFunction,
    init: Option<&GridFunction>,
    cfg: &SolveConfig,
) -> Result<SolveReport, SolverError> {
    cfg.validate()?;
    if !asm.is_frozen() {
        return Err(OperatorError::Mode("solve_frozen needs frozen coefficients".into()).into());
    }
    let u = match init {
        Some(u) => {
            asm.check_constraint(u)?;
            u.clone()
        }
        None if cfg.harmonic_init => harmonic_extension(asm, f)?,
        None => asm.constrained(|_| 0.0),
    };
    let mut history = Vec::new();
    let out = newton(asm, f, u, cfg, 0, &mut history)?;
    Ok(out.into_report(history, 1))
}

struct InnerOutcome {
    u: GridFunction,
    iterations: usize,
    residual: f64,
}

impl InnerOutcome {
    fn into_report(self, history: Vec<InnerStep>, outer: usize) -> SolveReport {
        SolveReport {
            solution: Some(self.u),
            inner_iterations: self.iterations,
            outer_iterations: outer,
            final_residual: self.residual,
            converged: true,
            convergence_history: history,
            outer_history: Vec::new(),
            linf_bound_check: None,
        }
    }
}

fn newton(
    asm: &WeakFormAssembly,
    f: &GridFunction,
    mut u: GridFunction,
    cfg: &SolveConfig,
    outer: usize,
    history: &mut Vec<InnerStep>,
) -> Result<InnerOutcome, SolverError> {
    let n = asm.num_dofs();
    let mut iterations = 0;
    let fail = |u: GridFunction, it: usize, res: f64, h: &[InnerStep], stagnated: bool| {
        let rep = SolveReport {
            solution: Some(u),
            inner_iterations: it,
            outer_iterations: outer + 1,
            final_residual: res,
            converged: false,
            convergence_history: h.to_vec(),
            outer_history: Vec::new(),
            linf_bound_check: None,
        };
        if stagnated {
            SolverError::Stagnation(Box::new(rep))
        } else {
            SolverError::NonConvergence(Box::new(rep))
        }
    };
    loop {
        let (g, h) = asm.gradient_hessian(&u, f)?;
        let res = sup(&asm.residual_density(&g));
        if res <= cfg.inner_tol {
            history.push(InnerStep {
                outer,
                inner: iterations,
                residual: res,
                energy_change: None,
                step: None,
                shift: None,
                residual_merit: false,
            });
            return Ok(InnerOutcome {
                u,
                iterations,
                residual: res,
            });
        }
        if iterations >= cfg.max_inner {
            return Err(fail(u, iterations, res, history, false));
        }
        let gv = DVector::from_vec(g.clone());
        let diag_max = (0..n).map(|i| h[(i, i)].abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let mut shift = 0.0;
        let dir = loop {
            let hs = if shift > 0.0 {
                &h + DMatrix::<f64>::identity(n, n) * shift
            } else {
                h.clone()
            };
            if let Some(ch) = Cholesky::new(hs) {
                let d = -ch.solve(&gv);
                if d.dot(&gv) < 0.0 {
                    break d;
                }
            }
            shift = if shift == 0.0 { 1e-10 * diag_max } else { shift * 10.0 };
            if shift > 1e12 * diag_max {
                return Err(fail(u, iterations, res, history, true));
            }
        };
        let slope = dir.dot(&gv);
        let x0 = asm.dofs(&u);
        let noise = ENERGY_ROUNDOFF * asm.frozen_energy(&u, f)?.abs().max(f64::MIN_POSITIVE);
        let by_residual = -slope < noise;
        let g0 = gv.norm();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            let x1: Vec<f64> = x0.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            let u1 = asm.with_dofs(&u, &x1);
            let de = asm.energy_change(&u, &u1, f)?;
            let ok = if by_residual {
                let g1 = DVector::from_vec(asm.residual(&u1, f)?).norm();
                g1 <= (1.0 - cfg.armijo * step) * g0
            } else {
                de < 0.0 && de <= cfg.armijo * step * slope
            };
            if ok {
                accepted = Some((u1, de));
                break;
            }
            step *= cfg.backtrack;
        }
        let Some((u1, de)) = accepted else {
            return Err(fail(u, iterations, res, history, true));
        };
        history.push(InnerStep {
            outer,
            inner: iterations,
            residual: res,
            energy_change: Some(de),
            step: Some(step),
            shift: Some(shift),
            residual_merit: by_residual,
        });
        u = u1;
        iterations += 1;
    }
}

/// Sampled `sup |a(x,y,u1(x),u1(y)) - a(x,y,u0(x),u0(y))|` over node pairs.
fn coefficient_drift(kernel: &KernelPair, u0: &GridFunction, u1: &GridFunction) -> f64 {
    let n = u0.grid.num_nodes();
    let stride = n.div_ceil(96).max(1);
    let mut worst = 0.0f64;
    for i in (0..n).step_by(stride) {
        let x = u0.grid.node(i);
        for j in (0..n).step_by(stride) {
            if i == j {
                continue;
            }
            let y = u0.grid.node(j);
            let d = kernel.a(&x, &y, u1.values[i], u1.values[j]) - kernel.a(&x, &y, u0.values[i], u0.values[j]);
            worst = worst.max(d.abs());
        }
    }
    worst
}

/// Solves `L_{a(.,u),b} u = f` in `domain`, `u = g` outside, by freezing the
/// coefficient at the previous iterate and relaxing the update.
#[allow(clippy::too_many_arguments)]
pub fn solve_dirichlet(
    spec: &ProblemSpec,
    kernel: &KernelPair,
    domain: &Region,
    grid: Grid,
    g: &Exterior,
    f: &GridFunction,
    cfg: &SolveConfig,
    opts: &AssemblyOptions,
) -> Result<SolveReport, SolverError> {
    cfg.validate()?;
    let mut asm = WeakFormAssembly::new(spec, kernel, domain, grid, g, opts)?;
    let mut u = if cfg.harmonic_init {
        harmonic_extension(&asm, f)?
    } else {
        asm.constrained(|_| 0.0)
    };
    let mut history = Vec::new();
    let mut outer_history = Vec::new();
    let mut inner_total = 0;
    let mut last_res = f64::NAN;
    let mut settled = false;
    let mut outer = 0;
    while outer < cfg.max_outer {
        asm.freeze(&u)?;
        let out = newton(&asm, f, u.clone(), cfg, outer, &mut history)?;
        inner_total += out.iterations;
        last_res = out.residual;
        outer += 1;
        if !kernel.a_depends_on_u {
            u = out.u;
            settled = true;
            break;
        }
        let theta = cfg.relaxation;
        let next_vals: Vec<f64> = u
            .values
            .iter()
            .zip(&out.u.values)
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        let next = u.with_values(next_vals);
        let update = u.values.iter().zip(&next.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let drift = coefficient_drift(kernel, &u, &next);
        let bound = kernel.omega(update);
        outer_history.push(OuterStep {
            outer,
            update,
            drift,
            modulus_bound: bound,
            within_modulus: drift <= bound * (1.0 + 1e-9) + 1e-14,
        });
        u = next;
        if update <= cfg.outer_tol {
            settled = true;
            break;
        }
    }
    // the residual of the live problem at the returned iterate
    asm.unfreeze();
    let live_res = sup(&asm.residual_density(&asm.residual(&u, f)?));
    if kernel.a_depends_on_u {
        last_res = live_res;
    }
    let linf = linf_check(&u, f, spec, kernel, domain, g);
    let report = SolveReport {
        solution: Some(u),
        inner_iterations: inner_total,
        outer_iterations: outer,
        final_residual: last_res,
        converged: settled,
        convergence_history: history,
        outer_history,
        linf_bound_check: linf,
    };
    if settled {
        Ok(report)
    } else {
        Err(SolverError::OuterNonConvergence(Box::new(report)))
    }
}

/// Boundedness estimate on the half-radius ball of the domain, with the
/// boundary term `||g||_inf` sampled at the box nodes outside the domain.
fn linf_check(
    u: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    domain: &Region,
    g: &Exterior,
) -> Option<LinfCheck> {
    let x0 = domain.center_point();
    let r = 0.5 * domain.radius;
    let grid = &u.grid;
    let g_sup = (0..grid.num_nodes())
        .filter(|&i| !domain.contains(&grid.node(i)))
        .map(|i| g.eval(&grid.node(i)).abs())
        .fold(0.0, f64::max);
    let opts = FunctionalOptions::default();
    let terms = boundedness_terms(u, f, spec, kernel, &x0, r, Some(g_sup), &opts).ok()?;
    let lhs = ball_sup(u, &x0, r);
    let rhs: f64 = terms.iter().map(|t| t.1).sum();
    let c = lhs / rhs;
    Some(LinfCheck {
        lhs,
        rhs_terms: terms.into_iter().map(|(name, value)| RhsTerm { name, value }).collect(),
        fitted_constant: c,
        finite: c.is_finite(),
    })
}

/// Outcome of the averaged-coefficient comparison.
#[derive(Clone, Debug)]
pub struct Comparison {
    pub v: GridFunction,
    pub gap: f64,
    pub a_average: f64,
    pub b_average: f64,
    /// `avg_{B4} avg_{B4} |A - (A)_{4,0}| + |b - (b)_{4,0}|`.
    pub oscillation: f64,
    pub report: SolveReport,
}

/// Freezes `A(x,y) = a(x,y,u(x),u(y))`, replaces `A` and `b` by their averages
/// on `B_4 x B_4`, solves the homogeneous problem in `B_2` with data `u`
/// outside, and returns `v` with `||u - v||_{L^inf(B_1)}`.
pub fn solve_averaged_comparison(
    u: &GridFunction,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    cfg: &SolveConfig,
    opts: &AssemblyOptions,
) -> Result<Comparison, SolverError> {
    let grid = u.grid;
    let dim = grid.dim;
    if grid.half_width < 2.0 {
        return Err(SolverError::Config(format!(
            "the comparison needs B_2 inside the box; half width {} < 2",
            grid.half_width
        )));
    }
    let origin = [0.0, 0.0];
    let b4 = Region::ball(origin, 4.0, dim);
    let pts = crate::functionals::region_points(&grid, &b4);
    let mut sa = 0.0;
    let mut sb = 0.0;
    let mut wsum = 0.0;
    let sample: Vec<_> = pts.iter().step_by(pts.len().div_ceil(600).max(1)).collect();
    let at = |k: usize, xi: &crate::model::Point| (grid.cell_point(k, xi), u.cell_value(k, xi));
    for (k, xi, w) in &sample {
        let (x, ux) = at(*k, xi);
        for (l, eta, v) in &sample {
            let (y, uy) = at(*l, eta);
            sa += w * v * kernel.a(&x, &y, ux, uy);
            sb += w * v * kernel.b(&x, &y);
            wsum += w * v;
        }
    }
    let (abar, bbar) = (sa / wsum, sb / wsum);
    let mut osc = 0.0;
    for (k, xi, w) in &sample {
        let (x, ux) = at(*k, xi);
        for (l, eta, v) in &sample {
            let (y, uy) = at(*l, eta);
            osc += w * v * ((kernel.a(&x, &y, ux, uy) - abar).abs() + (kernel.b(&x, &y) - bbar).abs());
        }
    }
    osc /= wsum;
    let frozen = u.as_exterior("comparison data");
    let inside = move |x: &crate::model::Point| x[0] * x[0] + x[1] * x[1] < 16.0;
    let ua = frozen.clone();
    let a_fn = kernel.a_fn();
    let b_fn = kernel.b_fn();
    let tilde = kernel
        .with_a(
            "averaged a",
            move |x, y, _, _| {
                if inside(x) && inside(y) {
                    abar
                } else {
                    a_fn(x, y, ua.eval(x), ua.eval(y))
                }
            },
            false,
        )
        .with_b(
            "averaged b",
            move |x, y| if inside(x) && inside(y) { bbar } else { b_fn(x, y) },
            if kernel.b_is_zero { 0.0 } else { kernel.b_sup.max(bbar) },
        );
    let b2 = Region::ball(origin, 2.0, dim);
    let zero = zero_forcing(grid);
    let report = solve_dirichlet(spec, &tilde, &b2, grid, &frozen, &zero, cfg, opts)?;
    let v = report.solution().clone();
    let gap = grid
        .nodes_in_closed(&Region::ball(origin, 1.0, dim))
        .iter()
        .map(|&i| (u.values[i] - v.values[i]).abs())
        .fold(0.0, f64::max);
    Ok(Comparison {
        v,
        gap,
        a_average: abar,
        b_average: bbar,
        oscillation: osc,
        report,
    })
}
