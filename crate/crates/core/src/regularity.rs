//! Numerical checkers for the a-priori estimates, Hölder-exponent fits and the
//! zoom transforms.
//!
//! The constants in the estimates are not explicit, so a checker reports the
//! ratio `lhs / sum(rhs)` ("fitted constant"); an inequality is accepted when
//! that ratio stays bounded, i.e. varies by at most a fixed factor, across
//! dyadic refinements of the same problem.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functionals::{
    f_average, g_average, gagliardo_energy, mean_value, mu_measure, nonlocal_tail, power_average,
    region_measure, require_in_box, shifted_tail, snapped_measure, DualPairField, FunctionalError,
    FunctionalOptions,
};
use crate::model::{
    abs_pow, validate_spec, Exterior, Grid, GridFunction, KernelPair, ModelError, Point, ProblemSpec, Region,
};

#[derive(Debug, Error)]
pub enum RegularityError {
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("grid alignment: {0}")]
    Alignment(String),
}

pub type Result<T> = std::result::Result<T, RegularityError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhsTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityVerdict {
    pub name: String,
    pub lhs: f64,
    pub rhs_terms: Vec<RhsTerm>,
    /// `lhs / sum(rhs)`; 0 when `lhs = 0`.
    pub fitted_constant: f64,
    pub passed: bool,
    pub refinement_trace: Vec<f64>,
    /// Left-hand sides along the refinement.
    pub lhs_trace: Vec<f64>,
    pub stability_ratio: f64,
    pub warnings: Vec<String>,
}

impl InequalityVerdict {
    pub fn single(name: &str, lhs: f64, terms: Vec<(String, f64)>, warnings: Vec<String>) -> Self {
        let rhs: f64 = terms.iter().map(|t| t.1).sum();
        let c = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        InequalityVerdict {
            name: name.to_string(),
            lhs,
            rhs_terms: terms.into_iter().map(|(name, value)| RhsTerm { name, value }).collect(),
            fitted_constant: c,
            passed: c.is_finite() && lhs.is_finite(),
            refinement_trace: vec![c],
            lhs_trace: vec![lhs],
            stability_ratio: 1.0,
            warnings,
        }
    }

    pub fn rhs_sum(&self) -> f64 {
        self.rhs_terms.iter().map(|t| t.value).sum()
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.rhs_terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// `max / min` of a positive trace; 1 for an all-zero trace, infinite otherwise.
pub fn trace_ratio(trace: &[f64]) -> f64 {
    if trace.iter().all(|c| *c == 0.0) {
        return 1.0;
    }
    let lo = trace.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 && hi.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Merges verdicts of one estimate on successively refined grids (coarse to
/// fine). Passes when every fitted constant is finite, their max/min is at most
/// `max_ratio`, and, if `lhs_growth` is given, the left-hand side grows by less
/// than that factor per refinement.
pub fn refine_verdicts(verdicts: &[InequalityVerdict], max_ratio: f64, lhs_growth: Option<f64>) -> InequalityVerdict {
    let last = verdicts.last().expect("at least one verdict").clone();
    let trace: Vec<f64> = verdicts.iter().map(|v| v.fitted_constant).collect();
    let lhs_trace: Vec<f64> = verdicts.iter().map(|v| v.lhs).collect();
    let ratio = trace_ratio(&trace);
    let mut warnings = last.warnings.clone();
    let mut passed = verdicts.iter().all(|v| v.passed) && ratio <= max_ratio;
    if let Some(limit) = lhs_growth {
        for w in lhs_trace.windows(2) {
            if w[0] > 0.0 && w[1] / w[0] >= limit {
                passed = false;
                warnings.push(format!(
                    "left-hand side grew by {:.4} under refinement (limit {limit})",
                    w[1] / w[0]
                ));
            }
        }
    }
    InequalityVerdict {
        passed,
        refinement_trace: trace,
        lhs_trace,
        stability_ratio: ratio,
        warnings,
        ..last
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckOptions {
    pub functionals: FunctionalOptions,
    pub stability_ratio: f64,
    /// Integrability gain in the self-improving check.
    pub delta: f64,
    /// `epsilon` of the dual pair; `None` picks the default.
    pub epsilon: Option<f64>,
    pub holder_slack: f64,
    /// Marks the input as a computed solution; otherwise verdicts carry a warning.
    pub certified_solution: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            functionals: FunctionalOptions::default(),
            stability_ratio: 2.0,
            delta: 0.05,
            epsilon: None,
            holder_slack: 0.1,
            certified_solution: true,
        }
    }
}

fn base_warnings(opts: &CheckOptions) -> Vec<String> {
    if opts.certified_solution {
        Vec::new()
    } else {
        vec!["input is not certified as a solution; the estimate need not hold".to_string()]
    }
}

fn ball_in_box(grid: &Grid, x0: &Point, r: f64, what: &str) -> Result<Region> {
    let b = Region::ball(*x0, r, grid.dim);
    require_in_box(grid, &b, what)?;
    if grid.cells_in(&b).len() < 2 {
        return Err(RegularityError::Precondition(format!(
            "{what} with radius {r} spans fewer than two cells; refine the grid"
        )));
    }
    Ok(b)
}

/// Nodal interpolant of `x -> w(x) * (value at node)`, zero outside the box.
fn weighted(u: &GridFunction, shift: f64, w: impl Fn(&Point) -> f64) -> GridFunction {
    let vals = (0..u.grid.num_nodes())
        .map(|i| w(&u.grid.node(i)) * (u.values[i] - shift))
        .collect();
    GridFunction {
        grid: u.grid,
        values: vals,
        exterior: Exterior::constant(0.0),
    }
}

/// Cutoff equal to 1 on `B_r(x0)`, 0 outside `B_{(R+r)/2}(x0)`, smoothstep in
/// between; `|grad psi| <= 3/(R-r)`.
pub fn cutoff(x0: &Point, r: f64, big_r: f64) -> impl Fn(&Point) -> f64 {
    let c = *x0;
    move |x: &Point| {
        let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
        let tau = (2.0 * (d - r) / (big_r - r)).clamp(0.0, 1.0);
        1.0 - tau * tau * (3.0 - 2.0 * tau)
    }
}

/// Mean over `ball`, exact when `u` is constant on the closed ball.
fn ball_mean(u: &GridFunction, ball: &Region) -> Result<f64> {
    let nodes = u.grid.nodes_in_closed(ball);
    if let Some(&i0) = nodes.first() {
        if nodes.iter().all(|&i| u.values[i] == u.values[i0]) {
            return Ok(u.values[i0]);
        }
    }
    Ok(mean_value(u, ball)?)
}

/// Caccioppoli estimate on `B = B_R(x0)` for `u - (u)_B`.
#[allow(clippy::too_many_arguments)]
pub fn caccioppoli_check(
    u: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    x0: &Point,
    big_r: f64,
    r: f64,
    opts: &CheckOptions,
) -> Result<InequalityVerdict> {
    let d = validate_spec(spec)?;
    if big_r > 0.125 {
        return Err(RegularityError::Precondition(format!(
            "R = {big_r} violates the Caccioppoli radius bound R <= 1/8"
        )));
    }
    if !(r > 0.0 && r < big_r) {
        return Err(RegularityError::Precondition(format!("inner radius r = {r} must lie in (0, R)")));
    }
    let fo = &opts.functionals;
    let ball = ball_in_box(&u.grid, x0, big_r, "Caccioppoli ball")?;
    let n = spec.n();
    let (p, q, s, t) = (spec.p, spec.q, spec.s, spec.t);
    let k = ball_mean(u, &ball)?;
    let psi = cutoff(x0, r, big_r);
    let wp = weighted(u, k, |x| psi(x).powf(q / p));
    let wq = weighted(u, k, &psi);
    let meas = snapped_measure(&u.grid, &ball);
    let mut lhs = gagliardo_energy(&wp, &ball, s, p, None, fo)?;
    if !kernel.b_is_zero {
        lhs += gagliardo_energy(&wq, &ball, t, q, Some(kernel), fo)?;
    }
    lhs /= meas;
    let gap = big_r - r;
    let e = d.p_star + d.frak_a;
    let psi_avg = crate::functionals::region_average(&u.grid, &ball, |c, xi| {
        let x = u.grid.cell_point(c, xi);
        abs_pow(psi(&x), q) * (u.cell_value(c, xi) - k).abs()
    })?;
    let tail_p = shifted_tail(u, k, x0, big_r, p, s, None, fo)?.value;
    let int_p = abs_pow(tail_p, p - 1.0) / big_r.powf(s * p);
    let mut terms = vec![
        ("bulk_p".to_string(), big_r.powf(p * (1.0 - s)) / gap.powf(p) * power_average(u, &ball, k, p)?),
        ("bulk_q".to_string(), big_r.powf(q * (1.0 - t)) / gap.powf(q) * power_average(u, &ball, k, q)?),
        (
            "forcing".to_string(),
            big_r.powf(s * d.p_prime) * power_average(f, &ball, 0.0, e)?.powf(d.p_prime / e),
        ),
        ("tail_p".to_string(), (big_r / gap).powf(n + s * p) * int_p * psi_avg),
    ];
    if !kernel.b_is_zero {
        let tail_q = shifted_tail(u, k, x0, big_r, q, t, None, fo)?.value;
        let int_q = kernel.b_sup * abs_pow(tail_q, q - 1.0) / big_r.powf(t * q);
        terms.push(("tail_q".to_string(), (big_r / gap).powf(n + t * q) * int_q * psi_avg));
    }
    Ok(InequalityVerdict::single("caccioppoli", lhs, terms, base_warnings(opts)))
}

/// Fractional Sobolev-Poincaré inequality on `B_R(x0)` with exponent `eta` on the left.
pub fn sobolev_poincare_check(
    u: &GridFunction,
    spec: &ProblemSpec,
    x0: &Point,
    big_r: f64,
    eta: f64,
    opts: &CheckOptions,
) -> Result<InequalityVerdict> {
    if !(eta >= 1.0 && eta <= spec.p) {
        return Err(RegularityError::Precondition(format!(
            "eta = {eta} must lie in [1, p] = [1, {}]",
            spec.p
        )));
    }
    let field = DualPairField::new(spec, opts.epsilon)?;
    let ball = ball_in_box(&u.grid, x0, big_r, "Sobolev-Poincare ball")?;
    let k = ball_mean(u, &ball)?;
    let lhs = power_average(u, &ball, k, eta)?.powf(1.0 / eta);
    let m = field.m;
    let um = g_average(u, &KernelPair::constant(1.0), &field, x0, big_r, m / (spec.p - 1.0), &opts.functionals)?;
    let rhs = big_r.powf(spec.s + field.epsilon) / field.epsilon.powf(1.0 / m) * um.powf(1.0 / m);
    Ok(InequalityVerdict::single(
        "sobolev_poincare",
        lhs,
        vec![("dual_pair_average".to_string(), rhs)],
        Vec::new(),
    ))
}

/// Diagonal reverse Hölder inequality on `B = B_R(x0)` with dyadic count `l`
/// and free parameter `sigma`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_holder_check(
    u: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    x0: &Point,
    big_r: f64,
    l: usize,
    sigma: f64,
    opts: &CheckOptions,
) -> Result<InequalityVerdict> {
    if !(big_r > 0.0 && big_r <= 0.125) {
        return Err(RegularityError::Precondition(format!(
            "R = {big_r} must satisfy 0 < R <= 1/8"
        )));
    }
    if l == 0 || 2f64.powi(l as i32) * big_r > 2.0 {
        return Err(RegularityError::Precondition(format!(
            "l = {l} must be a positive integer with 2^l R <= 2"
        )));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(RegularityError::Precondition(format!("sigma = {sigma} must lie in (0, 1)")));
    }
    let fo = &opts.functionals;
    let field = DualPairField::new(spec, opts.epsilon)?;
    let top = 2f64.powi(l as i32) * big_r;
    let top_ball = Region::ball(*x0, top, u.grid.dim);
    require_in_box(&u.grid, &top_ball, "B_{2^l R}(x0)")?;
    ball_in_box(&u.grid, x0, 0.5 * big_r, "half ball")?;
    let (p, pp, a, eps) = (spec.p, field.p_prime(), field.alpha, field.epsilon);
    let ea = pp * a;
    let lhs = g_average(u, kernel, &field, x0, 0.5 * big_r, pp, fo)?.powf(1.0 / pp);
    let eps_w = eps.powf(1.0 / ea - 1.0 / pp);
    let g1 = sigma.powf(-(p - 1.0)) / eps_w * g_average(u, kernel, &field, x0, big_r, ea, fo)?.powf(1.0 / ea);
    let mut sum = 0.0;
    for j in 0..=l {
        let rj = 2f64.powi(j as i32) * big_r;
        sum += field.beta(j).powf(p - 1.0) * g_average(u, kernel, &field, x0, rj, ea, fo)?.powf(1.0 / ea);
    }
    let g2 = sigma / eps_w * sum;
    let mu = mu_measure(x0, big_r, eps, p, u.grid.dim);
    let shift = mean_value(u, &top_ball)?;
    let tail = crate::functionals::combined_tail(u, shift, x0, top, spec, kernel, fo)?;
    let g3 = sigma * eps.powf(1.0 / pp) * (eps * mu).powf(field.theta_exp) * tail;
    let fe = field.f_exponent();
    let g4 = (eps * mu).powf(field.theta_exp) / eps.powf(1.0 / fe - 1.0 / pp)
        * f_average(f, &field, x0, big_r, fe, fo)?.powf(1.0 / fe);
    Ok(InequalityVerdict::single(
        "reverse_holder",
        lhs,
        vec![
            ("diagonal".to_string(), g1),
            ("dyadic_sum".to_string(), g2),
            ("tail".to_string(), g3),
            ("forcing".to_string(), g4),
        ],
        base_warnings(opts),
    ))
}

/// `(int_B avg_B (|u(x)-u(y)|^p / |x-y|^{N+ps})^{1+delta})^{(p-1)/(p(1+delta))}` on `B_r(x0)`.
pub fn self_improving_lhs(
    u: &GridFunction,
    spec: &ProblemSpec,
    x0: &Point,
    r: f64,
    delta: f64,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let n = spec.n();
    let (p, s) = (spec.p, spec.s);
    let ell = p * (1.0 + delta);
    let sigma = (n + p * s) * (1.0 + delta) - n;
    if ell <= sigma {
        return Err(RegularityError::Precondition(format!(
            "delta = {delta} makes the integrand non-integrable on the diagonal"
        )));
    }
    let ball = ball_in_box(&u.grid, x0, r, "self-improving ball")?;
    let e = gagliardo_energy(u, &ball, sigma / ell, ell, None, opts)?;
    Ok((e / snapped_measure(&u.grid, &ball)).powf((p - 1.0) / ell))
}

/// Higher-integrability estimate with `B_{rho0/2}(x0)` on the left and
/// `B_{2 rho0}(x0)` on the right.
#[allow(clippy::too_many_arguments)]
pub fn self_improving_check(
    u: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    x0: &Point,
    rho0: f64,
    opts: &CheckOptions,
) -> Result<InequalityVerdict> {
    let d = validate_spec(spec)?;
    if !(rho0 > 0.0 && rho0 <= 1.0) {
        return Err(RegularityError::Precondition(format!("rho0 = {rho0} must lie in (0, 1]")));
    }
    let fo = &opts.functionals;
    let big = ball_in_box(&u.grid, x0, 2.0 * rho0, "B_{2 rho0}(x0)")?;
    let mut warnings = base_warnings(opts);
    let mut delta = opts.delta;
    let mut lhs = None;
    for _ in 0..6 {
        match self_improving_lhs(u, spec, x0, 0.5 * rho0, delta, fo) {
            Ok(v) if v.is_finite() => {
                lhs = Some(v);
                break;
            }
            Ok(_) | Err(RegularityError::Precondition(_)) => {
                delta *= 0.5;
                warnings.push(format!("delta reduced to {delta}"));
            }
            Err(e) => return Err(e),
        }
    }
    let lhs = lhs.ok_or_else(|| {
        RegularityError::Precondition("no admissible delta found for the self-improving integrand".into())
    })?;
    let (p, q, s, t) = (spec.p, spec.q, spec.s, spec.t);
    let semi = (gagliardo_energy(u, &big, s, p, None, fo)? / snapped_measure(&u.grid, &big)).powf(1.0 / d.p_prime);
    let fe = d.p_star + spec.delta0;
    let forcing = rho0.powf(s) * power_average(f, &big, 0.0, fe)?.powf(1.0 / fe);
    let tq = nonlocal_tail(u, x0, 2.0 * rho0, q, t, None, fo)?.value;
    let tp = nonlocal_tail(u, x0, 2.0 * rho0, p, s, None, fo)?.value;
    let terms = vec![
        ("seminorm".to_string(), semi),
        ("forcing".to_string(), forcing),
        ("tail_qt".to_string(), rho0.powf(s - t * q) * abs_pow(tq, q - 1.0)),
        ("tail_ps".to_string(), rho0.powf(-s * (p - 1.0)) * abs_pow(tp, p - 1.0)),
        ("constant".to_string(), rho0.powf(-s * (p - 1.0))),
    ];
    Ok(InequalityVerdict::single("self_improving", lhs, terms, warnings))
}

/// `theta = max{q, p varsigma}` of the boundedness estimate.
pub fn boundedness_exponent(spec: &ProblemSpec) -> std::result::Result<f64, FunctionalError> {
    let d = validate_spec(spec)?;
    let varsigma = if spec.gamma.is_infinite() {
        1.0
    } else {
        let ps_conj = d.p_sob / (d.p_sob - 1.0);
        (spec.p * spec.gamma - ps_conj) / (spec.p * (spec.gamma - ps_conj))
    };
    Ok(spec.q.max(spec.p * varsigma))
}

/// Named right-hand terms of the `L^inf` bound on `B_r(x0)`; `g_sup` adds the
/// boundary term `||g||_inf`.
#[allow(clippy::too_many_arguments)]
pub fn boundedness_terms(
    u: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    x0: &Point,
    r: f64,
    g_sup: Option<f64>,
    opts: &FunctionalOptions,
) -> std::result::Result<Vec<(String, f64)>, FunctionalError> {
    let grid = &u.grid;
    let big = Region::ball(*x0, 2.0 * r, grid.dim);
    require_in_box(grid, &big, "B_2r(x0)")?;
    let vt = boundedness_exponent(spec)?;
    let avg = power_average(u, &big, 0.0, vt)?.powf(spec.q / (spec.p * vt));
    let fnorm = if spec.gamma.is_infinite() {
        grid.nodes_in_closed(&big)
            .iter()
            .map(|&i| f.values[i].abs())
            .fold(0.0, f64::max)
    } else {
        (power_average(f, &big, 0.0, spec.gamma)? * region_measure(grid, &big)).powf(1.0 / spec.gamma)
    };
    let tp = nonlocal_tail(u, x0, 2.0 * r, spec.p, spec.s, None, opts)?.value;
    let tq = if kernel.b_is_zero {
        0.0
    } else {
        nonlocal_tail(u, x0, 2.0 * r, spec.q, spec.t, Some(kernel), opts)?.value
    };
    let mut terms = vec![
        ("average".to_string(), avg),
        ("forcing".to_string(), abs_pow(fnorm, 1.0 / (spec.p - 1.0))),
        ("tail_ps".to_string(), tp),
        ("tail_qt_b".to_string(), tq),
    ];
    if let Some(gs) = g_sup {
        terms.push(("exterior_sup".to_string(), gs));
    }
    terms.push(("one".to_string(), 1.0));
    Ok(terms)
}

/// `||u||_{L^inf(B_r(x0))}` over nodes in the closed ball.
pub fn ball_sup(u: &GridFunction, x0: &Point, r: f64) -> f64 {
    u.grid
        .nodes_in_closed(&Region::ball(*x0, r, u.grid.dim))
        .iter()
        .map(|&i| u.values[i].abs())
        .fold(0.0, f64::max)
}


/// `L^inf` bound on `B_r(x0)`; with `g_sup` the boundary form is used.
#[allow(clippy::too_many_arguments)]
pub fn boundedness_check(
    u: &GridFunction,
    f: &GridFunction,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    x0: &Point,
    r: f64,
    g_sup: Option<f64>,
    opts: &CheckOptions,
) -> Result<InequalityVerdict> {
    let terms = boundedness_terms(u, f, spec, kernel, x0, r, g_sup, &opts.functionals)?;
    Ok(InequalityVerdict::single("boundedness", ball_sup(u, x0, r), terms, base_warnings(opts)))
}

// ---------------------------------------------------------------------------
// Hölder exponent

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
    pub oscillations: Vec<f64>,
    pub alpha_measured: f64,
    pub theta_predicted: Option<f64>,
    pub slack: f64,
    pub passed: Option<bool>,
    pub warnings: Vec<String>,
}

impl HolderFit {
    /// `radius,oscillation` rows.
    pub fn csv(&self) -> String {
        let mut s = String::from("radius,oscillation\n");
        for (r, o) in self.radii.iter().zip(&self.oscillations) {
            s.push_str(&format!("{r},{o}\n"));
        }
        s
    }
}

/// `r0, r0/2, ...` down to the smallest radius above `min_cells * h`.
pub fn dyadic_radii(r0: f64, h: f64, min_cells: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = r0;
    while r > min_cells * h {
        out.push(r);
        r *= 0.5;
    }
    out
}

/// `max - min` of `u` over nodes strictly inside `B_r(x0)`.
pub fn oscillation(u: &GridFunction, x0: &Point, r: f64) -> f64 {
    let nodes = u.grid.nodes_in(&Region::ball(*x0, r, u.grid.dim));
    let (lo, hi) = nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
        (lo.min(u.values[i]), hi.max(u.values[i]))
    });
    if nodes.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Least-squares slope of `log osc` against `log r`, compared with `Theta`
/// when a spec is given.
pub fn holder_exponent_fit(
    u: &GridFunction,
    center: &Point,
    radii: &[f64],
    spec: Option<&ProblemSpec>,
    slack: f64,
) -> Result<HolderFit> {
    let h = u.grid.h();
    if let Some(r) = radii.iter().find(|r| **r <= 4.0 * h) {
        return Err(RegularityError::Precondition(format!(
            "radius {r} is not resolvable above 4h = {}",
            4.0 * h
        )));
    }
    if radii.len() < 4 {
        return Err(RegularityError::Precondition(format!(
            "need at least 4 dyadic radii, got {}",
            radii.len()
        )));
    }
    let osc: Vec<f64> = radii.iter().map(|r| oscillation(u, center, *r)).collect();
    let floor = 1e-12 * (1.0 + u.max_abs());
    let mut warnings = Vec::new();
    let pts: Vec<(f64, f64)> = radii
        .iter()
        .zip(&osc)
        .filter(|(_, o)| **o > floor)
        .map(|(r, o)| (r.ln(), o.ln()))
        .collect();
    if pts.len() < radii.len() {
        warnings.push(format!(
            "{} oscillations below the noise floor {floor:e} were dropped",
            radii.len() - pts.len()
        ));
    }
    let alpha = if pts.len() < 2 {
        warnings.push("degenerate fit: oscillation below the noise floor".into());
        f64::NAN
    } else {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    };
    let theta = match spec {
        Some(sp) => Some(validate_spec(sp)?.theta),
        None => None,
    };
    Ok(HolderFit {
        center: center[..u.grid.dim].to_vec(),
        radii: radii.to_vec(),
        oscillations: osc,
        alpha_measured: alpha,
        theta_predicted: theta,
        slack,
        passed: theta.map(|th| alpha.is_finite() && alpha >= th - slack),
        warnings,
    })
}

// ---------------------------------------------------------------------------
// zoom transforms

/// Transformed data `u(lambda x + z) / M`, `lambda^{sp} M^{1-p} f(lambda x + z)`,
/// `a(lambda x + z, lambda y + z, M w, M v)`, `M^{q-p} lambda^{sp-tq} b(...)`.
#[derive(Clone, Debug)]
pub struct Zoomed {
    pub u: GridFunction,
    pub f: GridFunction,
    pub kernel: KernelPair,
    pub center: Point,
    pub scale: f64,
    pub amplitude: f64,
    /// `M^{q-p} lambda^{sp-tq}`.
    pub b_factor: f64,
    /// Whether `b_factor <= 1`.
    pub b_factor_at_most_one: bool,
}

fn zoom_general(
    u: &GridFunction,
    f: &GridFunction,
    kernel: &KernelPair,
    spec: &ProblemSpec,
    z: &Point,
    lambda: f64,
    big_m: f64,
) -> Result<Zoomed> {
    let grid = u.grid;
    if f.grid != grid {
        return Err(RegularityError::Alignment("u and f live on different grids".into()));
    }
    if !(big_m > 0.0) {
        return Err(RegularityError::Precondition(format!("scale M = {big_m} must be positive")));
    }
    let l2 = lambda.log2();
    if !(lambda > 0.0) || (l2 - l2.round()).abs() > 1e-12 {
        return Err(RegularityError::Alignment(format!(
            "scale {lambda} is not a power of two, so nodes do not map onto nodes"
        )));
    }
    let Some(zn) = grid.node_at(z) else {
        return Err(RegularityError::Alignment(format!(
            "center {:?} is not a grid node",
            &z[..grid.dim]
        )));
    };
    let h = grid.h();
    let zm = grid.node_multi(zn);
    let half = (0..grid.dim)
        .map(|a| zm[a].min(grid.cells - zm[a]))
        .min()
        .unwrap_or(0);
    if half == 0 {
        return Err(RegularityError::Alignment("center lies on the box boundary".into()));
    }
    let ng = Grid::new(grid.dim, 2 * half, half as f64 * h / lambda)?;
    let mut idx = vec![0usize; ng.num_nodes()];
    for (i, slot) in idx.iter_mut().enumerate() {
        let mi = ng.node_multi(i);
        let mut o = [0usize; 2];
        for a in 0..grid.dim {
            o[a] = mi[a] + zm[a] - half;
        }
        *slot = grid.node_index(o);
    }
    let (p, q, s, t) = (spec.p, spec.q, spec.s, spec.t);
    let zc = *z;
    let map = move |x: &Point| [lambda * x[0] + zc[0], lambda * x[1] + zc[1]];
    let fs = lambda.powf(s * p) * big_m.powf(1.0 - p);
    let uc = u.clone();
    let ue = Exterior::function(
        format!("zoom({})", u.exterior.label),
        u.exterior.c_g.max(u.max_abs()) / big_m,
        u.exterior.kappa_g,
        move |x| uc.eval(&map(x)) / big_m,
    );
    let fc = f.clone();
    let fe = Exterior::function("zoomed forcing", 0.0, 0.0, move |x| fs * fc.eval(&map(x)));
    let uz = GridFunction {
        grid: ng,
        values: idx.iter().map(|&i| u.values[i] / big_m).collect(),
        exterior: ue,
    };
    let fz = GridFunction {
        grid: ng,
        values: idx.iter().map(|&i| fs * f.values[i]).collect(),
        exterior: fe,
    };
    let bf = big_m.powf(q - p) * lambda.powf(s * p - t * q);
    let a_fn = kernel.a_fn();
    let b_fn = kernel.b_fn();
    let k0 = kernel.clone();
    let kz = kernel
        .with_a(
            format!("zoom({})", kernel.label),
            move |x, y, w, v| a_fn(&map(x), &map(y), big_m * w, big_m * v),
            kernel.a_depends_on_u,
        )
        .with_b("zoomed b", move |x, y| bf * b_fn(&map(x), &map(y)), bf * kernel.b_sup)
        .with_omega(move |r| k0.omega(big_m * r));
    Ok(Zoomed {
        u: uz,
        f: fz,
        kernel: kz,
        center: *z,
        scale: lambda,
        amplitude: big_m,
        b_factor: bf,
        b_factor_at_most_one: bf <= 1.0,
    })
}

/// `u(rho0 x + x0)`, `rho0^{sp} f(rho0 x + x0)`, `a(rho0 x + x0, ...)`, `rho0^{sp-tq} b(...)`.
pub fn zoom_normalize(
    u: &GridFunction,
    f: &GridFunction,
    kernel: &KernelPair,
    spec: &ProblemSpec,
    x0: &Point,
    rho0: f64,
) -> Result<Zoomed> {
    zoom_general(u, f, kernel, spec, x0, rho0, 1.0)
}

/// The amplitude-normalizing zoom `u(rho x / 4 + z) / M`.
pub fn zoom_rescale_m(
    u: &GridFunction,
    f: &GridFunction,
    kernel: &KernelPair,
    spec: &ProblemSpec,
    z: &Point,
    rho: f64,
    big_m: f64,
) -> Result<Zoomed> {
    zoom_general(u, f, kernel, spec, z, 0.25 * rho, big_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ext0() -> Exterior {
        Exterior::constant(0.0)
    }

    fn line(cells: usize, l: f64, f: impl Fn(&Point) -> f64) -> GridFunction {
        GridFunction::from_fn(Grid::new(1, cells, l).unwrap(), f, ext0())
    }

    #[test]
    fn constants_have_zero_lhs() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.6, 0.3);
        let k = KernelPair::constant(1.0);
        let u = GridFunction::from_fn(Grid::new(1, 256, 1.0).unwrap(), |_| 3.0, Exterior::constant(3.0));
        let f = line(256, 1.0, |_| 0.0);
        let o = CheckOptions::default();
        let c = caccioppoli_check(&u, &f, &spec, &k, &[0.0, 0.0], 0.125, 0.0625, &o).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.fitted_constant, 0.0);
        let sp = sobolev_poincare_check(&u, &spec, &[0.0, 0.0], 0.125, 1.5, &o).unwrap();
        assert_eq!(sp.lhs, 0.0);
        let r = dyadic_radii(0.5, u.grid.h(), 4.0);
        let fit = holder_exponent_fit(&u, &[0.0, 0.0], &r, None, 0.1).unwrap();
        assert!(fit.alpha_measured.is_nan());
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn recovers_power_profiles() {
        for alpha in [0.3, 0.5, 0.8] {
            let u = line(4096, 1.0, |x| x[0].abs().powf(alpha));
            let radii = dyadic_radii(0.5, u.grid.h(), 64.0);
            let fit = holder_exponent_fit(&u, &[0.0, 0.0], &radii, None, 0.1).unwrap();
            assert!((fit.alpha_measured - alpha).abs() < 0.05, "{alpha}: {}", fit.alpha_measured);
        }
        let u = line(1024, 1.0, |x| 2.0 * x[0] + 1.0);
        let radii = dyadic_radii(0.5, u.grid.h(), 8.0);
        let fit = holder_exponent_fit(&u, &[0.1015625, 0.0], &radii, None, 0.1).unwrap();
        assert!(fit.alpha_measured >= 0.95);
        assert!(fit.csv().starts_with("radius,oscillation\n"));
    }

    #[test]
    fn holder_fit_rejects_subgrid_radii() {
        let u = line(64, 1.0, |x| x[0]);
        let err = holder_exponent_fit(&u, &[0.0, 0.0], &[0.5, 0.25, 0.125, 0.0625], None, 0.1).unwrap_err();
        assert!(err.to_string().contains("4h"));
        let err = holder_exponent_fit(&u, &[0.0, 0.0], &[0.5, 0.25], None, 0.1).unwrap_err();
        assert!(err.to_string().contains("at least 4"));
    }

    #[test]
    fn refinement_merge() {
        let v = |lhs: f64, rhs: f64| InequalityVerdict::single("x", lhs, vec![("t".into(), rhs)], vec![]);
        let m = refine_verdicts(&[v(1.0, 1.0), v(1.5, 1.0), v(1.8, 1.0)], 2.0, None);
        assert!(m.passed);
        assert!((m.stability_ratio - 1.8).abs() < 1e-15);
        assert!(!refine_verdicts(&[v(1.0, 1.0), v(3.0, 1.0)], 2.0, None).passed);
        assert!(!refine_verdicts(&[v(1.0, 1.0), v(1.2, 1.0)], 2.0, Some(1.1)).passed);
        assert!(refine_verdicts(&[v(0.0, 1.0), v(0.0, 2.0)], 2.0, Some(1.1)).passed);
    }

    #[test]
    fn delta_zero_collapses_to_seminorm() {
        let spec = ProblemSpec::new(1, 2.5, 3.0, 0.6, 0.3);
        let u = line(128, 1.0, |x| (2.0 * x[0]).sin());
        let fo = FunctionalOptions::default();
        let b = Region::ball([0.0, 0.0], 0.25, 1);
        let lhs = self_improving_lhs(&u, &spec, &[0.0, 0.0], 0.25, 0.0, &fo).unwrap();
        let e = gagliardo_energy(&u, &b, spec.s, spec.p, None, &fo).unwrap() / snapped_measure(&u.grid, &b);
        assert!((lhs - e.powf((spec.p - 1.0) / spec.p)).abs() < 1e-12 * lhs);
    }

    #[test]
    fn sobolev_lhs_monotone_in_eta() {
        let spec = ProblemSpec::new(1, 3.0, 3.5, 0.6, 0.3);
        let u = line(256, 1.0, |x| (3.0 * x[0]).sin() + x[0] * x[0]);
        let o = CheckOptions::default();
        let mut last = 0.0;
        for eta in [1.0, 1.5, 2.0, 2.5, 3.0] {
            let v = sobolev_poincare_check(&u, &spec, &[0.0, 0.0], 0.5, eta, &o).unwrap();
            assert!(v.lhs >= last * (1.0 - 1e-12));
            assert!(v.fitted_constant.is_finite() && v.fitted_constant > 0.0);
            last = v.lhs;
        }
        assert!(sobolev_poincare_check(&u, &spec, &[0.0, 0.0], 0.5, 3.5, &o).is_err());
    }

    #[test]
    fn reverse_holder_scaling_in_sigma() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
        let k = KernelPair::constant(1.0);
        let u = line(256, 1.0, |x| (2.0 * x[0]).sin());
        let f = line(256, 1.0, |_| 1.0);
        let o = CheckOptions::default();
        let x0 = [0.0, 0.0];
        let a = reverse_holder_check(&u, &f, &spec, &k, &x0, 0.125, 2, 0.5, &o).unwrap();
        let b = reverse_holder_check(&u, &f, &spec, &k, &x0, 0.125, 2, 0.25, &o).unwrap();
        assert_eq!(a.lhs, b.lhs);
        let r = |n: &str| b.term(n).unwrap() / a.term(n).unwrap();
        assert!((r("diagonal") - 2f64.powf(spec.p - 1.0)).abs() < 1e-12);
        assert!((r("dyadic_sum") - 0.5).abs() < 1e-12);
        assert!((r("tail") - 0.5).abs() < 1e-12);
        assert!((r("forcing") - 1.0).abs() < 1e-12);
        assert!(reverse_holder_check(&u, &f, &spec, &k, &x0, 0.25, 2, 0.5, &o).is_err());
        assert!(reverse_holder_check(&u, &f, &spec, &k, &x0, 0.125, 5, 0.5, &o).is_err());
    }

    #[test]
    fn boundedness_exponent_branches() {
        let spec = ProblemSpec::new(1, 2.0, 2.5, 0.3, 0.2);
        assert_eq!(boundedness_exponent(&spec).unwrap(), 2.5);
        let fin = spec.clone().with_gamma(4.0);
        let e = boundedness_exponent(&fin).unwrap();
        let ps = 1.0 * 2.0 / (1.0 - 0.6);
        let c = ps / (ps - 1.0);
        assert!((e - 2.5f64.max((2.0 * 4.0 - c) / (4.0 - c))).abs() < 1e-14);
    }

    #[test]
    fn zoom_identity_and_composition() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
        let k = KernelPair::constant(1.0);
        let u = line(256, 1.0, |x| (3.0 * x[0]).cos());
        let f = line(256, 1.0, |x| x[0]);
        let z = [0.125, 0.0];
        let id = zoom_general(&u, &f, &k, &spec, &z, 1.0, 1.0).unwrap();
        for x in [[-0.3, 0.0], [0.5, 0.0], [1.4, 0.0]] {
            let y = [x[0] + z[0], 0.0];
            assert!((id.u.eval(&x) - u.eval(&y)).abs() < 1e-14);
        }
        let a = zoom_normalize(&u, &f, &k, &spec, &z, 0.5).unwrap();
        let ab = zoom_normalize(&a.u, &a.f, &a.kernel, &spec, &[0.0, 0.0], 0.5).unwrap();
        let c = zoom_normalize(&u, &f, &k, &spec, &z, 0.25).unwrap();
        assert_eq!(ab.u.grid, c.u.grid);
        for i in 0..c.u.values.len() {
            assert!((ab.u.values[i] - c.u.values[i]).abs() < 1e-14);
            assert!((ab.f.values[i] - c.f.values[i]).abs() < 1e-14);
        }
        assert!((ab.b_factor * a.b_factor - c.b_factor).abs() < 1e-14);
        assert!(zoom_normalize(&u, &f, &k, &spec, &[0.1, 0.0], 0.5).is_err());
        assert!(zoom_normalize(&u, &f, &k, &spec, &z, 0.3).is_err());
    }

    #[test]
    fn zoom_scales_energy_and_amplitude() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
        let k = KernelPair::constant(1.0);
        let u = line(256, 1.0, |x| (3.0 * x[0]).sin() + x[0]);
        let f = line(256, 1.0, |_| 1.0);
        let (lam, m) = (0.25, 2.0);
        let z = zoom_rescale_m(&u, &f, &k, &spec, &[0.0, 0.0], 4.0 * lam, m).unwrap();
        let fo = FunctionalOptions::default();
        let e0 = gagliardo_energy(&u, &Region::ball([0.0, 0.0], lam, 1), 0.7, 2.0, None, &fo).unwrap();
        let e1 = gagliardo_energy(&z.u, &Region::ball([0.0, 0.0], 1.0, 1), 0.7, 2.0, None, &fo).unwrap();
        assert!((e1 - e0 * lam.powf(1.4 - 1.0) / (m * m)).abs() < 1e-10 * e1);
        assert!((z.f.values[0] - lam.powf(1.4) / m).abs() < 1e-15);
        assert!((z.b_factor - m * lam.powf(1.4 - 1.2)).abs() < 1e-15);
        assert!(!z.b_factor_at_most_one);
    }
}
