//! Seminorms, tails, the measure `mu`, VMO moduli and the dual-pair quantities
//! evaluated on grid functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    abs_pow, dist, validate_spec, DerivedExponents, Grid, GridFunction, KernelPair, ModelError,
    Point, ProblemSpec, Region,
};
use crate::quadrature::{
    dyadic_panels, gauss_legendre, gauss_on, radial_integral, sphere_measure, ExteriorOptions,
    PairRule, QuadError, RuleOptions, Summation,
};

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, FunctionalError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FunctionalOptions {
    pub summation: Summation,
    /// Cell-pair rule; `None` picks the per-dimension default.
    pub rule: Option<RuleOptions>,
    pub exterior: ExteriorOptions,
    pub vmo: VmoOptions,
    /// Largest number of sup points per axis for `b`-weighted tails.
    pub tail_sup_points: usize,
}

impl Default for FunctionalOptions {
    fn default() -> Self {
        FunctionalOptions {
            summation: Summation::Compensated,
            rule: None,
            exterior: ExteriorOptions::default(),
            vmo: VmoOptions::default(),
            tail_sup_points: 129,
        }
    }
}

impl FunctionalOptions {
    pub fn rule_for(&self, dim: usize) -> RuleOptions {
        self.rule.clone().unwrap_or_else(|| RuleOptions::for_dim(dim))
    }
}

/// Errors unless `region` lies in the closed truncation box.
pub fn require_in_box(grid: &Grid, region: &Region, what: &str) -> Result<()> {
    let c = region.center_point();
    let tol = 1e-12 * grid.half_width;
    let inside = (0..grid.dim).all(|a| {
        c[a] - region.radius >= -grid.half_width - tol && c[a] + region.radius <= grid.half_width + tol
    });
    if inside {
        Ok(())
    } else {
        Err(FunctionalError::Precondition(format!(
            "{what} with center {:?} and radius {} is not inside the truncation box [-{}, {}]^{}",
            &c[..grid.dim],
            region.radius,
            grid.half_width,
            grid.half_width,
            grid.dim
        )))
    }
}

// ---------------------------------------------------------------------------
// integrals over regions

/// Quadrature nodes `(cell, xi, weight)` for `int_{region cap box} . dx`.
///
/// Intervals and boxes are intersected exactly with the cells; balls in two
/// dimensions use a 3x3 Gauss rule on cells inside the ball and 8x8 midpoint
/// subcells on cells cut by the sphere.
pub fn region_points(grid: &Grid, region: &Region) -> Vec<(usize, Point, f64)> {
    let h = grid.h();
    let c = region.center_point();
    let gl = gauss_legendre(3);
    let mut out = Vec::new();
    if region.is_interval_like() {
        for k in 0..grid.num_cells() {
            let o = grid.cell_origin(k);
            let mut lo = [0.0; 2];
            let mut hi = [0.0; 2];
            let mut empty = false;
            for a in 0..grid.dim {
                lo[a] = ((c[a] - region.radius - o[a]) / h).max(0.0);
                hi[a] = ((c[a] + region.radius - o[a]) / h).min(1.0);
                empty |= hi[a] <= lo[a];
            }
            if empty {
                continue;
            }
            if grid.dim == 1 {
                for (xi, w) in gauss_on(lo[0], hi[0], &gl) {
                    out.push((k, [xi, 0.0], w * h));
                }
            } else {
                for (eta, we) in gauss_on(lo[1], hi[1], &gl) {
                    for (xi, wx) in gauss_on(lo[0], hi[0], &gl) {
                        out.push((k, [xi, eta], wx * we * h * h));
                    }
                }
            }
        }
        return out;
    }
    const SUB: usize = 8;
    for k in 0..grid.num_cells() {
        let o = grid.cell_origin(k);
        let corners = [[o[0], o[1]], [o[0] + h, o[1]], [o[0], o[1] + h], [o[0] + h, o[1] + h]];
        let inside = corners.iter().filter(|p| region.contains_closed(p)).count();
        // nearest point of the cell to the center decides whether the cell is cut at all
        let nx = c[0].clamp(o[0], o[0] + h);
        let ny = c[1].clamp(o[1], o[1] + h);
        if dist(&[nx, ny], &c) >= region.radius {
            continue;
        }
        if inside == 4 {
            for (eta, we) in gauss_on(0.0, 1.0, &gl) {
                for (xi, wx) in gauss_on(0.0, 1.0, &gl) {
                    out.push((k, [xi, eta], wx * we * h * h));
                }
            }
        } else {
            let w = (h / SUB as f64).powi(2);
            for j in 0..SUB {
                for i in 0..SUB {
                    let xi = [(i as f64 + 0.5) / SUB as f64, (j as f64 + 0.5) / SUB as f64];
                    if region.contains(&grid.cell_point(k, &xi)) {
                        out.push((k, xi, w));
                    }
                }
            }
        }
    }
    out
}

/// `|region cap box|` under [`region_points`].
pub fn region_measure(grid: &Grid, region: &Region) -> f64 {
    region_points(grid, region).iter().map(|p| p.2).sum()
}

/// `avg_{region} f` with `f` given per cell and local coordinate.
pub fn region_average<F: Fn(usize, &Point) -> f64>(grid: &Grid, region: &Region, f: F) -> Result<f64> {
    let pts = region_points(grid, region);
    let m: f64 = pts.iter().map(|p| p.2).sum();
    if m <= 0.0 {
        return Err(FunctionalError::Precondition(format!(
            "region with radius {} has no overlap with the grid",
            region.radius
        )));
    }
    Ok(pts.iter().map(|(k, xi, w)| w * f(*k, xi)).sum::<f64>() / m)
}

/// `(u)_{region}`.
pub fn mean_value(u: &GridFunction, region: &Region) -> Result<f64> {
    region_average(&u.grid, region, |k, xi| u.cell_value(k, xi))
}

/// `avg_{region} |u - shift|^e`.
pub fn power_average(u: &GridFunction, region: &Region, shift: f64, e: f64) -> Result<f64> {
    region_average(&u.grid, region, |k, xi| abs_pow(u.cell_value(k, xi) - shift, e))
}

/// Sum of the cell-pair rule over the cells of `region` (cell centers inside).
fn pair_sum<F>(opts: &FunctionalOptions, grid: &Grid, region: &Region, ell: f64, sigma: f64, phi: F) -> Result<f64>
where
    F: Fn(usize, usize, &Point, &Point) -> f64 + Sync,
{
    let cells = grid.cells_in(region);
    if cells.is_empty() {
        return Err(FunctionalError::Precondition(format!(
            "region with radius {} contains no cell center; refine the grid",
            region.radius
        )));
    }
    let rule = PairRule::new(*grid, ell, sigma, opts.rule_for(grid.dim))?;
    Ok(rule.sum_pairs(&cells, &cells, opts.summation, phi))
}

/// Measure of the cells of `region`, consistent with the pair sums.
pub fn snapped_measure(grid: &Grid, region: &Region) -> f64 {
    grid.cells_in(region).len() as f64 * grid.h().powi(grid.dim as i32)
}

/// `int_{region} int_{region} w(x,y) |u(x)-u(y)|^p |x-y|^{-N-sp} dx dy`, `w = b` when a kernel is given.
pub fn gagliardo_energy(
    u: &GridFunction,
    region: &Region,
    s: f64,
    p: f64,
    weight: Option<&KernelPair>,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let grid = &u.grid;
    require_in_box(grid, region, "seminorm region")?;
    if let Some(k) = weight {
        if k.b_is_zero {
            return Ok(0.0);
        }
    }
    pair_sum(opts, grid, region, p, p * s, |k, l, xi, eta| {
        let d = u.cell_value(k, xi) - u.cell_value(l, eta);
        let w = match weight {
            Some(kp) => kp.b(&grid.cell_point(k, xi), &grid.cell_point(l, eta)),
            None => 1.0,
        };
        w * abs_pow(d, p)
    })
}

/// `[u]_{W^{s,p}(region)}`, or `[u]_{W^{s,p}_b(region)}` with a weight.
pub fn gagliardo_seminorm(
    u: &GridFunction,
    region: &Region,
    s: f64,
    p: f64,
    weight: Option<&KernelPair>,
    opts: &FunctionalOptions,
) -> Result<f64> {
    Ok(gagliardo_energy(u, region, s, p, weight, opts)?.powf(1.0 / p))
}

/// `W_b(x) = int_{R^N \ region} b(x,y) |x-y|^{-N-qt} dy`.
pub fn wb_weight(
    x: &Point,
    region: &Region,
    kernel: &KernelPair,
    q: f64,
    t: f64,
    opts: &FunctionalOptions,
) -> Result<f64> {
    if !region.contains(x) {
        return Err(FunctionalError::Precondition(format!(
            "W_b is evaluated at {:?}, which is not inside the region",
            &x[..region.dim()]
        )));
    }
    if kernel.b_is_zero {
        return Ok(0.0);
    }
    Ok(radial_integral(x, region, region.dim(), q * t, None, |y| kernel.b(x, y), &opts.exterior))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WbNorm {
    pub lp: f64,
    pub lq_wb: f64,
    pub seminorm_p: f64,
    pub seminorm_q_b: f64,
    pub total: f64,
}

/// The four parts of `||u||_{W_b(region)}`.
pub fn wb_norm(
    u: &GridFunction,
    region: &Region,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    opts: &FunctionalOptions,
) -> Result<WbNorm> {
    let grid = &u.grid;
    let pts = region_points(grid, region);
    let lp: f64 = pts.iter().map(|(k, xi, w)| w * abs_pow(u.cell_value(*k, xi), spec.p)).sum();
    let mut lq = 0.0;
    if !kernel.b_is_zero {
        for (k, xi, w) in &pts {
            let x = grid.cell_point(*k, xi);
            if region.contains(&x) {
                lq += w * wb_weight(&x, region, kernel, spec.q, spec.t, opts)? * abs_pow(u.cell_value(*k, xi), spec.q);
            }
        }
    }
    let sp = gagliardo_seminorm(u, region, spec.s, spec.p, None, opts)?;
    let sq = gagliardo_seminorm(u, region, spec.t, spec.q, Some(kernel), opts)?;
    let (lp, lq) = (lp.powf(1.0 / spec.p), lq.powf(1.0 / spec.q));
    Ok(WbNorm {
        lp,
        lq_wb: lq,
        seminorm_p: sp,
        seminorm_q_b: sq,
        total: lp + lq + sp + sq,
    })
}

// ---------------------------------------------------------------------------
// tails

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub value: f64,
    pub center: Vec<f64>,
    pub radius: f64,
    /// `(m, alpha)`.
    pub order: (f64, f64),
    pub weighted: bool,
}

fn check_growth(u: &GridFunction, power: f64, sigma: f64) -> Result<()> {
    let g = power * u.exterior.kappa_g;
    if g >= sigma {
        return Err(FunctionalError::Precondition(format!(
            "exterior growth (m-1) kappa_g = {g} is not below m alpha = {sigma}: the tail diverges"
        )));
    }
    Ok(())
}

/// `int_{R^N \ B_R(x0)} F(y) |x0-y|^{-N-sigma} dy`.
fn tail_integral<F: Fn(&Point) -> f64>(
    grid: &Grid,
    x0: &Point,
    r: f64,
    sigma: f64,
    f: F,
    opts: &FunctionalOptions,
) -> f64 {
    let excl = Region::ball(*x0, r, grid.dim);
    let g = if grid.contains(x0) { Some(grid) } else { None };
    radial_integral(x0, &excl, grid.dim, sigma, g, f, &opts.exterior)
}

/// Sample points for the sup over `x` in b-weighted tails: grid nodes, thinned
/// to at most `per_axis` per axis, plus `x0`.
fn sup_points(grid: &Grid, x0: &Point, per_axis: usize) -> Vec<Point> {
    let n = grid.nodes_per_axis();
    let stride = n.div_ceil(per_axis.max(2)).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).chain(std::iter::once(n - 1)).collect();
    let mut pts = vec![*x0];
    if grid.dim == 1 {
        pts.extend(idx.iter().map(|&i| grid.node(grid.node_index([i, 0]))));
    } else {
        for &j in &idx {
            pts.extend(idx.iter().map(|&i| grid.node(grid.node_index([i, j]))));
        }
    }
    pts
}

/// `T_{m alpha, b}(u - shift; x0, R)`.
#[allow(clippy::too_many_arguments)]
pub fn shifted_tail(
    u: &GridFunction,
    shift: f64,
    x0: &Point,
    r: f64,
    m: f64,
    alpha_ord: f64,
    b: Option<&KernelPair>,
    opts: &FunctionalOptions,
) -> Result<TailReport> {
    if !(m > 1.0) || !(alpha_ord > 0.0) || !(r > 0.0) {
        return Err(FunctionalError::Precondition(format!(
            "tail needs m > 1, alpha > 0 and R > 0 (got m = {m}, alpha = {alpha_ord}, R = {r})"
        )));
    }
    let sigma = m * alpha_ord;
    check_growth(u, m - 1.0, sigma)?;
    let grid = &u.grid;
    let base = |y: &Point| abs_pow(u.eval(y) - shift, m - 1.0);
    let integral = match b {
        None => tail_integral(grid, x0, r, sigma, base, opts),
        Some(k) if k.b_is_zero => 0.0,
        Some(k) => sup_points(grid, x0, opts.tail_sup_points)
            .iter()
            .map(|x| tail_integral(grid, x0, r, sigma, |y| k.b(x, y) * base(y), opts))
            .fold(0.0, f64::max),
    };
    Ok(TailReport {
        value: (r.powf(sigma) * integral).max(0.0).powf(1.0 / (m - 1.0)),
        center: x0[..grid.dim].to_vec(),
        radius: r,
        order: (m, alpha_ord),
        weighted: b.is_some(),
    })
}

/// `T_{m alpha, b}(u; x0, R)`; `b = None` gives `T_{m alpha}`.
pub fn nonlocal_tail(
    u: &GridFunction,
    x0: &Point,
    r: f64,
    m: f64,
    alpha_ord: f64,
    b: Option<&KernelPair>,
    opts: &FunctionalOptions,
) -> Result<TailReport> {
    shifted_tail(u, 0.0, x0, r, m, alpha_ord, b, opts)
}

/// `T(u - shift; x0, R)`, the unpowered sum of the `p`- and `q`-tails with `||b||_inf`.
pub fn combined_tail(
    u: &GridFunction,
    shift: f64,
    x0: &Point,
    r: f64,
    spec: &ProblemSpec,
    kernel: &KernelPair,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let grid = &u.grid;
    check_growth(u, spec.p - 1.0, spec.sigma_p())?;
    let mut v = tail_integral(grid, x0, r, spec.sigma_p(), |y| abs_pow(u.eval(y) - shift, spec.p - 1.0), opts);
    if !kernel.b_is_zero && kernel.b_sup > 0.0 {
        check_growth(u, spec.q - 1.0, spec.sigma_q())?;
        v += kernel.b_sup
            * tail_integral(grid, x0, r, spec.sigma_q(), |y| abs_pow(u.eval(y) - shift, spec.q - 1.0), opts);
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// the measure mu

fn ball_overlap(dim: usize, radius: f64, r: f64) -> f64 {
    if r >= 2.0 * radius {
        return 0.0;
    }
    if dim == 1 {
        2.0 * radius - r
    } else {
        let rr = radius * radius;
        2.0 * rr * (r / (2.0 * radius)).acos() - 0.5 * r * (4.0 * rr - r * r).max(0.0).sqrt()
    }
}

/// `mu(B_R(x0) x B_R(x0)) = int int |x-y|^{-N+eps p} dx dy`, by the radial
/// substitution `r = 2R v^{1/(eps p)}`.
pub fn mu_measure(_x0: &Point, r: f64, epsilon: f64, p: f64, dim: usize) -> f64 {
    let ep = epsilon * p;
    let gl = gauss_legendre(12);
    let mut acc = 0.0;
    // the integrand drops from |B_R| to 0 in a layer near v = 1
    for &(lo, hi) in &dyadic_panels(48) {
        for (v, w) in gauss_on(1.0 - hi, 1.0 - lo, &gl) {
            acc += w * ball_overlap(dim, r, 2.0 * r * v.powf(1.0 / ep));
        }
    }
    sphere_measure(dim) * (2.0 * r).powf(ep) / ep * acc
}

/// The same measure restricted to the cells of `region`, consistent with the pair sums.
pub fn mu_discrete(grid: &Grid, region: &Region, epsilon: f64, p: f64, opts: &FunctionalOptions) -> Result<f64> {
    pair_sum(opts, grid, region, 0.0, -epsilon * p, |_, _, _, _| 1.0)
}

// ---------------------------------------------------------------------------
// dual pair

/// Exponents and pointwise maps of the dual pair `(mu, U)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPairField {
    pub spec: ProblemSpec,
    pub derived: DerivedExponents,
    pub epsilon: f64,
    pub m: f64,
    pub tau: f64,
    pub alpha: f64,
    pub theta_exp: f64,
}

impl DualPairField {
    pub fn default_epsilon(spec: &ProblemSpec) -> f64 {
        0.9 * (spec.s / spec.p).min(1.0 - spec.s)
    }

    pub fn new(spec: &ProblemSpec, epsilon: Option<f64>) -> Result<Self> {
        let derived = validate_spec(spec)?;
        let cap = (spec.s / spec.p).min(1.0 - spec.s);
        let eps = epsilon.unwrap_or_else(|| Self::default_epsilon(spec));
        if !(eps > 0.0 && eps < cap) {
            return Err(FunctionalError::Precondition(format!(
                "epsilon = {eps} must lie in (0, min(s/p, 1-s)) = (0, {cap})"
            )));
        }
        let (n, p, s) = (spec.n(), spec.p, spec.s);
        let m = (n * p + eps * p * p) / (n + s * p + eps * p);
        Ok(DualPairField {
            spec: spec.clone(),
            derived,
            epsilon: eps,
            m,
            tau: s + eps - eps * p / m,
            alpha: m / p,
            theta_exp: (s - eps * (p - 1.0)) / (n + eps * p),
        })
    }

    pub fn p_prime(&self) -> f64 {
        self.derived.p_prime
    }

    /// `p_* + frak A`.
    pub fn f_exponent(&self) -> f64 {
        self.derived.p_star + self.derived.frak_a
    }

    pub fn beta(&self, i: usize) -> f64 {
        let s = self.spec.s;
        2f64.powf(i as f64 * (-s * self.spec.p / (self.spec.p - 1.0) + s + self.epsilon))
    }

    /// `U = |du| / r^{s+eps}`.
    pub fn u_value(&self, du: f64, r: f64) -> f64 {
        du.abs() / r.powf(self.spec.s + self.epsilon)
    }

    /// `B = b r^{(s-t)q + eps(q-p)}`.
    pub fn b_value(&self, b: f64, r: f64) -> f64 {
        let sp = &self.spec;
        b * r.powf((sp.s - sp.t) * sp.q + self.epsilon * (sp.q - sp.p))
    }

    /// `H = U^p + B U^q`.
    pub fn h_value(&self, du: f64, b: f64, r: f64) -> f64 {
        let uu = self.u_value(du, r);
        abs_pow(uu, self.spec.p) + self.b_value(b, r) * abs_pow(uu, self.spec.q)
    }

    /// `G = H^{1/p'}`.
    pub fn g_value(&self, du: f64, b: f64, r: f64) -> f64 {
        self.h_value(du, b, r).powf(1.0 / self.p_prime())
    }

    /// Vanishing order on the diagonal of `G^e` for Lipschitz `u`.
    fn g_order(&self, e: f64) -> f64 {
        e / self.p_prime() * self.spec.p * (1.0 - self.spec.s - self.epsilon)
    }
}

/// `avg_{B(x,R)} G^e dmu` with `B(x,R) = B_R(x) x B_R(x)`.
pub fn g_average(
    u: &GridFunction,
    kernel: &KernelPair,
    field: &DualPairField,
    x: &Point,
    r: f64,
    e: f64,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let grid = &u.grid;
    let region = Region::ball(*x, r, grid.dim);
    require_in_box(grid, &region, "dual-pair ball")?;
    let ep = field.epsilon * field.spec.p;
    let num = pair_sum(opts, grid, &region, field.g_order(e), -ep, |k, l, xi, eta| {
        let (px, py) = (grid.cell_point(k, xi), grid.cell_point(l, eta));
        let rr = dist(&px, &py);
        if rr == 0.0 {
            return 0.0;
        }
        let b = if kernel.b_is_zero { 0.0 } else { kernel.b(&px, &py) };
        field.h_value(u.cell_value(k, xi) - u.cell_value(l, eta), b, rr).powf(e / field.p_prime())
    })?;
    Ok(num / mu_discrete(grid, &region, field.epsilon, field.spec.p, opts)?)
}

/// `avg_{B(x,R)} F^e dmu` with `F(x,y) = |f(x)|`.
pub fn f_average(
    f: &GridFunction,
    field: &DualPairField,
    x: &Point,
    r: f64,
    e: f64,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let grid = &f.grid;
    let region = Region::ball(*x, r, grid.dim);
    require_in_box(grid, &region, "dual-pair ball")?;
    let ep = field.epsilon * field.spec.p;
    let num = pair_sum(opts, grid, &region, 0.0, -ep, |k, _, xi, _| abs_pow(f.cell_value(k, xi), e))?;
    Ok(num / mu_discrete(grid, &region, field.epsilon, field.spec.p, opts)?)
}

fn ball_mean(u: &GridFunction, x: &Point, r: f64) -> Result<f64> {
    mean_value(u, &Region::ball(*x, r, u.grid.dim))
}

/// The refined tail `Tail(x, R)` with the dyadic count `l` supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn refined_tail(
    u: &GridFunction,
    kernel: &KernelPair,
    field: &DualPairField,
    x: &Point,
    r: f64,
    l: usize,
    rho0: f64,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let top = 2f64.powi(l as i32) * r;
    if !(0.5 * rho0 <= top && top < rho0) {
        return Err(FunctionalError::Precondition(format!(
            "2^l R = {top} must satisfy rho0/2 <= 2^l R < rho0 with rho0 = {rho0}"
        )));
    }
    let (p, pp, a) = (field.spec.p, field.p_prime(), field.alpha);
    let mut sum = 0.0;
    for i in 0..=l {
        let avg = g_average(u, kernel, field, x, 2f64.powi(i as i32) * r, pp * a, opts)?;
        sum += field.beta(i).powf(p - 1.0) * avg.powf(1.0 / (pp * a));
    }
    let eps = field.epsilon;
    let mu = mu_measure(x, r, eps, p, u.grid.dim);
    let shift = ball_mean(u, x, top)?;
    let tail = combined_tail(u, shift, x, top, &field.spec, kernel, opts)?;
    Ok(sum + eps.powf(1.0 / pp) * (eps * mu).powf(field.theta_exp) * tail)
}

/// `Upsilon(x, R)` with the shift `delta_f` taken as 0.
pub fn upsilon(f: &GridFunction, field: &DualPairField, x: &Point, r: f64, opts: &FunctionalOptions) -> Result<f64> {
    let e = field.f_exponent();
    Ok(f_average(f, field, x, r, e, opts)?.powf(1.0 / e))
}

/// `Psi_M(x, R)`.
#[allow(clippy::too_many_arguments)]
pub fn psi_m(
    u: &GridFunction,
    f: &GridFunction,
    kernel: &KernelPair,
    field: &DualPairField,
    x: &Point,
    r: f64,
    big_m: f64,
    opts: &FunctionalOptions,
) -> Result<f64> {
    let (pp, e) = (field.p_prime(), field.f_exponent());
    let g = g_average(u, kernel, field, x, r, pp, opts)?.powf(1.0 / pp);
    let mu = mu_measure(x, r, field.epsilon, field.spec.p, u.grid.dim);
    let fa = f_average(f, field, x, r, e, opts)?.powf(1.0 / e);
    Ok(g + big_m * mu.powf(field.theta_exp) / field.epsilon.powf(1.0 / e - 1.0 / pp) * fa)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Xi0 {
    pub upsilon: f64,
    pub psi1: f64,
    pub tail: f64,
    pub value: f64,
}

/// `Xi_0 = Upsilon(x0, 2 rho0) + Psi_1(x0, 2 rho0) + T(u - (u)_{2 rho0, x0}; x0, 2 rho0)`.
pub fn xi0(
    u: &GridFunction,
    f: &GridFunction,
    kernel: &KernelPair,
    field: &DualPairField,
    x0: &Point,
    rho0: f64,
    opts: &FunctionalOptions,
) -> Result<Xi0> {
    let r = 2.0 * rho0;
    require_in_box(&u.grid, &Region::ball(*x0, r, u.grid.dim), "B_{2 rho0}(x0)")?;
    let ups = upsilon(f, field, x0, r, opts)?;
    let psi1 = psi_m(u, f, kernel, field, x0, r, 1.0, opts)?;
    let shift = ball_mean(u, x0, r)?;
    let tail = combined_tail(u, shift, x0, r, &field.spec, kernel, opts)?;
    Ok(Xi0 {
        upsilon: ups,
        psi1,
        tail,
        value: ups + psi1 + tail,
    })
}

// ---------------------------------------------------------------------------
// VMO moduli

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VmoOptions {
    /// Sampled center pairs `(x, y)`.
    pub centers: usize,
    /// Dyadic radii `R 2^{-j}`, `j < radii`.
    pub radii: usize,
    /// Magnitudes of the `(w, z)` lattice; the lattice is these values with both
    /// signs and 0, cut at `M`, so the sampled sets are nested in `M`.
    pub values: Vec<f64>,
    /// Midpoint samples per axis in each ball.
    pub points_per_axis: usize,
    pub seed: u64,
}

impl Default for VmoOptions {
    fn default() -> Self {
        VmoOptions {
            centers: 16,
            radii: 5,
            values: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            points_per_axis: 24,
            seed: 7,
        }
    }
}

fn ball_offsets(dim: usize, k: usize) -> Vec<Point> {
    let c = |i: usize| -1.0 + (2.0 * i as f64 + 1.0) / k as f64;
    if dim == 1 {
        (0..k).map(|i| [c(i), 0.0]).collect()
    } else {
        let mut v = Vec::new();
        for j in 0..k {
            for i in 0..k {
                let z = [c(i), c(j)];
                if z[0] * z[0] + z[1] * z[1] < 1.0 {
                    v.push(z);
                }
            }
        }
        v
    }
}

/// `avg_{B_r(x0)} avg_{B_r(y0)} |F - (F)|` by midpoint sampling.
pub fn mean_oscillation<F: Fn(&Point, &Point) -> f64>(dim: usize, x0: &Point, y0: &Point, r: f64, k: usize, f: F) -> f64 {
    let off = ball_offsets(dim, k);
    let pts = |c: &Point| -> Vec<Point> { off.iter().map(|o| [c[0] + r * o[0], c[1] + r * o[1]]).collect() };
    let (xs, ys) = (pts(x0), pts(y0));
    let mut vals: Vec<f64> = xs.iter().flat_map(|x| ys.iter().map(|y| f(x, y))).collect();
    // centering at a sample keeps constant fields exactly at zero
    let v0 = vals[0];
    vals.iter_mut().for_each(|v| *v -= v0);
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).abs()).sum::<f64>() / vals.len() as f64
}

fn center_offsets(dim: usize, count: usize, seed: u64) -> Vec<(Point, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || loop {
        let z = [rng.gen_range(-1.0..1.0), if dim == 2 { rng.gen_range(-1.0..1.0) } else { 0.0 }];
        if z[0] * z[0] + z[1] * z[1] < 1.0 {
            return z;
        }
    };
    let mut v = vec![([0.0, 0.0], [0.0, 0.0])];
    while v.len() < count.max(1) {
        let a = unit();
        let b = unit();
        v.push((a, b));
    }
    v
}

fn ladder(region: &Region, rho: f64, count: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..count)
        .map(|j| region.radius * 0.5f64.powi(j as i32))
        .filter(|&r| r <= rho * (1.0 + 1e-12))
        .collect();
    if v.is_empty() {
        vec![rho]
    } else {
        v
    }
}

/// Sup of the mean oscillation of `f` over the ladder radii `<= rho` and sampled
/// center pairs with both balls inside `region`.
fn vmo_generic<F: Fn(&Point, &Point) -> f64>(region: &Region, rho: f64, o: &VmoOptions, f: F) -> f64 {
    let dim = region.dim();
    let c = region.center_point();
    let centers = center_offsets(dim, o.centers, o.seed);
    let mut best = 0.0f64;
    for r in ladder(region, rho, o.radii) {
        let room = (region.radius - r).max(0.0);
        for (a, b) in &centers {
            let x0 = [c[0] + room * a[0], c[1] + room * a[1]];
            let y0 = [c[0] + room * b[0], c[1] + room * b[1]];
            best = best.max(mean_oscillation(dim, &x0, &y0, r, o.points_per_axis, &f));
        }
    }
    best
}

fn value_lattice(values: &[f64], m: f64) -> Vec<f64> {
    let mut v = vec![0.0];
    for &a in values.iter().filter(|&&a| a <= m) {
        v.push(a);
        v.push(-a);
    }
    v
}

fn require_rho(region: &Region, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= region.radius * (1.0 + 1e-12)) {
        return Err(FunctionalError::Precondition(format!(
            "VMO radius rho = {rho} must lie in (0, region radius {}]",
            region.radius
        )));
    }
    Ok(())
}

/// `nu_{a,M}(rho)` sampled over the `(w, z)` lattice cut at `M`.
pub fn vmo_modulus(kernel: &KernelPair, region: &Region, rho: f64, big_m: f64, opts: &VmoOptions) -> Result<f64> {
    require_rho(region, rho)?;
    let lat = value_lattice(&opts.values, big_m);
    let mut best = 0.0f64;
    for &w in &lat {
        for &z in &lat {
            best = best.max(vmo_generic(region, rho, opts, |x, y| kernel.a(x, y, w, z)));
        }
    }
    Ok(best)
}

/// Modulus of `a(., ., w, z)` at frozen values.
pub fn vmo_modulus_at(kernel: &KernelPair, region: &Region, rho: f64, w: f64, z: f64, opts: &VmoOptions) -> Result<f64> {
    require_rho(region, rho)?;
    Ok(vmo_generic(region, rho, opts, |x, y| kernel.a(x, y, w, z)))
}

/// Modulus of `b`.
pub fn vmo_modulus_b(kernel: &KernelPair, region: &Region, rho: f64, opts: &VmoOptions) -> Result<f64> {
    require_rho(region, rho)?;
    Ok(vmo_generic(region, rho, opts, |x, y| kernel.b(x, y)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedVmo {
    /// Sampled modulus of `A(x,y) = a(x,y,u(x),u(y))`.
    pub modulus: f64,
    /// Max over sampled balls of `2 avg avg omega((|u(x)-u(x0)| + |u(y)-u(y0)|)/2)`
    /// plus the oscillation of `a` frozen at `(u(x0), u(y0))`.
    pub bound: f64,
    /// `nu_{a,M}(rho)` with `M = 2 sup_region |u|`.
    pub nu: f64,
    pub big_m: f64,
}

pub fn composed_vmo_modulus(
    kernel: &KernelPair,
    u: &GridFunction,
    region: &Region,
    rho: f64,
    opts: &VmoOptions,
) -> Result<ComposedVmo> {
    require_rho(region, rho)?;
    let dim = region.dim();
    let sup_u = u
        .grid
        .nodes_in_closed(region)
        .iter()
        .map(|&i| u.values[i].abs())
        .fold(0.0, f64::max);
    let big_m = 2.0 * sup_u;
    let a_comp = |x: &Point, y: &Point| kernel.a(x, y, u.eval(x), u.eval(y));
    let modulus = vmo_generic(region, rho, opts, a_comp);
    let c = region.center_point();
    let centers = center_offsets(dim, opts.centers, opts.seed);
    let off = ball_offsets(dim, opts.points_per_axis);
    let mut bound = 0.0f64;
    for r in ladder(region, rho, opts.radii) {
        let room = (region.radius - r).max(0.0);
        for (a, b) in &centers {
            let x0 = [c[0] + room * a[0], c[1] + room * a[1]];
            let y0 = [c[0] + room * b[0], c[1] + room * b[1]];
            let (u0, v0) = (u.eval(&x0), u.eval(&y0));
            let mut om = 0.0;
            for ox in &off {
                let ux = u.eval(&[x0[0] + r * ox[0], x0[1] + r * ox[1]]);
                for oy in &off {
                    let uy = u.eval(&[y0[0] + r * oy[0], y0[1] + r * oy[1]]);
                    om += kernel.omega(0.5 * ((ux - u0).abs() + (uy - v0).abs()));
                }
            }
            om /= (off.len() * off.len()) as f64;
            let frozen = mean_oscillation(dim, &x0, &y0, r, opts.points_per_axis, |x, y| kernel.a(x, y, u0, v0));
            bound = bound.max(2.0 * om + frozen);
        }
    }
    let nu = vmo_modulus(kernel, region, rho, big_m, opts)?;
    Ok(ComposedVmo {
        modulus,
        bound,
        nu,
        big_m,
    })
}

// ---------------------------------------------------------------------------
// iteration lemma

/// Constant `c(eta, alpha)` of the iteration lemma: from
/// `phi(r) <= eta phi(rho) + M (rho - r)^{-alpha}` on `[t1, t2]` follows
/// `phi(t1) <= c M (t2 - t1)^{-alpha}`. Uses the ratio `lambda` with
/// `lambda^alpha = (1 + eta) / 2`.
pub fn iteration_constant(eta: f64, alpha: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0 && alpha > 0.0) {
        return Err(FunctionalError::Precondition(format!(
            "iteration lemma needs eta in (0,1) and alpha > 0 (got eta = {eta}, alpha = {alpha})"
        )));
    }
    let lambda = ((1.0 + eta) / 2.0).powf(1.0 / alpha);
    Ok((1.0 - lambda).powf(-alpha) * (1.0 + eta) / (1.0 - eta))
}

/// One row of the functional report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalRow {
    pub name: String,
    pub params: String,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Exterior, KernelSpec, ACoef, BCoef};
    use crate::quadrature::{pair_integral, PairOptions};

    fn opts() -> FunctionalOptions {
        FunctionalOptions::default()
    }

    #[test]
    fn seminorm_of_constant_and_linear() {
        let g = Grid::new(1, 64, 1.0).unwrap();
        let unit = Region::ball([0.5, 0.0], 0.5, 1);
        let c = GridFunction::from_fn(g, |_| 2.0, Exterior::constant(2.0));
        assert_eq!(gagliardo_seminorm(&c, &unit, 0.25, 2.0, None, &opts()).unwrap(), 0.0);
        let u = GridFunction::from_fn(g, |x| x[0], Exterior::constant(0.0));
        let v = gagliardo_energy(&u, &unit, 0.25, 2.0, None, &opts()).unwrap();
        let oracle = pair_integral(
            |x, y| (x[0] - y[0]).powi(2),
            &Region::ball([0.5, 0.0], 0.5, 1),
            &Region::ball([0.5, 0.0], 0.5, 1),
            0.5,
            &PairOptions::default(),
        )
        .unwrap();
        assert!((v - oracle).abs() < 1e-3 * oracle, "{v} {oracle}");
    }

    #[test]
    fn seminorm_scaling_law() {
        let f = |x: &Point| (3.0 * x[0]).sin() + x[0] * x[0];
        let g1 = Grid::new(1, 64, 1.0).unwrap();
        let g2 = Grid::new(1, 64, 0.5).unwrap();
        let u = GridFunction::from_fn(g1, f, Exterior::constant(0.0));
        let v = GridFunction::from_fn(g2, |x| f(&[2.0 * x[0], 0.0]), Exterior::constant(0.0));
        let (s, p) = (0.4, 3.0);
        let a = gagliardo_seminorm(&u, &Region::ball([0.0, 0.0], 0.75, 1), s, p, None, &opts()).unwrap();
        let b = gagliardo_seminorm(&v, &Region::ball([0.0, 0.0], 0.375, 1), s, p, None, &opts()).unwrap();
        assert!((b - 2f64.powf(s - 1.0 / p) * a).abs() < 1e-12 * a);
    }

    #[test]
    fn wb_closed_forms() {
        let k = KernelSpec { a: ACoef::Constant { value: 1.0 }, b: BCoef::Constant { value: 1.0 } }.build();
        let o = opts();
        let v = wb_weight(&[0.0, 0.0], &Region::ball([0.0, 0.0], 1.0, 1), &k, 2.0, 0.5, &o).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let v = wb_weight(&[0.0, 0.0], &Region::ball([0.0, 0.0], 2.0, 1), &k, 2.0, 0.5, &o).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let z = KernelPair::constant(1.0);
        assert_eq!(wb_weight(&[0.0, 0.0], &Region::ball([0.0, 0.0], 1.0, 1), &z, 2.0, 0.5, &o).unwrap(), 0.0);
    }

    #[test]
    fn tail_closed_form_and_zero() {
        let g = Grid::new(1, 64, 2.0).unwrap();
        let one = GridFunction::from_fn(g, |_| 1.0, Exterior::constant(1.0));
        let t = nonlocal_tail(&one, &[0.0, 0.0], 1.0, 2.0, 0.5, None, &opts()).unwrap();
        assert!((t.value - 2.0).abs() < 1e-10, "{}", t.value);
        let zero = GridFunction::from_fn(g, |_| 0.0, Exterior::constant(0.0));
        assert_eq!(nonlocal_tail(&zero, &[0.0, 0.0], 1.0, 2.0, 0.5, None, &opts()).unwrap().value, 0.0);
    }

    #[test]
    fn divergent_tail_rejected() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let ext = Exterior::function("grow", 1.0, 2.0, |x| x[0] * x[0]);
        let u = GridFunction::from_exterior(g, ext);
        assert!(nonlocal_tail(&u, &[0.0, 0.0], 0.5, 2.0, 0.5, None, &opts()).is_err());
    }

    #[test]
    fn mu_doubling_and_closed_form() {
        for dim in [1, 2] {
            let (eps, p) = (0.1, 2.0);
            let a = mu_measure(&[0.0, 0.0], 0.3, eps, p, dim);
            let b = mu_measure(&[0.0, 0.0], 0.6, eps, p, dim);
            let k = 2f64.powf(dim as f64 + p * eps);
            assert!((b / a - k).abs() < 1e-10 * k);
        }
        let (r, ep) = (0.3f64, 0.2f64);
        let exact = 2.0 * (2.0 * r).powf(1.0 + ep) / (ep * (1.0 + ep));
        let v = mu_measure(&[0.0, 0.0], r, 0.1, 2.0, 1);
        assert!((v - exact).abs() < 1e-10 * exact, "{v} {exact}");
    }

    #[test]
    fn dual_pair_exponent_identities() {
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.7, 0.4);
        let f = DualPairField::new(&spec, None).unwrap();
        assert!(f.m > 1.0 && f.m < spec.p);
        let n = spec.n();
        assert!((n * f.m / (n - f.tau * f.m) - spec.p).abs() < 1e-12);
        assert!(f.beta(1) < 1.0);
        assert!(DualPairField::new(&spec, Some(0.5)).is_err());
    }

    #[test]
    fn vmo_of_constant_and_checkerboard() {
        let region = Region::ball([0.0, 0.0], 0.8, 1);
        let o = VmoOptions::default();
        let c = KernelPair::constant(1.5);
        assert_eq!(vmo_modulus(&c, &region, 0.4, 1.0, &o).unwrap(), 0.0);
        let k = KernelSpec { a: ACoef::Checkerboard { side: 0.1, low: 1.0, high: 2.0 }, b: BCoef::Zero }.build();
        assert!(vmo_modulus(&k, &region, 0.1, 1.0, &o).unwrap() > 0.2);
    }

    #[test]
    fn iteration_constant_formula() {
        let c = iteration_constant(0.5, 1.0).unwrap();
        assert!((c - 1.0 / 0.25 * 1.5 / 0.5).abs() < 1e-12);
        assert!(iteration_constant(1.0, 1.0).is_err());
    }
}
