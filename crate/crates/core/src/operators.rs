//! Discrete weak form of the double-phase operator on nodal hat functions.
//!
//! Trial functions are interpolants on a [`Grid`] that equal the exterior data
//! `g` at every node outside the open domain; test functions are the hats of
//! the remaining (free) nodes. Pairs with both points in the box are handled by
//! a [`PairRule`], pairs with one point beyond the box by the exterior ray rule.
//! Only cells touching a free node ("active" cells) can carry a test function.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    abs_pow, bracket_power, validate_spec, Exterior, Grid, GridFunction, KernelPair, ModelError,
    Point, ProblemSpec, Region,
};
use crate::quadrature::{
    exterior_points, ExteriorOptions, PairRule, QuadError, RuleOptions, TensorRule,
};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("X_g constraint violated: {0}")]
    Constraint(String),
    #[error("{0}")]
    Mode(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, OperatorError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssemblyOptions {
    /// Cell-pair rule; `None` picks the per-dimension default.
    pub rule: Option<RuleOptions>,
    /// Ray rule beyond the box; `None` picks the per-dimension default.
    pub exterior: Option<ExteriorOptions>,
    /// Gauss points per axis for single-cell integrals.
    pub cell_order: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            rule: None,
            exterior: None,
            cell_order: 3,
        }
    }
}

impl AssemblyOptions {
    fn exterior_for(&self, dim: usize) -> ExteriorOptions {
        self.exterior.clone().unwrap_or(if dim == 1 {
            ExteriorOptions {
                panels: 16,
                order: 4,
                angular: 1,
                segment_order: 3,
            }
        } else {
            ExteriorOptions {
                panels: 8,
                order: 3,
                angular: 3,
                segment_order: 3,
            }
        })
    }
}

struct Phase {
    ell: f64,
    sigma: f64,
    is_a: bool,
    rule: PairRule,
}

/// Which cell of a pair carries the test function.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    X,
    Y,
}

/// Interior (`Omega' x Omega'`) and exterior contributions of the operator,
/// and the load, per free node.
#[derive(Clone, Debug)]
pub struct ResidualSplit {
    pub interior: Vec<f64>,
    pub exterior: Vec<f64>,
    pub load: Vec<f64>,
}

impl ResidualSplit {
    pub fn total(&self) -> Vec<f64> {
        (0..self.load.len())
            .map(|i| self.interior[i] + self.exterior[i] - self.load[i])
            .collect()
    }
}

pub struct WeakFormAssembly {
    pub spec: ProblemSpec,
    pub kernel: KernelPair,
    pub domain: Region,
    pub grid: Grid,
    pub exterior: Exterior,
    pub opts: AssemblyOptions,
    phases: Vec<Phase>,
    free: Vec<usize>,
    dof_of: Vec<Option<usize>>,
    active: Vec<usize>,
    is_active: Vec<bool>,
    cell_rule: TensorRule,
    ext_opts: ExteriorOptions,
    /// Nodal values used as the `u`-arguments of `a` in frozen mode.
    frozen: Option<Vec<f64>>,
}

impl std::fmt::Debug for WeakFormAssembly {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WeakFormAssembly")
            .field("spec", &self.spec)
            .field("kernel", &self.kernel)
            .field("domain", &self.domain)
            .field("grid", &self.grid)
            .field("free", &self.free.len())
            .field("frozen", &self.frozen.is_some())
            .finish()
    }
}

/// `a^e - b^e` for `a, b >= 0`, accurate when `a` and `b` are close.
pub fn pow_diff(a: f64, b: f64, e: f64) -> f64 {
    if b == 0.0 {
        abs_pow(a, e)
    } else if a == 0.0 {
        -abs_pow(b, e)
    } else {
        abs_pow(b, e) * (e * ((a - b) / b).ln_1p()).exp_m1()
    }
}

impl WeakFormAssembly {
    /// Live-kernel assembly for `domain`, which must lie inside the box of `grid`.
    pub fn new(
        spec: &ProblemSpec,
        kernel: &KernelPair,
        domain: &Region,
        grid: Grid,
        exterior: &Exterior,
        opts: &AssemblyOptions,
    ) -> Result<Self> {
        validate_spec(spec)?;
        if spec.dim != grid.dim || domain.dim() != grid.dim {
            return Err(OperatorError::Precondition(format!(
                "dimension mismatch: spec {}, grid {}, domain {}",
                spec.dim,
                grid.dim,
                domain.dim()
            )));
        }
        let c = domain.center_point();
        let tol = 1e-12 * grid.half_width;
        if (0..grid.dim).any(|a| (c[a].abs() + domain.radius) > grid.half_width + tol) {
            return Err(OperatorError::Precondition(format!(
                "domain with radius {} is not contained in the collar box [-{}, {}]^{}",
                domain.radius, grid.half_width, grid.half_width, grid.dim
            )));
        }
        exterior.check_tails(spec)?;
        let rule_opts = opts.rule.clone().unwrap_or_else(|| RuleOptions::for_dim(grid.dim));
        let mut phases = vec![Phase {
            ell: spec.p,
            sigma: spec.sigma_p(),
            is_a: true,
            rule: PairRule::new(grid, spec.p, spec.sigma_p(), rule_opts.clone())?,
        }];
        if !kernel.b_is_zero {
            phases.push(Phase {
                ell: spec.q,
                sigma: spec.sigma_q(),
                is_a: false,
                rule: PairRule::new(grid, spec.q, spec.sigma_q(), rule_opts)?,
            });
        }
        let mut dof_of = vec![None; grid.num_nodes()];
        let mut free = Vec::new();
        for i in 0..grid.num_nodes() {
            if domain.contains(&grid.node(i)) {
                dof_of[i] = Some(free.len());
                free.push(i);
            }
        }
        if free.is_empty() {
            return Err(OperatorError::Precondition(format!(
                "domain with radius {} contains no grid node; refine the grid",
                domain.radius
            )));
        }
        let npc = grid.nodes_per_cell();
        let mut is_active = vec![false; grid.num_cells()];
        let mut active = Vec::new();
        for k in 0..grid.num_cells() {
            if grid.cell_nodes(k)[..npc].iter().any(|&i| dof_of[i].is_some()) {
                is_active[k] = true;
                active.push(k);
            }
        }
        Ok(WeakFormAssembly {
            spec: spec.clone(),
            kernel: kernel.clone(),
            domain: domain.clone(),
            grid,
            exterior: exterior.clone(),
            opts: opts.clone(),
            phases,
            free,
            dof_of,
            active,
            is_active,
            cell_rule: TensorRule::new(grid.dim, opts.cell_order),
            ext_opts: opts.exterior_for(grid.dim),
            frozen: None,
        })
    }

    /// The collar `Omega'`: the truncation box.
    pub fn collar(&self) -> Region {
        self.grid.box_region()
    }

    pub fn num_dofs(&self) -> usize {
        self.free.len()
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    pub fn dof_of(&self, node: usize) -> Option<usize> {
        self.dof_of[node]
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    /// Freezes `a(x, y, u_k(x), u_k(y))` at the given state.
    pub fn freeze(&mut self, state: &GridFunction) -> Result<()> {
        self.check_constraint(state)?;
        self.frozen = Some(state.values.clone());
        Ok(())
    }

    pub fn frozen_at(mut self, state: &GridFunction) -> Result<Self> {
        self.freeze(state)?;
        Ok(self)
    }

    pub fn unfreeze(&mut self) {
        self.frozen = None;
    }

    pub fn frozen_state(&self) -> Option<&[f64]> {
        self.frozen.as_deref()
    }

    /// Interpolant of the exterior data with free nodal values from `f`.
    pub fn constrained<F: Fn(&Point) -> f64>(&self, f: F) -> GridFunction {
        let mut u = GridFunction::from_exterior(self.grid, self.exterior.clone());
        for &i in &self.free {
            u.values[i] = f(&self.grid.node(i));
        }
        u
    }

    pub fn dofs(&self, u: &GridFunction) -> Vec<f64> {
        self.free.iter().map(|&i| u.values[i]).collect()
    }

    pub fn with_dofs(&self, u: &GridFunction, x: &[f64]) -> GridFunction {
        let mut v = u.clone();
        for (d, &i) in self.free.iter().enumerate() {
            v.values[i] = x[d];
        }
        v
    }

    /// Errors unless `u` lives on this grid and equals `g` at every non-free node.
    pub fn check_constraint(&self, u: &GridFunction) -> Result<()> {
        if u.grid != self.grid {
            return Err(OperatorError::Constraint(
                "function lives on a different grid than the assembly".into(),
            ));
        }
        for i in 0..self.grid.num_nodes() {
            if self.dof_of[i].is_some() {
                continue;
            }
            let x = self.grid.node(i);
            let g = self.exterior.eval(&x);
            if (u.values[i] - g).abs() > 1e-12 * (1.0 + g.abs()) {
                return Err(OperatorError::Constraint(format!(
                    "u = {} differs from the exterior data g = {g} at node {i} ({:?}) outside the domain",
                    u.values[i],
                    &x[..self.grid.dim]
                )));
            }
        }
        Ok(())
    }

    fn require_frozen(&self, what: &str) -> Result<&[f64]> {
        self.frozen.as_deref().ok_or_else(|| {
            OperatorError::Mode(format!(
                "{what} needs frozen coefficients; call freeze() first"
            ))
        })
    }

    fn interp(&self, values: &[f64], k: usize, xi: &Point) -> f64 {
        let nodes = self.grid.cell_nodes(k);
        let sh = self.grid.shape(xi);
        (0..self.grid.nodes_per_cell()).map(|a| sh[a] * values[nodes[a]]).sum()
    }

    /// Value used for the `w`/`z` slot of `a`: frozen state if any, else `u`.
    #[inline]
    fn slot(&self, u: f64, k: usize, xi: &Point) -> f64 {
        match &self.frozen {
            Some(v) => self.interp(v, k, xi),
            None => u,
        }
    }

    #[inline]
    fn coef(&self, phase: &Phase, x: &Point, y: &Point, wx: f64, wy: f64) -> f64 {
        if phase.is_a {
            self.kernel.a(x, y, wx, wy)
        } else {
            self.kernel.b(x, y)
        }
    }

    fn cell_weight(&self) -> f64 {
        self.grid.h().powi(self.grid.dim as i32)
    }

    /// Calls `f(phase, l, xi, eta, w, x, y)` for all pair nodes with the
    /// x-cell `k` (side X) or the y-cell `k` (side Y).
    fn visit_pairs<F>(&self, k: usize, side: Side, mut f: F)
    where
        F: FnMut(&Phase, usize, &Point, &Point, f64),
    {
        for ph in &self.phases {
            for l in 0..self.grid.num_cells() {
                match side {
                    Side::X => ph.rule.visit(k, l, |xi, eta, w| f(ph, l, xi, eta, w)),
                    Side::Y => ph.rule.visit(l, k, |xi, eta, w| f(ph, l, xi, eta, w)),
                }
            }
        }
    }

    /// Calls `f(phase, xi, z, w)` for the cell points `xi` of `k` and exterior
    /// points `z` beyond the box, `w` including both weights.
    fn visit_exterior<F>(&self, k: usize, mut f: F)
    where
        F: FnMut(&Phase, &Point, &Point, f64),
    {
        let boxr = self.grid.box_region();
        let hn = self.cell_weight();
        for ph in &self.phases {
            for (xi, wx) in self.cell_rule.pts.iter().zip(&self.cell_rule.w) {
                let x = self.grid.cell_point(k, xi);
                for (z, wz) in exterior_points(&x, &boxr, self.grid.dim, ph.sigma, &self.ext_opts) {
                    f(ph, xi, &z, wx * hn * wz);
                }
            }
        }
    }

    /// Operator contributions of one active cell as test cell, per local node.
    /// `scale` multiplies every pair term; the X side carries `+phi(x)`, the Y
    /// side `-phi(y)`.
    fn cell_operator(&self, u: &GridFunction, k: usize, side: Side, scale: f64) -> ([f64; 4], [f64; 4]) {
        let g = &self.grid;
        let npc = g.nodes_per_cell();
        let mut inner = [0.0; 4];
        let mut outer = [0.0; 4];
        self.visit_pairs(k, side, |ph, l, xi, eta, w| {
            let (kx, ky) = match side {
                Side::X => (k, l),
                Side::Y => (l, k),
            };
            let ux = u.cell_value(kx, xi);
            let uy = u.cell_value(ky, eta);
            let x = g.cell_point(kx, xi);
            let y = g.cell_point(ky, eta);
            let c = self.coef(ph, &x, &y, self.slot(ux, kx, xi), self.slot(uy, ky, eta));
            let v = scale * w * c * bracket_power(ux - uy, ph.ell);
            let (sh, sgn) = match side {
                Side::X => (g.shape(xi), 1.0),
                Side::Y => (g.shape(eta), -1.0),
            };
            for a in 0..npc {
                inner[a] += sgn * v * sh[a];
            }
        });
        self.visit_exterior(k, |ph, xi, z, w| {
            let p = g.cell_point(k, xi);
            let up = u.cell_value(k, xi);
            let gz = self.exterior.eval(z);
            let sp = self.slot(up, k, xi);
            let sh = g.shape(xi);
            let v = match side {
                Side::X => scale * w * self.coef(ph, &p, z, sp, gz) * bracket_power(up - gz, ph.ell),
                Side::Y => -scale * w * self.coef(ph, z, &p, gz, sp) * bracket_power(gz - up, ph.ell),
            };
            for a in 0..npc {
                outer[a] += v * sh[a];
            }
        });
        (inner, outer)
    }

    fn scatter(&self, locals: &[(usize, [f64; 4])]) -> Vec<f64> {
        let npc = self.grid.nodes_per_cell();
        let mut out = vec![0.0; self.free.len()];
        for (k, loc) in locals {
            let nodes = self.grid.cell_nodes(*k);
            for a in 0..npc {
                if let Some(d) = self.dof_of[nodes[a]] {
                    out[d] += loc[a];
                }
            }
        }
        out
    }

    fn operator_parts(&self, u: &GridFunction, side: Side, scale: f64) -> (Vec<f64>, Vec<f64>) {
        let parts: Vec<(usize, [f64; 4], [f64; 4])> = self
            .active
            .par_iter()
            .map(|&k| {
                let (i, o) = self.cell_operator(u, k, side, scale);
                (k, i, o)
            })
            .collect();
        let inner: Vec<(usize, [f64; 4])> = parts.iter().map(|p| (p.0, p.1)).collect();
        let outer: Vec<(usize, [f64; 4])> = parts.iter().map(|p| (p.0, p.2)).collect();
        (self.scatter(&inner), self.scatter(&outer))
    }

    /// `int f phi_i` with the interpolant of `f`.
    pub fn load(&self, f: &GridFunction) -> Result<Vec<f64>> {
        if f.grid != self.grid {
            return Err(OperatorError::Precondition(
                "forcing lives on a different grid than the assembly".into(),
            ));
        }
        let hn = self.cell_weight();
        let npc = self.grid.nodes_per_cell();
        let locals: Vec<(usize, [f64; 4])> = self
            .active
            .iter()
            .map(|&k| {
                let mut loc = [0.0; 4];
                for (xi, w) in self.cell_rule.pts.iter().zip(&self.cell_rule.w) {
                    let fv = f.cell_value(k, xi);
                    let sh = self.grid.shape(xi);
                    for a in 0..npc {
                        loc[a] += w * hn * fv * sh[a];
                    }
                }
                (k, loc)
            })
            .collect();
        Ok(self.scatter(&locals))
    }

    /// Interior part, exterior part and load of the weak form at `u`.
    pub fn residual_split(&self, u: &GridFunction, f: &GridFunction) -> Result<ResidualSplit> {
        self.check_constraint(u)?;
        let (interior, exterior) = self.operator_parts(u, Side::X, 2.0);
        Ok(ResidualSplit {
            interior,
            exterior,
            load: self.load(f)?,
        })
    }

    /// Weak-form residual per free node.
    pub fn residual(&self, u: &GridFunction, f: &GridFunction) -> Result<Vec<f64>> {
        Ok(self.residual_split(u, f)?.total())
    }

    /// The operator part assembled with the test function on the y-side only.
    pub fn operator_y_side(&self, u: &GridFunction) -> Result<Vec<f64>> {
        self.check_constraint(u)?;
        let (i, o) = self.operator_parts(u, Side::Y, 2.0);
        Ok(i.iter().zip(&o).map(|(a, b)| a + b).collect())
    }

    /// The operator part as the plain double integral over all ordered pairs with
    /// `phi(x) - phi(y)`, without folding by symmetry.
    pub fn operator_unsplit(&self, u: &GridFunction) -> Result<Vec<f64>> {
        self.check_constraint(u)?;
        let (xi, xo) = self.operator_parts(u, Side::X, 1.0);
        let (yi, yo) = self.operator_parts(u, Side::Y, 1.0);
        Ok((0..xi.len()).map(|d| (xi[d] + xo[d]) + (yi[d] + yo[d])).collect())
    }

    /// Residual per free node divided by `int phi_i`, a pointwise estimate of `L u - f`.
    pub fn residual_density(&self, r: &[f64]) -> Vec<f64> {
        let m = self.cell_weight();
        r.iter().map(|v| v / m).collect()
    }

    /// `x,y,component` rows for the free nodes.
    pub fn residual_csv(&self, r: &[f64]) -> String {
        let mut s = String::from("x,y,component\n");
        for (d, &i) in self.free.iter().enumerate() {
            let x = self.grid.node(i);
            s.push_str(&format!("{},{},{}\n", x[0], x[1], r[d]));
        }
        s
    }

    /// Sum over pairs with the x-cell active: each interior pair is visited once
    /// per active cell it touches, pairs with an inactive y-cell get weight 2.
    fn fold_pairs<P, E>(&self, pair: P, ext: E) -> f64
    where
        P: Fn(&Phase, usize, usize, &Point, &Point, f64) -> f64 + Sync,
        E: Fn(&Phase, usize, &Point, &Point, f64) -> f64 + Sync,
    {
        let rows: Vec<f64> = self
            .active
            .par_iter()
            .map(|&k| {
                let mut acc = crate::quadrature::CompensatedSum::default();
                self.visit_pairs(k, Side::X, |ph, l, xi, eta, w| {
                    let fac = if self.is_active[l] { 1.0 } else { 2.0 };
                    acc.add(fac * pair(ph, k, l, xi, eta, w));
                });
                self.visit_exterior(k, |ph, xi, z, w| acc.add(2.0 * ext(ph, k, xi, z, w)));
                acc.value()
            })
            .collect();
        rows.iter().sum()
    }

    /// `(1/p) int int A |u(x)-u(y)|^p dmu_1 + (1/q) int int b |.|^q dmu_2 - int f u`
    /// over pairs that involve the domain, with the frozen coefficient.
    pub fn frozen_energy(&self, u: &GridFunction, f: &GridFunction) -> Result<f64> {
        self.require_frozen("frozen_energy")?;
        self.check_constraint(u)?;
        let g = &self.grid;
        let e = self.fold_pairs(
            |ph, k, l, xi, eta, w| {
                let x = g.cell_point(k, xi);
                let y = g.cell_point(l, eta);
                let c = self.coef(ph, &x, &y, self.slot(0.0, k, xi), self.slot(0.0, l, eta));
                w * c * abs_pow(u.cell_value(k, xi) - u.cell_value(l, eta), ph.ell) / ph.ell
            },
            |ph, k, xi, z, w| {
                let x = g.cell_point(k, xi);
                let gz = self.exterior.eval(z);
                let c = self.coef(ph, &x, z, self.slot(0.0, k, xi), gz);
                w * c * abs_pow(u.cell_value(k, xi) - gz, ph.ell) / ph.ell
            },
        );
        let load = self.load(f)?;
        let x = self.dofs(u);
        Ok(e - load.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
    }

    /// `E(u1) - E(u0)` evaluated pairwise so that small differences keep their digits.
    pub fn energy_change(&self, u0: &GridFunction, u1: &GridFunction, f: &GridFunction) -> Result<f64> {
        self.require_frozen("energy_change")?;
        self.check_constraint(u0)?;
        self.check_constraint(u1)?;
        let g = &self.grid;
        let e = self.fold_pairs(
            |ph, k, l, xi, eta, w| {
                let x = g.cell_point(k, xi);
                let y = g.cell_point(l, eta);
                let c = self.coef(ph, &x, &y, self.slot(0.0, k, xi), self.slot(0.0, l, eta));
                let d0 = (u0.cell_value(k, xi) - u0.cell_value(l, eta)).abs();
                let d1 = (u1.cell_value(k, xi) - u1.cell_value(l, eta)).abs();
                w * c * pow_diff(d1, d0, ph.ell) / ph.ell
            },
            |ph, k, xi, z, w| {
                let x = g.cell_point(k, xi);
                let gz = self.exterior.eval(z);
                let c = self.coef(ph, &x, z, self.slot(0.0, k, xi), gz);
                let d0 = (u0.cell_value(k, xi) - gz).abs();
                let d1 = (u1.cell_value(k, xi) - gz).abs();
                w * c * pow_diff(d1, d0, ph.ell) / ph.ell
            },
        );
        let load = self.load(f)?;
        let (x0, x1) = (self.dofs(u0), self.dofs(u1));
        let dl: f64 = (0..x0.len()).map(|d| load[d] * (x1[d] - x0[d])).sum();
        Ok(e - dl)
    }

    /// Gradient (the residual) and Hessian of the frozen energy in the free values.
    pub fn gradient_hessian(&self, u: &GridFunction, f: &GridFunction) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.require_frozen("gradient_hessian")?;
        let grad = self.residual(u, f)?;
        let n = self.free.len();
        let g = &self.grid;
        let npc = g.nodes_per_cell();
        let mut hess = DMatrix::<f64>::zeros(n, n);
        for chunk in self.active.chunks(128) {
            let blocks: Vec<(usize, Vec<f64>)> = chunk
                .par_iter()
                .map(|&k| {
                    let mut rows = vec![0.0; npc * n];
                    let nk = g.cell_nodes(k);
                    self.visit_pairs(k, Side::X, |ph, l, xi, eta, w| {
                        let x = g.cell_point(k, xi);
                        let y = g.cell_point(l, eta);
                        let c = self.coef(ph, &x, &y, self.slot(0.0, k, xi), self.slot(0.0, l, eta));
                        let d = u.cell_value(k, xi) - u.cell_value(l, eta);
                        let v = 2.0 * w * c * (ph.ell - 1.0) * abs_pow(d, ph.ell - 2.0);
                        if v == 0.0 {
                            return;
                        }
                        let sx = g.shape(xi);
                        let sy = g.shape(eta);
                        let nl = g.cell_nodes(l);
                        for a in 0..npc {
                            if self.dof_of[nk[a]].is_none() {
                                continue;
                            }
                            let va = v * sx[a];
                            let row = &mut rows[a * n..(a + 1) * n];
                            for b in 0..npc {
                                if let Some(j) = self.dof_of[nk[b]] {
                                    row[j] += va * sx[b];
                                }
                                if let Some(j) = self.dof_of[nl[b]] {
                                    row[j] -= va * sy[b];
                                }
                            }
                        }
                    });
                    self.visit_exterior(k, |ph, xi, z, w| {
                        let x = g.cell_point(k, xi);
                        let gz = self.exterior.eval(z);
                        let c = self.coef(ph, &x, z, self.slot(0.0, k, xi), gz);
                        let d = u.cell_value(k, xi) - gz;
                        let v = 2.0 * w * c * (ph.ell - 1.0) * abs_pow(d, ph.ell - 2.0);
                        let sx = g.shape(xi);
                        for a in 0..npc {
                            if self.dof_of[nk[a]].is_none() {
                                continue;
                            }
                            for b in 0..npc {
                                if let Some(j) = self.dof_of[nk[b]] {
                                    rows[a * n + j] += v * sx[a] * sx[b];
                                }
                            }
                        }
                    });
                    (k, rows)
                })
                .collect();
            for (k, rows) in blocks {
                let nk = g.cell_nodes(k);
                for a in 0..npc {
                    if let Some(i) = self.dof_of[nk[a]] {
                        for j in 0..n {
                            hess[(i, j)] += rows[a * n + j];
                        }
                    }
                }
            }
        }
        Ok((grad, hess))
    }

    /// `<A(u) - A(v), u - v>` with the frozen coefficient, evaluated pairwise.
    pub fn monotonicity_pairing(&self, u: &GridFunction, v: &GridFunction) -> Result<f64> {
        self.require_frozen("monotonicity_pairing")?;
        self.check_constraint(u)?;
        self.check_constraint(v)?;
        let g = &self.grid;
        Ok(self.fold_pairs(
            |ph, k, l, xi, eta, w| {
                let x = g.cell_point(k, xi);
                let y = g.cell_point(l, eta);
                let c = self.coef(ph, &x, &y, self.slot(0.0, k, xi), self.slot(0.0, l, eta));
                let du = u.cell_value(k, xi) - u.cell_value(l, eta);
                let dv = v.cell_value(k, xi) - v.cell_value(l, eta);
                w * c * (bracket_power(du, ph.ell) - bracket_power(dv, ph.ell)) * (du - dv)
            },
            |ph, k, xi, z, w| {
                let x = g.cell_point(k, xi);
                let gz = self.exterior.eval(z);
                let c = self.coef(ph, &x, z, self.slot(0.0, k, xi), gz);
                let du = u.cell_value(k, xi) - gz;
                let dv = v.cell_value(k, xi) - gz;
                w * c * (bracket_power(du, ph.ell) - bracket_power(dv, ph.ell)) * (du - dv)
            },
        ))
    }

    /// `[u - v]^p_{W^{s,p}(R^N)}` with the rule of the `p`-phase; `u - v`
    /// vanishes outside the domain.
    pub fn difference_seminorm_power(&self, u: &GridFunction, v: &GridFunction) -> Result<f64> {
        self.check_constraint(u)?;
        self.check_constraint(v)?;
        Ok(self.fold_pairs(
            |ph, k, l, xi, eta, w| {
                if !ph.is_a {
                    return 0.0;
                }
                let du = u.cell_value(k, xi) - u.cell_value(l, eta);
                let dv = v.cell_value(k, xi) - v.cell_value(l, eta);
                w * abs_pow(du - dv, ph.ell)
            },
            |ph, k, xi, _z, w| {
                if !ph.is_a {
                    return 0.0;
                }
                w * abs_pow(u.cell_value(k, xi) - v.cell_value(k, xi), ph.ell)
            },
        ))
    }

    /// Smallest and largest frozen `a` over a sample of pair nodes.
    pub fn frozen_bounds(&self, stride: usize) -> Result<(f64, f64)> {
        self.require_frozen("frozen_bounds")?;
        let g = &self.grid;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let ph = &self.phases[0];
        for &k in self.active.iter().step_by(stride.max(1)) {
            for l in (0..g.num_cells()).step_by(stride.max(1)) {
                ph.rule.visit(k, l, |xi, eta, _| {
                    let c = self.coef(
                        ph,
                        &g.cell_point(k, xi),
                        &g.cell_point(l, eta),
                        self.slot(0.0, k, xi),
                        self.slot(0.0, l, eta),
                    );
                    lo = lo.min(c);
                    hi = hi.max(c);
                });
            }
        }
        Ok((lo, hi))
    }
}
