use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelError, ProblemSpec};

/// Points are stored with two components; in one dimension the second is zero.
pub type Point = [f64; 2];

pub fn dist(x: &Point, y: &Point) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
}

pub fn norm(x: &Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

pub fn point_from_slice(v: &[f64]) -> Point {
    [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Ball,
    Box,
}

/// An open ball or an open axis-aligned cube (`radius` is the half-width).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default)]
    pub snap: bool,
}

impl Region {
    pub fn ball(center: Point, radius: f64, dim: usize) -> Self {
        Region {
            kind: RegionKind::Ball,
            center: center[..dim].to_vec(),
            radius,
            snap: false,
        }
    }

    pub fn cube(center: Point, radius: f64, dim: usize) -> Self {
        Region {
            kind: RegionKind::Box,
            center: center[..dim].to_vec(),
            radius,
            snap: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center_point(&self) -> Point {
        point_from_slice(&self.center)
    }

    /// Ball and cube coincide in one dimension.
    pub fn is_interval_like(&self) -> bool {
        self.dim() == 1 || self.kind == RegionKind::Box
    }

    fn gauge(&self, x: &Point) -> f64 {
        let c = self.center_point();
        match self.kind {
            RegionKind::Ball => dist(x, &c),
            RegionKind::Box => (x[0] - c[0]).abs().max((x[1] - c[1]).abs()),
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.gauge(x) < self.radius
    }

    pub fn contains_closed(&self, x: &Point) -> bool {
        self.gauge(x) <= self.radius
    }

    pub fn scaled(&self, factor: f64) -> Region {
        Region {
            radius: self.radius * factor,
            ..self.clone()
        }
    }

    /// Distance from an interior point `x` to the boundary along the unit direction `e`.
    pub fn exit_distance(&self, x: &Point, e: &Point) -> f64 {
        let c = self.center_point();
        let d = [x[0] - c[0], x[1] - c[1]];
        match self.kind {
            RegionKind::Ball => {
                let b = d[0] * e[0] + d[1] * e[1];
                let cc = d[0] * d[0] + d[1] * d[1] - self.radius * self.radius;
                -b + (b * b - cc).max(0.0).sqrt()
            }
            RegionKind::Box => {
                let mut best = f64::INFINITY;
                for a in 0..2 {
                    if e[a] > 0.0 {
                        best = best.min((self.radius - d[a]) / e[a]);
                    } else if e[a] < 0.0 {
                        best = best.min((-self.radius - d[a]) / e[a]);
                    }
                }
                best.max(0.0)
            }
        }
    }
}

/// Uniform grid on `[-L, L]^N` with `cells` cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub cells: usize,
    pub half_width: f64,
}

impl Grid {
    pub fn new(dim: usize, cells: usize, half_width: f64) -> Result<Self, ModelError> {
        if dim != 1 && dim != 2 {
            return Err(ModelError::Grid(format!("dimension {dim} is not 1 or 2")));
        }
        if cells < 2 {
            return Err(ModelError::Grid(format!("need at least 2 cells per axis, got {cells}")));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(ModelError::Grid(format!("half-width {half_width} must be positive")));
        }
        Ok(Grid {
            dim,
            cells,
            half_width,
        })
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.cells + 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn nodes_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    pub fn node_multi(&self, idx: usize) -> [usize; 2] {
        let m = self.nodes_per_axis();
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % m, idx / m]
        }
    }

    pub fn node_index(&self, mi: [usize; 2]) -> usize {
        if self.dim == 1 {
            mi[0]
        } else {
            mi[0] + self.nodes_per_axis() * mi[1]
        }
    }

    pub fn node(&self, idx: usize) -> Point {
        let mi = self.node_multi(idx);
        if self.dim == 1 {
            [self.coord(mi[0]), 0.0]
        } else {
            [self.coord(mi[0]), self.coord(mi[1])]
        }
    }

    pub fn cell_multi(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k % self.cells, k / self.cells]
        }
    }

    pub fn cell_index(&self, mi: [usize; 2]) -> usize {
        if self.dim == 1 {
            mi[0]
        } else {
            mi[0] + self.cells * mi[1]
        }
    }

    pub fn cell_origin(&self, k: usize) -> Point {
        let mi = self.cell_multi(k);
        if self.dim == 1 {
            [self.coord(mi[0]), 0.0]
        } else {
            [self.coord(mi[0]), self.coord(mi[1])]
        }
    }

    pub fn cell_center(&self, k: usize) -> Point {
        let o = self.cell_origin(k);
        let hh = 0.5 * self.h();
        if self.dim == 1 {
            [o[0] + hh, 0.0]
        } else {
            [o[0] + hh, o[1] + hh]
        }
    }

    /// Physical point of local coordinates `xi` in cell `k`.
    pub fn cell_point(&self, k: usize, xi: &Point) -> Point {
        let o = self.cell_origin(k);
        let h = self.h();
        if self.dim == 1 {
            [o[0] + h * xi[0], 0.0]
        } else {
            [o[0] + h * xi[0], o[1] + h * xi[1]]
        }
    }

    /// Node indices of cell `k`; only the first `2^N` entries are meaningful.
    pub fn cell_nodes(&self, k: usize) -> [usize; 4] {
        let [i, j] = self.cell_multi(k);
        if self.dim == 1 {
            [i, i + 1, 0, 0]
        } else {
            let m = self.nodes_per_axis();
            let b = i + m * j;
            [b, b + 1, b + m, b + m + 1]
        }
    }

    /// Multilinear shape functions at local coordinates, ordered as in [`Grid::cell_nodes`].
    pub fn shape(&self, xi: &Point) -> [f64; 4] {
        if self.dim == 1 {
            [1.0 - xi[0], xi[0], 0.0, 0.0]
        } else {
            let (a, b) = (xi[0], xi[1]);
            [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b]
        }
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|a| x[a].abs() <= self.half_width)
    }

    pub fn box_region(&self) -> Region {
        Region::cube([0.0, 0.0], self.half_width, self.dim)
    }

    /// Cell and local coordinates of a point in the closed box.
    pub fn locate(&self, x: &Point) -> Option<(usize, Point)> {
        if !self.contains(x) {
            return None;
        }
        let h = self.h();
        let mut mi = [0usize; 2];
        let mut xi = [0.0; 2];
        for a in 0..self.dim {
            let r = (x[a] + self.half_width) / h;
            let c = (r.floor() as isize).clamp(0, self.cells as isize - 1) as usize;
            mi[a] = c;
            xi[a] = (r - c as f64).clamp(0.0, 1.0);
        }
        Some((self.cell_index(mi), xi))
    }

    /// Cells whose centers lie in `region`.
    pub fn cells_in(&self, region: &Region) -> Vec<usize> {
        (0..self.num_cells())
            .filter(|&k| region.contains(&self.cell_center(k)))
            .collect()
    }

    /// Nodes strictly inside `region`.
    pub fn nodes_in(&self, region: &Region) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| region.contains(&self.node(i)))
            .collect()
    }

    /// Nodes in the closure of `region`.
    pub fn nodes_in_closed(&self, region: &Region) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| region.contains_closed(&self.node(i)))
            .collect()
    }

    /// Whether the node index of `x` is integral; returns it when it is.
    pub fn node_at(&self, x: &Point) -> Option<usize> {
        let h = self.h();
        let mut mi = [0usize; 2];
        for a in 0..self.dim {
            let r = (x[a] + self.half_width) / h;
            let ri = r.round();
            if (r - ri).abs() > 1e-9 || ri < 0.0 || ri > self.cells as f64 {
                return None;
            }
            mi[a] = ri as usize;
        }
        Some(self.node_index(mi))
    }
}

type ScalarField = dyn Fn(&Point) -> f64 + Send + Sync;

/// Data prescribed beyond the truncation box, with its growth envelope
/// `|g(x)| <= c_g (1 + |x|)^kappa_g`.
#[derive(Clone)]
pub struct Exterior {
    f: Arc<ScalarField>,
    pub c_g: f64,
    pub kappa_g: f64,
    pub constant: Option<f64>,
    pub label: String,
}

impl fmt::Debug for Exterior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Exterior")
            .field("label", &self.label)
            .field("c_g", &self.c_g)
            .field("kappa_g", &self.kappa_g)
            .field("constant", &self.constant)
            .finish()
    }
}

impl Exterior {
    pub fn constant(value: f64) -> Self {
        Exterior {
            f: Arc::new(move |_| value),
            c_g: value.abs(),
            kappa_g: 0.0,
            constant: Some(value),
            label: format!("constant({value})"),
        }
    }

    pub fn function<F>(label: impl Into<String>, c_g: f64, kappa_g: f64, f: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        Exterior {
            f: Arc::new(f),
            c_g,
            kappa_g,
            constant: None,
            label: label.into(),
        }
    }

    #[inline]
    pub fn eval(&self, x: &Point) -> f64 {
        (self.f)(x)
    }

    pub fn bound(&self, x: &Point) -> f64 {
        self.c_g * (1.0 + norm(x)).powf(self.kappa_g)
    }

    /// Finite tails need `(p-1) kappa_g < ps` and `(q-1) kappa_g < qt`.
    pub fn check_tails(&self, spec: &ProblemSpec) -> Result<(), ModelError> {
        let k = self.kappa_g;
        if (spec.p - 1.0) * k >= spec.sigma_p() {
            return Err(ModelError::Range {
                name: "kappa_g",
                value: k,
                reason: "exterior growth (p-1) kappa_g >= ps makes the p-tail infinite",
            });
        }
        if (spec.q - 1.0) * k >= spec.sigma_q() {
            return Err(ModelError::Range {
                name: "kappa_g",
                value: k,
                reason: "exterior growth (q-1) kappa_g >= qt makes the q-tail infinite",
            });
        }
        Ok(())
    }
}

/// Named exterior data for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExteriorSpec {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency * (x_1 + ... + x_N) + phase)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `coefficient * |x|^exponent`.
    Power {
        coefficient: f64,
        exponent: f64,
    },
    /// `(1 - |x|^2)_+^{1/2}`.
    Getoor,
}

impl ExteriorSpec {
    pub fn build(&self) -> Exterior {
        match *self {
            ExteriorSpec::Constant { value } => Exterior::constant(value),
            ExteriorSpec::Sine {
                amplitude,
                frequency,
                phase,
            } => Exterior::function(
                format!("sine({amplitude},{frequency},{phase})"),
                amplitude.abs(),
                0.0,
                move |x| amplitude * (frequency * (x[0] + x[1]) + phase).sin(),
            ),
            ExteriorSpec::Power {
                coefficient,
                exponent,
            } => Exterior::function(
                format!("power({coefficient},{exponent})"),
                coefficient.abs(),
                exponent.max(0.0),
                move |x| coefficient * norm(x).powf(exponent),
            ),
            ExteriorSpec::Getoor => Exterior::function("getoor", 1.0, 0.0, getoor_profile),
        }
    }
}

/// `(1 - |x|^2)_+^{1/2}`.
pub fn getoor_profile(x: &Point) -> f64 {
    (1.0 - x[0] * x[0] - x[1] * x[1]).max(0.0).sqrt()
}

/// Nodal values of a piecewise multilinear function on a [`Grid`], continued by
/// an [`Exterior`] outside the box.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub exterior: Exterior,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>, exterior: Exterior) -> Result<Self, ModelError> {
        if values.len() != grid.num_nodes() {
            return Err(ModelError::Grid(format!(
                "expected {} nodal values, got {}",
                grid.num_nodes(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Grid(format!("nodal value {i} is not finite")));
        }
        Ok(GridFunction {
            grid,
            values,
            exterior,
        })
    }

    pub fn from_fn<F: Fn(&Point) -> f64>(grid: Grid, f: F, exterior: Exterior) -> Self {
        let values = (0..grid.num_nodes()).map(|i| f(&grid.node(i))).collect();
        GridFunction {
            grid,
            values,
            exterior,
        }
    }

    /// Nodal values taken from the exterior data itself.
    pub fn from_exterior(grid: Grid, exterior: Exterior) -> Self {
        let e = exterior.clone();
        Self::from_fn(grid, move |x| e.eval(x), exterior)
    }

    pub fn cell_value(&self, k: usize, xi: &Point) -> f64 {
        let nodes = self.grid.cell_nodes(k);
        let sh = self.grid.shape(xi);
        (0..self.grid.nodes_per_cell())
            .map(|a| sh[a] * self.values[nodes[a]])
            .sum()
    }

    pub fn eval(&self, x: &Point) -> f64 {
        match self.grid.locate(x) {
            Some((k, xi)) => self.cell_value(k, &xi),
            None => self.exterior.eval(x),
        }
    }

    pub fn cell_mean(&self, k: usize) -> f64 {
        let nodes = self.grid.cell_nodes(k);
        let m = self.grid.nodes_per_cell();
        nodes[..m].iter().map(|&i| self.values[i]).sum::<f64>() / m as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        GridFunction {
            grid: self.grid,
            values,
            exterior: self.exterior.clone(),
        }
    }

    /// Continuation of this function to all of `R^N`, usable as exterior data.
    pub fn as_exterior(&self, label: impl Into<String>) -> Exterior {
        let me = self.clone();
        let c_g = self.max_abs().max(self.exterior.c_g);
        Exterior::function(label, c_g, self.exterior.kappa_g, move |x| me.eval(x))
    }
}
