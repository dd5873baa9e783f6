use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::exterior::ray_crossings;
use super::{dyadic_panels, gauss_legendre, gauss_on, QuadError};
use crate::model::{bracket_power, GridFunction, KernelPair, Point, ProblemSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PvOptions {
    /// Radius of the local quadratic model, in cells.
    pub near_cells: f64,
    pub near_depth: usize,
    pub order: usize,
    /// Directions on the half circle (two dimensions).
    pub angular: usize,
    pub far_panels: usize,
}

impl Default for PvOptions {
    fn default() -> Self {
        PvOptions {
            near_cells: 1.0,
            near_depth: 24,
            order: 6,
            angular: 16,
            far_panels: 14,
        }
    }
}

/// Local quadratic model `u0 + g.z + z.H.z / 2` from the nodal stencil around `node`.
struct Quadratic {
    u0: f64,
    g: Point,
    hxx: f64,
    hyy: f64,
    hxy: f64,
}

impl Quadratic {
    fn at(&self, z: &Point) -> f64 {
        self.u0
            + self.g[0] * z[0]
            + self.g[1] * z[1]
            + 0.5 * (self.hxx * z[0] * z[0] + 2.0 * self.hxy * z[0] * z[1] + self.hyy * z[1] * z[1])
    }
}

fn quadratic(u: &GridFunction, node: usize) -> Quadratic {
    let g = &u.grid;
    let h = g.h();
    let [i, j] = g.node_multi(node);
    let v = |di: isize, dj: isize| {
        u.values[g.node_index([(i as isize + di) as usize, (j as isize + dj) as usize])]
    };
    let u0 = u.values[node];
    if g.dim == 1 {
        Quadratic {
            u0,
            g: [(v(1, 0) - v(-1, 0)) / (2.0 * h), 0.0],
            hxx: (v(1, 0) - 2.0 * u0 + v(-1, 0)) / (h * h),
            hyy: 0.0,
            hxy: 0.0,
        }
    } else {
        Quadratic {
            u0,
            g: [(v(1, 0) - v(-1, 0)) / (2.0 * h), (v(0, 1) - v(0, -1)) / (2.0 * h)],
            hxx: (v(1, 0) - 2.0 * u0 + v(-1, 0)) / (h * h),
            hyy: (v(0, 1) - 2.0 * u0 + v(0, -1)) / (h * h),
            hxy: (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (4.0 * h * h),
        }
    }
}

/// Pointwise value of `L u (x) = 2 P.V. int a(x,y,u(x),u(y)) [u(x)-u(y)]^{p-1} |x-y|^{-N-ps} dy`
/// plus the `b`-weighted `q`-term, at the grid node `node`.
///
/// Contributions of `y` and `2x - y` are paired before the singular limit. Inside
/// `near_cells * h` the interpolant is replaced by the quadratic model from the
/// nodal stencil, which keeps the paired integrand integrable.
pub fn pv_point_eval(
    u: &GridFunction,
    kernel: &KernelPair,
    spec: &ProblemSpec,
    node: usize,
    opts: &PvOptions,
) -> Result<f64, QuadError> {
    let grid = &u.grid;
    if node >= grid.num_nodes() {
        return Err(QuadError::Domain(format!("node {node} does not exist")));
    }
    let mi = grid.node_multi(node);
    if (0..grid.dim).any(|a| mi[a] == 0 || mi[a] == grid.cells) {
        return Err(QuadError::Domain(format!(
            "node {node} lies on the boundary of the truncation box"
        )));
    }
    let x = grid.node(node);
    let model = quadratic(u, node);
    let u0 = model.u0;
    let h = grid.h();
    let r0 = opts.near_cells * h;
    let boxr = grid.box_region();

    let half_dirs: Vec<(Point, f64)> = if grid.dim == 1 {
        vec![([1.0, 0.0], 1.0)]
    } else {
        let gl = gauss_legendre(opts.angular);
        gauss_on(0.0, PI, &gl)
            .map(|(t, w)| ([t.cos(), t.sin()], w))
            .collect()
    };
    let gl = gauss_legendre(opts.order);
    let near_panels = dyadic_panels(opts.near_depth);
    let far_panels = dyadic_panels(opts.far_panels);

    let mut phases: Vec<(f64, f64, bool)> = vec![(spec.p, spec.sigma_p(), true)];
    if !kernel.b_is_zero {
        phases.push((spec.q, spec.sigma_q(), false));
    }
    let coef = |is_a: bool, y: &Point, uy: f64| {
        if is_a {
            kernel.a(&x, y, u0, uy)
        } else {
            kernel.b(&x, y)
        }
    };

    let mut total = 0.0;
    for &(ell, sigma, is_a) in &phases {
        let mut acc = 0.0;
        for (e, aw) in &half_dirs {
            // near field with the quadratic model, y and 2x - y paired
            let mut near = 0.0;
            for &(lo, hi) in &near_panels {
                for (t, wt) in gauss_on(lo, hi, &gl) {
                    let rho = r0 * t;
                    let mut pair = 0.0;
                    for sgn in [1.0, -1.0] {
                        let z = [sgn * rho * e[0], sgn * rho * e[1]];
                        let y = [x[0] + z[0], x[1] + z[1]];
                        let uy = model.at(&z);
                        pair += coef(is_a, &y, uy) * bracket_power(u0 - uy, ell);
                    }
                    near += r0 * wt * pair * rho.powf(-1.0 - sigma);
                }
            }
            acc += aw * near;
            for sgn in [1.0, -1.0] {
                let d = [sgn * e[0], sgn * e[1]];
                // interpolant up to the box boundary, split at grid lines
                let d_box = boxr.exit_distance(&x, &d);
                let t = ray_crossings(grid, &x, &d, r0, d_box);
                let mut mid = 0.0;
                for w in t.windows(2) {
                    for (rho, wr) in gauss_on(w[0], w[1], &gl) {
                        let y = [x[0] + rho * d[0], x[1] + rho * d[1]];
                        let uy = u.eval(&y);
                        mid += wr * coef(is_a, &y, uy) * bracket_power(u0 - uy, ell)
                            * rho.powf(-1.0 - sigma);
                    }
                }
                acc += aw * mid;
                // exterior data beyond the box
                let scale = d_box.powf(-sigma) / sigma;
                let mut far = 0.0;
                for &(lo, hi) in &far_panels {
                    for (w, ww) in gauss_on(lo, hi, &gl) {
                        let rho = d_box * w.powf(-1.0 / sigma);
                        let y = [x[0] + rho * d[0], x[1] + rho * d[1]];
                        let gy = u.exterior.eval(&y);
                        far += ww * coef(is_a, &y, gy) * bracket_power(u0 - gy, ell);
                    }
                }
                acc += aw * scale * far;
            }
        }
        total += acc;
    }
    Ok(2.0 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{getoor_profile, Exterior, Grid};

    #[test]
    fn constants_vanish() {
        let grid = Grid::new(1, 32, 1.0).unwrap();
        let u = GridFunction::from_fn(grid, |_| 3.0, Exterior::constant(3.0));
        let spec = ProblemSpec::new(1, 2.0, 3.0, 0.5, 0.3);
        let k = KernelPair::constant(1.0);
        assert_eq!(pv_point_eval(&u, &k, &spec, 10, &PvOptions::default()).unwrap(), 0.0);
    }

    #[test]
    fn getoor_level_is_two_pi() {
        let grid = Grid::new(1, 512, 1.0).unwrap();
        let u = GridFunction::from_fn(grid, getoor_profile, Exterior::constant(0.0));
        let spec = ProblemSpec::new(1, 2.0, 2.0, 0.5, 0.5);
        let k = KernelPair::constant(1.0);
        let v = pv_point_eval(&u, &k, &spec, 256, &PvOptions::default()).unwrap();
        assert!((v - 2.0 * PI).abs() < 0.02 * 2.0 * PI, "{v}");
    }

    #[test]
    fn boundary_node_rejected() {
        let grid = Grid::new(1, 8, 1.0).unwrap();
        let u = GridFunction::from_fn(grid, |_| 0.0, Exterior::constant(0.0));
        let spec = ProblemSpec::new(1, 2.0, 2.0, 0.5, 0.5);
        assert!(pv_point_eval(&u, &KernelPair::constant(1.0), &spec, 0, &PvOptions::default()).is_err());
    }
}
