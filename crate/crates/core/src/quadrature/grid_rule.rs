use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pair::{interlaced_orders, subdivide_pairs};
use super::{dyadic_panels, gauss_legendre, gauss_on, power_panel, sum_ordered, QuadError, Summation};
use crate::model::{Grid, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleOptions {
    /// Dyadic subdivision depth toward the diagonal for touching cell pairs.
    pub depth: usize,
    pub radial_order: usize,
    pub tangential_order: usize,
    /// Gauss order inside the recursive two-dimensional near rule.
    pub near_order: usize,
    pub q_mid: usize,
    pub q_far: usize,
    /// Offsets with `2 <= max|o| <= mid_radius` use `q_mid`, beyond that `q_far`.
    pub mid_radius: usize,
}

impl RuleOptions {
    pub fn for_dim(dim: usize) -> Self {
        if dim == 1 {
            RuleOptions {
                depth: 4,
                radial_order: 3,
                tangential_order: 6,
                near_order: 2,
                q_mid: 4,
                q_far: 3,
                mid_radius: 3,
            }
        } else {
            RuleOptions {
                depth: 2,
                radial_order: 3,
                tangential_order: 4,
                near_order: 2,
                q_mid: 3,
                q_far: 2,
                mid_radius: 2,
            }
        }
    }
}

/// A quadrature node of a touching cell pair in local coordinates of the
/// x-cell (`xi`) and the y-cell (`eta`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearPoint {
    pub xi: Point,
    pub eta: Point,
    pub w: f64,
}

/// Tensor Gauss rule on the unit cell.
#[derive(Clone, Debug)]
pub struct TensorRule {
    pub q: usize,
    pub pts: Vec<Point>,
    pub w: Vec<f64>,
}

impl TensorRule {
    pub fn new(dim: usize, q: usize) -> Self {
        let gl = gauss_legendre(q);
        let mut pts = Vec::new();
        let mut w = Vec::new();
        if dim == 1 {
            for &(x, wx) in &gl {
                pts.push([x, 0.0]);
                w.push(wx);
            }
        } else {
            for &(y, wy) in &gl {
                for &(x, wx) in &gl {
                    pts.push([x, y]);
                    w.push(wx * wy);
                }
            }
        }
        TensorRule { q, pts, w }
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }
}

pub enum PairClass<'a> {
    Near(&'a [NearPoint]),
    /// Kernel-weighted tensor rule: `kw[i * n + j]` pairs x-node `i` with y-node `j`.
    Tensor { rule: &'a TensorRule, kw: &'a [f64] },
}

/// Cell-pair quadrature for `int int Phi(x,y) |x-y|^{-N-sigma}` on a grid, where
/// `Phi` vanishes like `|x-y|^ell` on the diagonal. All weights include the
/// kernel and the mesh scaling; near-diagonal weights also include `rho^{-ell}`
/// so that homogeneous `Phi` is integrated exactly in one dimension.
#[derive(Clone, Debug)]
pub struct PairRule {
    pub grid: Grid,
    pub ell: f64,
    pub sigma: f64,
    pub opts: RuleOptions,
    near: Vec<Vec<NearPoint>>,
    pub mid: TensorRule,
    pub far: TensorRule,
    kw_mid: Vec<f64>,
    kw_far: Vec<f64>,
}

fn local_dist(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl PairRule {
    pub fn new(grid: Grid, ell: f64, sigma: f64, opts: RuleOptions) -> Result<Self, QuadError> {
        let n = grid.dim as f64;
        if ell <= sigma {
            return Err(QuadError::Singular(format!(
                "integrand order {ell} against kernel order {sigma} is not integrable near the diagonal"
            )));
        }
        let scale = grid.h().powf(n - sigma);
        let mut near = if grid.dim == 1 {
            near_1d(ell, sigma, &opts)
        } else {
            near_2d(sigma, &opts)
        };
        for class in near.iter_mut() {
            for p in class.iter_mut() {
                p.w *= scale;
            }
        }
        let mid = TensorRule::new(grid.dim, opts.q_mid);
        let far = TensorRule::new(grid.dim, opts.q_far);
        let c = grid.cells as isize;
        let mr = opts.mid_radius as isize;
        let kw_mid = kernel_table(grid.dim, &mid, mr, sigma, scale);
        let kw_far = kernel_table(grid.dim, &far, c - 1, sigma, scale);
        Ok(PairRule {
            grid,
            ell,
            sigma,
            opts,
            near,
            mid,
            far,
            kw_mid,
            kw_far,
        })
    }

    pub fn offset(&self, k: usize, l: usize) -> [isize; 2] {
        let a = self.grid.cell_multi(k);
        let b = self.grid.cell_multi(l);
        [b[0] as isize - a[0] as isize, b[1] as isize - a[1] as isize]
    }

    pub fn classify(&self, k: usize, l: usize) -> PairClass<'_> {
        let o = self.offset(k, l);
        let m = o[0].abs().max(o[1].abs());
        if m <= 1 {
            let id = if self.grid.dim == 1 {
                o[0] + 1
            } else {
                (o[0] + 1) + 3 * (o[1] + 1)
            };
            return PairClass::Near(&self.near[id as usize]);
        }
        let (rule, table, span) = if m <= self.opts.mid_radius as isize {
            (&self.mid, &self.kw_mid, self.opts.mid_radius as isize)
        } else {
            (&self.far, &self.kw_far, self.grid.cells as isize - 1)
        };
        let np = rule.len() * rule.len();
        let id = offset_id(self.grid.dim, o, span);
        PairClass::Tensor {
            rule,
            kw: &table[id * np..(id + 1) * np],
        }
    }

    /// Calls `f(xi, eta, weight)` for every node of the cell pair `(k, l)`.
    pub fn visit<F: FnMut(&Point, &Point, f64)>(&self, k: usize, l: usize, mut f: F) {
        match self.classify(k, l) {
            PairClass::Near(pts) => {
                for p in pts {
                    f(&p.xi, &p.eta, p.w);
                }
            }
            PairClass::Tensor { rule, kw } => {
                let n = rule.len();
                for i in 0..n {
                    for j in 0..n {
                        f(&rule.pts[i], &rule.pts[j], kw[i * n + j]);
                    }
                }
            }
        }
    }

    /// `sum_{k in cx, l in cy} sum_nodes w phi(k, l, xi, eta)`, parallel over `k`
    /// with an order-independent result.
    pub fn sum_pairs<F>(&self, cx: &[usize], cy: &[usize], mode: Summation, phi: F) -> f64
    where
        F: Fn(usize, usize, &Point, &Point) -> f64 + Sync,
    {
        let rows: Vec<f64> = cx
            .par_iter()
            .map(|&k| {
                let mut s = super::CompensatedSum::default();
                for &l in cy {
                    self.visit(k, l, |xi, eta, w| s.add(w * phi(k, l, xi, eta)));
                }
                s.value()
            })
            .collect();
        sum_ordered(rows, mode)
    }
}

fn offset_id(dim: usize, o: [isize; 2], span: isize) -> usize {
    let w = 2 * span + 1;
    if dim == 1 {
        (o[0] + span) as usize
    } else {
        ((o[0] + span) + w * (o[1] + span)) as usize
    }
}

fn kernel_table(dim: usize, rule: &TensorRule, span: isize, sigma: f64, scale: f64) -> Vec<f64> {
    let n = rule.len();
    let w = 2 * span + 1;
    let count = if dim == 1 { w } else { w * w } as usize;
    let e = -(dim as f64) - sigma;
    let mut out = vec![0.0; count * n * n];
    for id in 0..count {
        let o = if dim == 1 {
            [id as isize - span, 0]
        } else {
            [(id as isize % w) - span, (id as isize / w) - span]
        };
        if o[0].abs().max(o[1].abs()) <= 1 {
            continue;
        }
        let off = [o[0] as f64, o[1] as f64];
        for i in 0..n {
            for j in 0..n {
                let y = [off[0] + rule.pts[j][0], off[1] + rule.pts[j][1]];
                let r = local_dist(&rule.pts[i], &y);
                out[id * n * n + i * n + j] = scale * rule.w[i] * rule.w[j] * r.powf(e);
            }
        }
    }
    out
}

fn near_1d(ell: f64, sigma: f64, opts: &RuleOptions) -> Vec<Vec<NearPoint>> {
    let glr = gauss_legendre(opts.radial_order);
    let glt = gauss_legendre(opts.tangential_order);
    let glt2 = gauss_legendre(2 * opts.tangential_order);
    let panels = dyadic_panels(opts.depth);
    let mut same = Vec::new();
    let beta = ell - 1.0 - sigma;
    for &(lo, hi) in &panels {
        for (rho, wr) in power_panel(lo, hi, beta, &glr) {
            let base = wr * rho.powf(-ell);
            for (eta, we) in gauss_on(0.0, 1.0 - rho, &glt) {
                let w = base * we;
                same.push(NearPoint {
                    xi: [eta + rho, 0.0],
                    eta: [eta, 0.0],
                    w,
                });
                same.push(NearPoint {
                    xi: [eta, 0.0],
                    eta: [eta + rho, 0.0],
                    w,
                });
            }
        }
    }
    let mut right = Vec::new();
    let mut left = Vec::new();
    let beta = ell - sigma;
    for &(lo, hi) in &panels {
        for (a, wa) in power_panel(lo, hi, beta, &glr) {
            let base = wa * a.powf(-ell);
            for &(tau, wt) in &glt2 {
                let w = base * wt * (1.0 + tau).powf(-1.0 - sigma);
                // a is the distance of the far point of the pair to the shared face
                right.push(NearPoint {
                    xi: [1.0 - a, 0.0],
                    eta: [a * tau, 0.0],
                    w,
                });
                right.push(NearPoint {
                    xi: [1.0 - a * tau, 0.0],
                    eta: [a, 0.0],
                    w,
                });
                left.push(NearPoint {
                    xi: [a, 0.0],
                    eta: [1.0 - a * tau, 0.0],
                    w,
                });
                left.push(NearPoint {
                    xi: [a * tau, 0.0],
                    eta: [1.0 - a, 0.0],
                    w,
                });
            }
        }
    }
    vec![left, same, right]
}

fn near_2d(sigma: f64, opts: &RuleOptions) -> Vec<Vec<NearPoint>> {
    let gl = gauss_legendre(opts.near_order);
    let (qa, qb) = interlaced_orders(opts.near_order);
    let (gla, glb) = (gauss_legendre(qa), gauss_legendre(qb));
    let e = -2.0 - sigma;
    let mut out = Vec::with_capacity(9);
    for id in 0..9isize {
        let o = [(id % 3) as f64 - 1.0, (id / 3) as f64 - 1.0];
        let a = [(0.0, 1.0), (0.0, 1.0)];
        let b = [(o[0], o[0] + 1.0), (o[1], o[1] + 1.0)];
        let mut pts = Vec::new();
        subdivide_pairs(a, b, 0, opts.depth, &mut |x, y, leaf| {
            let (ga, gb) = if leaf { (&gla, &glb) } else { (&gl, &gl) };
            for (x1, wx1) in gauss_on(x[1].0, x[1].1, ga) {
                for (x0, wx0) in gauss_on(x[0].0, x[0].1, ga) {
                    for (y1, wy1) in gauss_on(y[1].0, y[1].1, gb) {
                        for (y0, wy0) in gauss_on(y[0].0, y[0].1, gb) {
                            let r = local_dist(&[x0, x1], &[y0, y1]);
                            pts.push(NearPoint {
                                xi: [x0, x1],
                                eta: [y0 - o[0], y1 - o[1]],
                                w: wx0 * wx1 * wy0 * wy1 * r.powf(e),
                            });
                        }
                    }
                }
            }
        });
        out.push(pts);
    }
    // average with the mirrored class so that swapping x and y maps the rule onto itself
    (0..9)
        .map(|id| {
            let mut v: Vec<NearPoint> = out[id]
                .iter()
                .map(|p| NearPoint { w: 0.5 * p.w, ..*p })
                .collect();
            v.extend(out[8 - id].iter().map(|p| NearPoint {
                xi: p.eta,
                eta: p.xi,
                w: 0.5 * p.w,
            }));
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exact `int_{[0,1]^2} |x-y|^{ell-1-sigma}` for a single interval.
    fn self_exact(ell: f64, sigma: f64) -> f64 {
        2.0 / ((ell - sigma) * (ell + 1.0 - sigma))
    }

    #[test]
    fn linear_function_is_exact_in_1d() {
        let grid = Grid::new(1, 16, 1.0).unwrap();
        let (ell, sigma) = (2.0, 1.0);
        let rule = PairRule::new(grid, ell, sigma, RuleOptions::for_dim(1)).unwrap();
        // cells covering [0, 1]
        let cells: Vec<usize> = (8..16).collect();
        let v = rule.sum_pairs(&cells, &cells, Summation::Compensated, |k, l, xi, eta| {
            let x = grid.cell_point(k, xi)[0];
            let y = grid.cell_point(l, eta)[0];
            (x - y).abs().powf(ell)
        });
        assert!((v - self_exact(ell, sigma)).abs() < 1e-6, "{v}");
        let (ell, sigma) = (3.0, 2.1);
        let rule = PairRule::new(grid, ell, sigma, RuleOptions::for_dim(1)).unwrap();
        let v = rule.sum_pairs(&cells, &cells, Summation::Compensated, |k, l, xi, eta| {
            let x = grid.cell_point(k, xi)[0];
            let y = grid.cell_point(l, eta)[0];
            (x - y).abs().powf(ell)
        });
        assert!((v - self_exact(ell, sigma)).abs() < 1e-5 * self_exact(ell, sigma), "{v}");
    }

    #[test]
    fn weights_nonnegative_and_finite() {
        for dim in [1, 2] {
            let grid = Grid::new(dim, 6, 1.0).unwrap();
            let rule = PairRule::new(grid, 2.0, 1.2, RuleOptions::for_dim(dim)).unwrap();
            for k in 0..grid.num_cells() {
                for l in 0..grid.num_cells() {
                    rule.visit(k, l, |_, _, w| assert!(w.is_finite() && w >= 0.0));
                }
            }
        }
    }

    #[test]
    fn two_dimensional_constant_integrand() {
        // Phi = |x-y|^{2+sigma} cancels the kernel, so the sum is the area squared.
        let grid = Grid::new(2, 4, 1.0).unwrap();
        let sigma = 0.6;
        let rule = PairRule::new(grid, 2.0, sigma, RuleOptions::for_dim(2)).unwrap();
        let all: Vec<usize> = (0..grid.num_cells()).collect();
        let v = rule.sum_pairs(&all, &all, Summation::Compensated, |k, l, xi, eta| {
            let x = grid.cell_point(k, xi);
            let y = grid.cell_point(l, eta);
            crate::model::dist(&x, &y).powf(2.0 + sigma)
        });
        assert!((v - 16.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn rule_is_symmetric_under_swap() {
        for dim in [1, 2] {
            let grid = Grid::new(dim, 5, 1.0).unwrap();
            let rule = PairRule::new(grid, 2.0, 1.1, RuleOptions::for_dim(dim)).unwrap();
            let f = |x: &Point, y: &Point| (x[0] - 0.3 * y[0]).sin() + x[1] * y[1] * y[1];
            for k in 0..grid.num_cells() {
                for l in 0..grid.num_cells() {
                    let mut a = 0.0;
                    rule.visit(k, l, |xi, eta, w| a += w * f(&grid.cell_point(k, xi), &grid.cell_point(l, eta)));
                    let mut b = 0.0;
                    rule.visit(l, k, |xi, eta, w| b += w * f(&grid.cell_point(k, eta), &grid.cell_point(l, xi)));
                    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{k} {l} {a} {b}");
                }
            }
        }
    }

    #[test]
    fn divergent_order_rejected() {
        let grid = Grid::new(1, 8, 1.0).unwrap();
        assert!(PairRule::new(grid, 1.0, 1.0, RuleOptions::for_dim(1)).is_err());
    }
}
