use serde::{Deserialize, Serialize};

use super::{dyadic_panels, gauss_legendre, gauss_on, power_panel, QuadError};
use crate::model::{Point, Region, RegionKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOptions {
    /// Dyadic radial panels toward the diagonal (one-dimensional rules).
    pub depth: usize,
    /// Recursive box subdivision depth (two-dimensional rules).
    pub depth_nd: usize,
    pub order: usize,
    /// Known vanishing order `ell` of `F` on the diagonal, `F ~ |x-y|^ell`;
    /// enables the power substitution that makes homogeneous integrands exact.
    pub vanishing_order: Option<f64>,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            depth: 12,
            depth_nd: 4,
            order: 8,
            vanishing_order: None,
        }
    }
}

type Iv = (f64, f64);

fn interval(r: &Region) -> Iv {
    (r.center[0] - r.radius, r.center[0] + r.radius)
}

/// `int_A int_B F(x,y) |x-y|^{-N-sigma} dx dy` over intervals (N = 1) or cubes (N = 2).
pub fn pair_integral<F>(
    f: F,
    dom_a: &Region,
    dom_b: &Region,
    sigma: f64,
    opts: &PairOptions,
) -> Result<f64, QuadError>
where
    F: Fn(&Point, &Point) -> f64,
{
    let dim = dom_a.dim();
    if dim != dom_b.dim() {
        return Err(QuadError::Precondition("regions of different dimension".into()));
    }
    if dim == 1 {
        let ctx = Ctx1 {
            f: &|x: f64, y: f64| f(&[x, 0.0], &[y, 0.0]),
            sigma,
            opts,
            gl: gauss_legendre(opts.order),
            gl_tan: gauss_legendre(2 * opts.order),
        };
        return ctx.integrate(interval(dom_a), interval(dom_b));
    }
    for r in [dom_a, dom_b] {
        if r.kind == RegionKind::Ball {
            return Err(QuadError::Unsupported(
                "two-dimensional pair integrals need cube regions".into(),
            ));
        }
    }
    let bx = |r: &Region| -> [Iv; 2] {
        [
            (r.center[0] - r.radius, r.center[0] + r.radius),
            (r.center[1] - r.radius, r.center[1] + r.radius),
        ]
    };
    let (a, b) = (bx(dom_a), bx(dom_b));
    let depth = opts.depth_nd.max(2);
    let (total, leaf) = integrate_nd(&f, a, b, sigma, depth, opts.order);
    let (_, leaf_prev) = integrate_nd(&f, a, b, sigma, depth - 1, opts.order);
    if leaf.abs() > 1e-13 * total.abs().max(1e-300) && leaf.abs() >= 0.95 * leaf_prev.abs() {
        return Err(QuadError::Singular(format!(
            "near-diagonal contribution does not decay under subdivision ({leaf_prev:e} -> {leaf:e})"
        )));
    }
    Ok(total)
}

struct Ctx1<'a> {
    f: &'a dyn Fn(f64, f64) -> f64,
    sigma: f64,
    opts: &'a PairOptions,
    gl: Vec<(f64, f64)>,
    gl_tan: Vec<(f64, f64)>,
}

fn check_decay(contrib: &[f64], total: f64) -> Result<(), QuadError> {
    let n = contrib.len();
    if n < 3 {
        return Ok(());
    }
    // the last entry is the innermost [0, 2^-d] panel; compare the two dyadic panels before it
    let (a, b) = (contrib[n - 3], contrib[n - 2]);
    if b.abs() > 1e-12 * total.abs().max(1e-300) && b.abs() >= 0.995 * a.abs() {
        return Err(QuadError::Singular(format!(
            "dyadic panel contributions do not decay toward the diagonal ({a:e} -> {b:e})"
        )));
    }
    Ok(())
}

impl Ctx1<'_> {
    fn integrate(&self, a: Iv, b: Iv) -> Result<f64, QuadError> {
        let mut pts = vec![a.0, a.1, b.0, b.1];
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let pieces = |iv: Iv| -> Vec<Iv> {
            pts.windows(2)
                .map(|w| (w[0], w[1]))
                .filter(|p| p.0 >= iv.0 && p.1 <= iv.1)
                .collect()
        };
        let (pa, pb) = (pieces(a), pieces(b));
        let mut total = 0.0;
        for &x in &pa {
            for &y in &pb {
                total += self.piece_pair(x, y)?;
            }
        }
        Ok(total)
    }

    fn piece_pair(&self, a: Iv, b: Iv) -> Result<f64, QuadError> {
        if a == b {
            self.self_pair(a)
        } else if a.1 == b.0 {
            self.corner(self.f, a, b)
        } else if b.1 == a.0 {
            let g = |x: f64, y: f64| (self.f)(y, x);
            self.corner(&g, b, a)
        } else {
            Ok(self.separated(self.f, a, b, 0))
        }
    }

    fn kernel(&self, r: f64) -> f64 {
        r.abs().powf(-1.0 - self.sigma)
    }

    fn separated(&self, f: &dyn Fn(f64, f64) -> f64, a: Iv, b: Iv, level: usize) -> f64 {
        let gap = (b.0 - a.1).max(a.0 - b.1).max(0.0);
        let (la, lb) = (a.1 - a.0, b.1 - b.0);
        if gap >= la.max(lb) || level >= 40 {
            let mut s = 0.0;
            for (x, wx) in gauss_on(a.0, a.1, &self.gl) {
                for (y, wy) in gauss_on(b.0, b.1, &self.gl) {
                    s += wx * wy * f(x, y) * self.kernel(x - y);
                }
            }
            s
        } else if la >= lb {
            let m = 0.5 * (a.0 + a.1);
            self.separated(f, (a.0, m), b, level + 1) + self.separated(f, (m, a.1), b, level + 1)
        } else {
            let m = 0.5 * (b.0 + b.1);
            self.separated(f, a, (b.0, m), level + 1) + self.separated(f, a, (m, b.1), level + 1)
        }
    }

    /// Radial rule on `(0, 1)` for `r^{-1-sigma+shift} g(r)`; returns (node, weight for g).
    fn radial(&self, shift: f64) -> Result<Vec<Vec<(f64, f64)>>, QuadError> {
        let base = -1.0 - self.sigma + shift;
        dyadic_panels(self.opts.depth)
            .into_iter()
            .map(|(lo, hi)| match self.opts.vanishing_order {
                Some(ell) => {
                    let beta = base + ell;
                    if beta <= -1.0 {
                        return Err(QuadError::Singular(format!(
                            "vanishing order {ell} too small for kernel order {}",
                            self.sigma
                        )));
                    }
                    Ok(power_panel(lo, hi, beta, &self.gl)
                        .into_iter()
                        .map(|(r, w)| (r, w * r.powf(-ell)))
                        .collect())
                }
                None => Ok(gauss_on(lo, hi, &self.gl)
                    .map(|(r, w)| (r, w * r.powf(base)))
                    .collect()),
            })
            .collect()
    }

    fn self_pair(&self, a: Iv) -> Result<f64, QuadError> {
        let len = a.1 - a.0;
        let panels = self.radial(0.0)?;
        let mut contrib = Vec::with_capacity(panels.len());
        for panel in &panels {
            let mut s = 0.0;
            for &(r, w) in panel {
                let rho = len * r;
                let mut inner = 0.0;
                for (eta, we) in gauss_on(a.0, a.1 - rho, &self.gl) {
                    inner += we * ((self.f)(eta + rho, eta) + (self.f)(eta, eta + rho));
                }
                s += w * inner;
            }
            contrib.push(s * len.powf(-self.sigma));
        }
        let total: f64 = contrib.iter().sum();
        check_decay(&contrib, total)?;
        Ok(total)
    }

    /// `a` lies to the left of `b` and they share the endpoint `c`.
    fn corner(&self, f: &dyn Fn(f64, f64) -> f64, a: Iv, b: Iv) -> Result<f64, QuadError> {
        let c = a.1;
        let (la, lb) = (c - a.0, b.1 - c);
        let m = la.min(lb);
        let panels = self.radial(1.0)?;
        let mut contrib = Vec::with_capacity(panels.len());
        for panel in &panels {
            let mut s = 0.0;
            for &(r, w) in panel {
                let rr = m * r;
                let mut inner = 0.0;
                for &(tau, wt) in &self.gl_tan {
                    let k = (1.0 + tau).powf(-1.0 - self.sigma);
                    inner += wt * k * (f(c - rr, c + rr * tau) + f(c - rr * tau, c + rr));
                }
                s += w * inner;
            }
            contrib.push(s * m.powf(1.0 - self.sigma));
        }
        let mut total: f64 = contrib.iter().sum();
        check_decay(&contrib, total)?;
        if la > m {
            total += self.separated(f, (a.0, c - m), b, 0);
        }
        if lb > m {
            total += self.separated(f, (c - m, c), (c + m, b.1), 0);
        }
        Ok(total)
    }
}

fn box_gap(a: &[Iv; 2], b: &[Iv; 2]) -> f64 {
    let mut g2: f64 = 0.0;
    for ax in 0..2 {
        let g = (b[ax].0 - a[ax].1).max(a[ax].0 - b[ax].1).max(0.0);
        g2 += g * g;
    }
    g2.sqrt()
}

fn box_side(a: &[Iv; 2]) -> f64 {
    (a[0].1 - a[0].0).max(a[1].1 - a[1].0)
}

fn split(a: &[Iv; 2]) -> [[Iv; 2]; 4] {
    let mx = 0.5 * (a[0].0 + a[0].1);
    let my = 0.5 * (a[1].0 + a[1].1);
    [
        [(a[0].0, mx), (a[1].0, my)],
        [(mx, a[0].1), (a[1].0, my)],
        [(a[0].0, mx), (my, a[1].1)],
        [(mx, a[0].1), (my, a[1].1)],
    ]
}

fn tensor2(b: &[Iv; 2], gl: &[(f64, f64)]) -> Vec<(Point, f64)> {
    let mut v = Vec::with_capacity(gl.len() * gl.len());
    for (y, wy) in gauss_on(b[1].0, b[1].1, gl) {
        for (x, wx) in gauss_on(b[0].0, b[0].1, gl) {
            v.push(([x, y], wx * wy));
        }
    }
    v
}

/// Visits every leaf box pair of the recursive near-diagonal subdivision.
/// `leaf` is true for touching pairs at the maximal depth, which use
/// interlaced Gauss rules so no nodes coincide.
pub(crate) fn subdivide_pairs(
    a: [Iv; 2],
    b: [Iv; 2],
    level: usize,
    depth: usize,
    visit: &mut dyn FnMut(&[Iv; 2], &[Iv; 2], bool),
) {
    let gap = box_gap(&a, &b);
    let side = box_side(&a).max(box_side(&b));
    if gap >= side && gap > 0.0 {
        visit(&a, &b, false);
    } else if level >= depth {
        visit(&a, &b, true);
    } else {
        let (ca, cb) = (split(&a), split(&b));
        for x in &ca {
            for y in &cb {
                subdivide_pairs(*x, *y, level + 1, depth, visit);
            }
        }
    }
}

/// Even-order rule for the first box and the next odd order for the second.
pub(crate) fn interlaced_orders(order: usize) -> (usize, usize) {
    let qa = order.max(2).div_ceil(2) * 2;
    (qa, qa + 1)
}

fn integrate_nd<F>(f: &F, a: [Iv; 2], b: [Iv; 2], sigma: f64, depth: usize, order: usize) -> (f64, f64)
where
    F: Fn(&Point, &Point) -> f64,
{
    let gl = gauss_legendre(order);
    let (qa, qb) = interlaced_orders(order);
    let (gla, glb) = (gauss_legendre(qa), gauss_legendre(qb));
    let (mut total, mut leaf) = (0.0, 0.0);
    let e = -2.0 - sigma;
    subdivide_pairs(a, b, 0, depth, &mut |x, y, is_leaf| {
        let (px, py) = if is_leaf {
            (tensor2(x, &gla), tensor2(y, &glb))
        } else {
            (tensor2(x, &gl), tensor2(y, &gl))
        };
        let mut s = 0.0;
        for (xp, wx) in &px {
            for (yp, wy) in &py {
                let r = crate::model::dist(xp, yp);
                s += wx * wy * f(xp, yp) * r.powf(e);
            }
        }
        total += s;
        if is_leaf {
            leaf += s;
        }
    });
    (total, leaf)
}
