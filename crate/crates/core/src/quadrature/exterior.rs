use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{dyadic_panels, gauss_legendre, gauss_on, QuadError};
use crate::model::{norm, Grid, Point, Region, RegionKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExteriorOptions {
    /// Dyadic panels in the substituted variable `w` toward the far field.
    pub panels: usize,
    pub order: usize,
    /// Gauss points per angular arc (two dimensions).
    pub angular: usize,
    /// Gauss points per grid-crossing segment for rays inside the box.
    pub segment_order: usize,
}

impl Default for ExteriorOptions {
    fn default() -> Self {
        ExteriorOptions {
            panels: 10,
            order: 4,
            angular: 8,
            segment_order: 3,
        }
    }
}

/// `|S^{N-1}|`: 2 for `N = 1`, `2 pi` for `N = 2`.
pub fn sphere_measure(dim: usize) -> f64 {
    if dim == 1 {
        2.0
    } else {
        2.0 * PI
    }
}

/// Unit directions with angular weights covering `S^{N-1}`. In two dimensions
/// the circle is split at the given breakpoint angles.
pub(crate) fn directions(dim: usize, breaks: &[f64], per_arc: usize) -> Vec<(Point, f64)> {
    if dim == 1 {
        return vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0)];
    }
    let mut b: Vec<f64> = breaks.iter().map(|t| t.rem_euclid(2.0 * PI)).collect();
    b.push(0.0);
    b.sort_by(f64::total_cmp);
    b.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
    b.push(2.0 * PI);
    let gl = gauss_legendre(per_arc);
    let mut out = Vec::new();
    for w in b.windows(2) {
        if w[1] - w[0] < 1e-14 {
            continue;
        }
        for (t, wt) in gauss_on(w[0], w[1], &gl) {
            out.push(([t.cos(), t.sin()], wt));
        }
    }
    out
}

fn region_breaks(x: &Point, region: &Region) -> Vec<f64> {
    match region.kind {
        RegionKind::Ball => vec![0.0, 0.5 * PI, PI, 1.5 * PI],
        RegionKind::Box => {
            let c = region.center_point();
            let r = region.radius;
            let mut v = Vec::new();
            for sx in [-1.0, 1.0] {
                for sy in [-1.0, 1.0] {
                    v.push((c[1] + sy * r - x[1]).atan2(c[0] + sx * r - x[0]));
                }
            }
            v
        }
    }
}

/// Nodes `y` and weights with `sum w F(y) ~ int_{|y-x| > d(theta)} F(y) |x-y|^{-N-sigma} dy`
/// along the ray `x + d(theta) w^{-1/sigma} theta`, where `d` is the exit distance
/// from `region` (which must contain `x`).
pub fn exterior_points(
    x: &Point,
    region: &Region,
    dim: usize,
    sigma: f64,
    opts: &ExteriorOptions,
) -> Vec<(Point, f64)> {
    let dirs = directions(dim, &region_breaks(x, region), opts.angular);
    let gl = gauss_legendre(opts.order);
    let panels = dyadic_panels(opts.panels);
    let mut out = Vec::new();
    for (e, aw) in dirs {
        let d = region.exit_distance(x, &e);
        push_ray(&mut out, x, &e, d, aw, sigma, &panels, &gl);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn push_ray(
    out: &mut Vec<(Point, f64)>,
    x: &Point,
    e: &Point,
    d: f64,
    aw: f64,
    sigma: f64,
    panels: &[(f64, f64)],
    gl: &[(f64, f64)],
) {
    let scale = aw * d.powf(-sigma) / sigma;
    for &(lo, hi) in panels {
        for (w, ww) in gauss_on(lo, hi, gl) {
            let rho = d * w.powf(-1.0 / sigma);
            out.push(([x[0] + rho * e[0], x[1] + rho * e[1]], scale * ww));
        }
    }
}

/// `int_{R^N \ B_R(x0)} |y|^{kappa (m-1)} |x0-y|^{-N-sigma} dy`.
pub fn exterior_radial_integral(
    x0: &Point,
    r: f64,
    sigma: f64,
    kappa: f64,
    m: f64,
    dim: usize,
) -> Result<f64, QuadError> {
    let g = kappa * (m - 1.0);
    if !(r > 0.0) || !(sigma > 0.0) {
        return Err(QuadError::Precondition(format!(
            "radius {r} and order {sigma} must be positive"
        )));
    }
    if g >= sigma {
        return Err(QuadError::Precondition(format!(
            "growth kappa (m-1) = {g} >= sigma = {sigma}: the tail integral diverges"
        )));
    }
    if g == 0.0 || norm(x0) == 0.0 {
        return Ok(sphere_measure(dim) * r.powf(g - sigma) / (sigma - g));
    }
    let ball = Region::ball(*x0, r, dim);
    let opts = ExteriorOptions {
        panels: 40,
        order: 8,
        angular: 16,
        ..Default::default()
    };
    Ok(exterior_points(x0, &ball, dim, sigma, &opts)
        .iter()
        .map(|(y, w)| w * norm(y).powf(g))
        .sum())
}

/// Ray parameters in `(lo, hi)` where the ray crosses a grid line.
pub(crate) fn ray_crossings(grid: &Grid, x: &Point, e: &Point, lo: f64, hi: f64) -> Vec<f64> {
    let h = grid.h();
    let mut t = vec![lo, hi];
    for a in 0..grid.dim {
        if e[a].abs() < 1e-15 {
            continue;
        }
        let s0 = (x[a] + e[a] * lo + grid.half_width) / h;
        let s1 = (x[a] + e[a] * hi + grid.half_width) / h;
        let (smin, smax) = if s0 < s1 { (s0, s1) } else { (s1, s0) };
        let mut k = smin.ceil();
        while k <= smax {
            let tk = (-grid.half_width + k * h - x[a]) / e[a];
            if tk > lo && tk < hi {
                t.push(tk);
            }
            k += 1.0;
        }
    }
    t.sort_by(f64::total_cmp);
    t.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * b.abs().max(1.0));
    t
}

/// `int_{R^N \ excl} F(y) |x-y|^{-N-sigma} dy` for `x` in `excl`. When a grid is
/// given, rays are split at grid lines inside its box and continued beyond the
/// box by the far-field substitution.
pub fn radial_integral<F>(
    x: &Point,
    excl: &Region,
    dim: usize,
    sigma: f64,
    grid: Option<&Grid>,
    f: F,
    opts: &ExteriorOptions,
) -> f64
where
    F: Fn(&Point) -> f64,
{
    let mut breaks = region_breaks(x, excl);
    if let Some(g) = grid {
        breaks.extend(region_breaks(x, &g.box_region()));
    }
    let dirs = directions(dim, &breaks, opts.angular);
    let gl = gauss_legendre(opts.order);
    let gls = gauss_legendre(opts.segment_order);
    let panels = dyadic_panels(opts.panels);
    let mut total = 0.0;
    let mut far = Vec::new();
    for (e, aw) in dirs {
        let d_in = excl.exit_distance(x, &e);
        let d_out = match grid {
            Some(g) if g.contains(x) => g.box_region().exit_distance(x, &e).max(d_in),
            _ => d_in,
        };
        if d_out > d_in {
            let g = grid.expect("grid present when d_out > d_in");
            let t = ray_crossings(g, x, &e, d_in, d_out);
            for w in t.windows(2) {
                // keep segments short relative to their distance so the kernel is resolved
                let pieces = ((w[1] - w[0]) / (0.5 * w[0])).ceil().clamp(1.0, 4096.0) as usize;
                let step = (w[1] - w[0]) / pieces as f64;
                for j in 0..pieces {
                    let lo = w[0] + j as f64 * step;
                    // v = rho^{-sigma} makes the kernel weight constant on the piece
                    let (va, vb) = ((lo + step).powf(-sigma), lo.powf(-sigma));
                    for (v, wv) in gauss_on(va, vb, &gls) {
                        let rho = v.powf(-1.0 / sigma);
                        let y = [x[0] + rho * e[0], x[1] + rho * e[1]];
                        total += aw * wv / sigma * f(&y);
                    }
                }
            }
        }
        far.clear();
        push_ray(&mut far, x, &e, d_out, aw, sigma, &panels, &gl);
        for (y, w) in &far {
            total += w * f(y);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let v = exterior_radial_integral(&[0.0, 0.0], 1.0, 1.0, 0.0, 2.0, 1).unwrap();
        assert!((v - 2.0).abs() < 1e-15);
        let v = exterior_radial_integral(&[0.0, 0.0], 2.0, 1.0, 0.0, 2.0, 1).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(exterior_radial_integral(&[0.0, 0.0], 1.0, 1.0, 1.0, 2.0, 1).is_err());
    }

    #[test]
    fn off_center_growth_matches_closed_form_limit() {
        // kappa > 0 off center: compare the 1D value with direct integration.
        let x0 = [0.3, 0.0];
        let v = exterior_radial_integral(&x0, 1.0, 1.5, 0.5, 2.0, 1).unwrap();
        let gl = gauss_legendre(20);
        let mut reference = 0.0;
        for &(lo, hi) in &dyadic_panels(60) {
            for (w, ww) in gauss_on(lo, hi, &gl) {
                // rho = w^{-1/1.5}
                let rho = w.powf(-1.0 / 1.5);
                reference += ww / 1.5 * ((x0[0] + rho).abs().sqrt() + (x0[0] - rho).abs().sqrt());
            }
        }
        assert!((v - reference).abs() < 1e-8 * reference, "{v} {reference}");
    }

    #[test]
    fn radial_integral_constant_matches_measure() {
        let grid = Grid::new(2, 8, 1.0).unwrap();
        let ball = Region::ball([0.0, 0.0], 0.25, 2);
        let v = radial_integral(
            &[0.0, 0.0],
            &ball,
            2,
            0.8,
            Some(&grid),
            |_| 1.0,
            &ExteriorOptions::default(),
        );
        let exact = 2.0 * PI * 0.25f64.powf(-0.8) / 0.8;
        assert!((v - exact).abs() < 1e-12 * exact, "{v} {exact}");
    }
}
