//! Singular-kernel integration: Gauss rules, double integrals against
//! `|x-y|^{-N-sigma}`, exterior and radial integrals, the cell-pair rule used
//! by the weak form, and principal-value point evaluation.

mod exterior;
mod grid_rule;
mod pair;
mod pv;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exterior::{
    exterior_points, exterior_radial_integral, radial_integral, sphere_measure, ExteriorOptions,
};
pub use grid_rule::{NearPoint, PairClass, PairRule, RuleOptions, TensorRule};
pub use pair::{pair_integral, PairOptions};
pub use pv::{pv_point_eval, PvOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("non-integrable configuration: {0}")]
    Singular(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported region: {0}")]
    Unsupported(String),
    #[error("point outside the admissible domain: {0}")]
    Domain(String),
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    if n <= 1 {
        return vec![(0.5, 1.0)];
    }
    let rule = GaussLegendre::new(n).expect("Gauss-Legendre degree >= 2");
    let mut v: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Gauss rule mapped to `[a, b]`.
pub fn gauss_on(a: f64, b: f64, gl: &[(f64, f64)]) -> impl Iterator<Item = (f64, f64)> + '_ {
    let len = b - a;
    gl.iter().map(move |&(t, w)| (a + len * t, len * w))
}

/// Panels of `[0, 1]` graded toward 0, outermost first; the last is `[0, 2^-depth]`.
pub fn dyadic_panels(depth: usize) -> Vec<(f64, f64)> {
    let mut v = Vec::with_capacity(depth + 1);
    let mut hi = 1.0;
    for _ in 0..depth {
        v.push((0.5 * hi, hi));
        hi *= 0.5;
    }
    v.push((0.0, hi));
    v
}

/// Nodes `rho` and weights `w` with `sum w g(rho) ~ int_a^b rho^beta g(rho) drho`.
pub fn power_panel(a: f64, b: f64, beta: f64, gl: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let e = beta + 1.0;
    debug_assert!(e > 0.0);
    let (va, vb) = (a.powf(e), b.powf(e));
    gl.iter()
        .map(|&(t, w)| {
            let v = va + (vb - va) * t;
            (v.powf(1.0 / e), (vb - va) * w / e)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summation {
    Naive,
    #[default]
    Compensated,
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    c: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Sums in the given order with the requested mode.
pub fn sum_ordered<I: IntoIterator<Item = f64>>(values: I, mode: Summation) -> f64 {
    match mode {
        Summation::Naive => values.into_iter().sum(),
        Summation::Compensated => {
            let mut s = CompensatedSum::default();
            for v in values {
                s.add(v);
            }
            s.value()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials() {
        let gl = gauss_legendre(5);
        let v: f64 = gl.iter().map(|&(x, w)| w * x.powi(9)).sum();
        assert!((v - 0.1).abs() < 1e-15);
        assert_eq!(gauss_legendre(1), vec![(0.5, 1.0)]);
    }

    #[test]
    fn power_panel_exact_for_power() {
        let gl = gauss_legendre(2);
        let beta = -0.7;
        let s: f64 = dyadic_panels(5)
            .iter()
            .flat_map(|&(a, b)| power_panel(a, b, beta, &gl))
            .map(|(_, w)| w)
            .sum();
        assert!((s - 1.0 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(sum_ordered(v, Summation::Compensated), 2.0);
    }
}
