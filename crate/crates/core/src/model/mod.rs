//! Problem data: exponents, regions, grid functions, exterior data and coefficients.

mod grid;
mod kernel;
mod spec;

use thiserror::Error;

pub use grid::{
    dist, getoor_profile, norm, point_from_slice, Exterior, ExteriorSpec, Grid, GridFunction,
    Point, Region, RegionKind,
};
pub use kernel::{checker_parity, ACoef, AFn, BCoef, BFn, KernelPair, KernelSpec, Modulus};
pub use spec::{
    abs_pow, bracket_power, kkp2_constant, kkp2_ratio, monotonicity_constant, monotonicity_ratio,
    validate_spec, DerivedExponents, ProblemSpec, Regime, DEFAULT_P_SOB_SENTINEL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid {name} = {value}: {reason}")]
    Range {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{0}")]
    Regime(String),
    #[error("grid: {0}")]
    Grid(String),
    #[error("coefficient assumption violated: {0}")]
    Kernel(String),
}
