pub mod model;
pub mod quadrature;
pub mod functionals;
pub mod operators;
pub mod regularity;
pub mod solver;
pub mod cli;
