//! Dense linear-algebra kernels shared by the rest of the crate.
//!
//! Everything here is a pure function of its inputs. Matrices are small
//! (`n` up to about ten), so all routines work on `nalgebra::DMatrix`.

mod expm;
mod linalg;
mod quadrature;

pub use expm::{mat_exp, mat_exp_integral};
pub use linalg::{condition_spd, min_eigenvalue, solve_spd, symmetrize, CONDITION_LIMIT};
pub use quadrature::{gauss_legendre, integrate_singular, integrate_singular_segment, integrate_to_go, QuadratureSpec};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix exponential overflow (1-norm of A*t = {norm:e})")]
    Overflow { norm: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is singular or indefinite (condition estimate {cond:e})")]
    Singular { cond: f64 },
    #[error("quadrature on [{start}, {end}] did not reach tolerance {tol:e} within {panels} panels")]
    QuadratureNotConverged { start: f64, end: f64, tol: f64, panels: usize },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
}
