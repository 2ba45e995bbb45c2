//! Optimal replication of a terminal target by a controlled linear system
//! `x' = A x + b u`, `x(0) = a`, `x(T) = f`, minimising `E ∫ uᵀ Γ u dt`.
//!
//! The optimal control is `û(t) = Γ(t)⁻¹ bᵀ e^{Aᵀ(T-t)} μ̂(t)` where the
//! multiplier `μ̂` is the martingale
//! `μ̂(t) = R(0)⁻¹ (E f - e^{AT} a) + ∫₀ᵗ R(s)⁻¹ k_f(s) dw(s)`.

mod checks;
mod plan;
mod riccati;
mod run;

pub use checks::{
    admissibility_report, dual_saddle_check, loewner_check, martingale_check, min_cost_closed_form, perturbation_check,
    primal_saddle_check, random_adapted, random_zero_replicating, Admissibility, LoewnerReport, MartingaleReport,
    Perturbation, PerturbationOutcome,
};
pub use plan::{Scheme, Step, StepPlan};
pub use riccati::RiccatiWeights;
pub use run::{run_ensemble, simulate_path, PathRecord, PathTrace, ReplicationRun, RunOptions};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::kernels::KernelError;
use crate::mathcore::{mat_exp, MathError};
use crate::sde::SdeError;
use crate::weights::WeightError;

/// Controls with `b` worse conditioned than this are rejected.
pub const B_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplicatorError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Grid(#[from] SdeError),
    #[error("invalid system: {0}")]
    System(String),
    #[error("R({t}) is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositive { t: f64, min_eig: f64 },
    #[error("inconsistent inputs: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x0: DVector<f64>,
    horizon: f64,
    noise_dim: usize,
}

impl SystemSpec {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        x0: DVector<f64>,
        horizon: f64,
        noise_dim: usize,
    ) -> Result<Self, ReplicatorError> {
        let n = x0.len();
        if n == 0 {
            return Err(ReplicatorError::System("state dimension must be at least 1".into()));
        }
        if a.shape() != (n, n) || b.shape() != (n, n) {
            return Err(ReplicatorError::System(format!(
                "A and b must be {n}x{n}, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        if noise_dim == 0 {
            return Err(ReplicatorError::System("noise dimension must be at least 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ReplicatorError::System(format!("horizon must be positive, got {horizon}")));
        }
        if a.iter().chain(b.iter()).chain(x0.iter()).any(|v| !v.is_finite()) {
            return Err(ReplicatorError::System("A, b and a must be finite".into()));
        }
        let sv = b.clone().singular_values();
        let cond = sv.max() / sv.min();
        if !(cond < B_CONDITION_LIMIT) {
            return Err(ReplicatorError::System(format!("b is not invertible (condition number {cond:e})")));
        }
        Ok(SystemSpec { a, b, x0, horizon, noise_dim })
    }

    /// `n = 1`, `x' = r x + u`, `x(0) = a`.
    pub fn scalar(rate: f64, x0: f64, horizon: f64) -> Result<Self, ReplicatorError> {
        Self::new(DMatrix::from_element(1, 1, rate), DMatrix::identity(1, 1), DVector::from_element(1, x0), horizon, 1)
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `e^{AT} a`, the uncontrolled terminal state.
    pub fn free_terminal(&self) -> Result<DVector<f64>, MathError> {
        Ok(mat_exp(&self.a, self.horizon)? * &self.x0)
    }
}
