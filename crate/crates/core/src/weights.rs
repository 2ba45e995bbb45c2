//! Penalty weight `Γ(t) = g(t) G` whose scalar part vanishes at the
//! horizon like `(T - t)^α`, so late controls are cheap.
//!
//! Two shapes are supported: a pure power `g(t) = (T - t)^α` and a plateau
//! `g(t) = 1` for `t < T - T1`, switching to `(T - t)^α` on `[T - T1, T)`.
//! The certifying constant `c` with `g(t) ≤ c (T-t)^α` and
//! `1/g(t) ≤ c (1 + (T-t)^{-α})` is computed analytically for each shape.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mathcore::{self, MathError, QuadratureSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("alpha must lie strictly inside (0.5, 1), got {0}")]
    Alpha(f64),
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("plateau length T1 must lie in (0, T] = (0, {horizon}], got {t1}")]
    Plateau { t1: f64, horizon: f64 },
    #[error("G must be a symmetric positive-definite matrix: {0}")]
    NotSpd(String),
    #[error("time {t} is outside [0, {horizon}) where the weight is invertible")]
    Domain { t: f64, horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    PurePower,
    PlateauPower { t1: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeight {
    kind: WeightKind,
    alpha: f64,
    horizon: f64,
    g_matrix: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    certificate: f64,
}

impl PenaltyWeight {
    pub fn new(kind: WeightKind, alpha: f64, horizon: f64, g_matrix: DMatrix<f64>) -> Result<Self, WeightError> {
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(WeightError::Alpha(alpha));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(WeightError::Horizon(horizon));
        }
        if let WeightKind::PlateauPower { t1 } = kind {
            if !(t1 > 0.0 && t1 <= horizon) {
                return Err(WeightError::Plateau { t1, horizon });
            }
        }
        if !g_matrix.is_square() || g_matrix.nrows() == 0 {
            return Err(WeightError::NotSpd(format!("shape {}x{}", g_matrix.nrows(), g_matrix.ncols())));
        }
        let n = g_matrix.nrows();
        let g_inv =
            mathcore::solve_spd(&g_matrix, &DMatrix::identity(n, n)).map_err(|e| WeightError::NotSpd(e.to_string()))?;
        let g_inv = mathcore::symmetrize(&g_inv);
        let certificate = match kind {
            WeightKind::PlateauPower { t1 } if t1 < horizon => t1.powf(-alpha).max(1.0),
            _ => 1.0,
        };
        Ok(PenaltyWeight { kind, alpha, horizon, g_matrix, g_inv, certificate })
    }

    /// Pure power weight with `G = I`.
    pub fn pure_power(alpha: f64, horizon: f64, n: usize) -> Result<Self, WeightError> {
        Self::new(WeightKind::PurePower, alpha, horizon, DMatrix::identity(n, n))
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn dim(&self) -> usize {
        self.g_matrix.nrows()
    }
    pub fn g_matrix(&self) -> &DMatrix<f64> {
        &self.g_matrix
    }
    pub fn g_inverse(&self) -> &DMatrix<f64> {
        &self.g_inv
    }
    /// The constant `c` certifying the growth bounds on `g`.
    pub fn certificate(&self) -> f64 {
        self.certificate
    }

    /// Same shape on a new horizon; the plateau is clipped to fit.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self, WeightError> {
        let kind = match self.kind {
            WeightKind::PlateauPower { t1 } => WeightKind::PlateauPower { t1: t1.min(horizon) },
            k => k,
        };
        Self::new(kind, self.alpha, horizon, self.g_matrix.clone())
    }

    /// Scalar factor as a function of the time-to-go `τ = T - t > 0`.
    pub fn g_to_go(&self, tau: f64) -> f64 {
        match self.kind {
            WeightKind::PlateauPower { t1 } if tau > t1 => 1.0,
            _ => tau.powf(self.alpha),
        }
    }

    pub fn g_inv_to_go(&self, tau: f64) -> f64 {
        match self.kind {
            WeightKind::PlateauPower { t1 } if tau > t1 => 1.0,
            _ => tau.powf(-self.alpha),
        }
    }

    fn check_time(&self, t: f64) -> Result<f64, WeightError> {
        if !(t >= 0.0 && t < self.horizon) {
            return Err(WeightError::Domain { t, horizon: self.horizon });
        }
        Ok(self.horizon - t)
    }

    pub fn g(&self, t: f64) -> Result<f64, WeightError> {
        Ok(self.g_to_go(self.check_time(t)?))
    }

    pub fn g_inv(&self, t: f64) -> Result<f64, WeightError> {
        Ok(self.g_inv_to_go(self.check_time(t)?))
    }

    /// `Γ(t) = g(t) G`.
    pub fn gamma(&self, t: f64) -> Result<DMatrix<f64>, WeightError> {
        Ok(&self.g_matrix * self.g(t)?)
    }

    /// `Γ(t)⁻¹ = g(t)⁻¹ G⁻¹`, defined for `t ∈ [0, T)`.
    pub fn gamma_inv(&self, t: f64) -> Result<DMatrix<f64>, WeightError> {
        Ok(&self.g_inv * self.g_inv(t)?)
    }

    pub fn gamma_inv_to_go(&self, tau: f64) -> DMatrix<f64> {
        &self.g_inv * self.g_inv_to_go(tau)
    }

    /// Absolute time at which the plateau switches to the power law, if inside (0, T).
    pub fn breakpoint(&self) -> Option<f64> {
        match self.kind {
            WeightKind::PlateauPower { t1 } if t1 < self.horizon => Some(self.horizon - t1),
            _ => None,
        }
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::new(self.alpha).expect("alpha validated at construction")
    }

    /// `∫ₛᵉ F dt` for an integrand written in time-to-go, split at the
    /// plateau breakpoint so each piece is smooth after substitution.
    pub fn integrate<F>(&self, f: F, spec: &QuadratureSpec, s: f64, e: f64) -> Result<DMatrix<f64>, MathError>
    where
        F: Fn(f64) -> DMatrix<f64>,
    {
        let t_end = self.horizon;
        match self.breakpoint() {
            Some(bp) if s < bp && bp < e => {
                let left = mathcore::integrate_singular_segment(&f, spec, s, bp, t_end)?;
                let right = mathcore::integrate_singular_segment(&f, spec, bp, e, t_end)?;
                Ok(left + right)
            }
            _ => mathcore::integrate_singular_segment(&f, spec, s, e, t_end),
        }
    }

    /// `∫ F(τ) dτ` over time-to-go `τ ∈ [lo, hi]`, split at the plateau edge.
    pub fn integrate_to_go<F>(&self, f: F, spec: &QuadratureSpec, lo: f64, hi: f64) -> Result<DMatrix<f64>, MathError>
    where
        F: Fn(f64) -> DMatrix<f64>,
    {
        match self.kind {
            WeightKind::PlateauPower { t1 } if lo < t1 && t1 < hi => {
                let near = mathcore::integrate_to_go(&f, spec, lo, t1)?;
                let far = mathcore::integrate_to_go(&f, spec, t1, hi)?;
                Ok(near + far)
            }
            _ => mathcore::integrate_to_go(f, spec, lo, hi),
        }
    }

    /// `∫ₛᵉ g(t)⁻¹ dt` in closed form.
    pub fn integrated_g_inv(&self, s: f64, e: f64) -> f64 {
        let power = |a: f64, b: f64| {
            // ∫ over time-to-go in [b, a] of τ^{-α}
            (a.powf(1.0 - self.alpha) - b.powf(1.0 - self.alpha)) / (1.0 - self.alpha)
        };
        let (ta, tb) = (self.horizon - s, self.horizon - e);
        match self.kind {
            WeightKind::PlateauPower { t1 } if t1 < self.horizon => {
                let flat = (ta - tb.max(t1)).max(0.0);
                let curved = if tb < t1 { power(ta.min(t1), tb) } else { 0.0 };
                flat + curved
            }
            _ => power(ta, tb),
        }
    }
}
