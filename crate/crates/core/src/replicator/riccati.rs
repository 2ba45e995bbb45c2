//! `Q(t) = e^{A(T-t)} b Γ(t)⁻¹ bᵀ e^{Aᵀ(T-t)}` and `R(s) = ∫ₛᵀ Q(t) dt`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{ReplicatorError, SystemSpec};
use crate::mathcore::{mat_exp, min_eigenvalue, symmetrize, QuadratureSpec};
use crate::sde::TimeGrid;
use crate::weights::PenaltyWeight;

#[derive(Debug, Clone)]
pub struct RiccatiWeights {
    system: SystemSpec,
    weight: PenaltyWeight,
    grid: TimeGrid,
    spec: QuadratureSpec,
    /// `b G⁻¹ bᵀ`
    bgb: DMatrix<f64>,
    /// `∫ Q` over each step.
    steps: Vec<DMatrix<f64>>,
    /// `R(t_i)`, with `R(t_N) = 0`.
    nodes: Vec<DMatrix<f64>>,
}

impl RiccatiWeights {
    pub fn build(system: &SystemSpec, weight: &PenaltyWeight, grid: &TimeGrid) -> Result<Self, ReplicatorError> {
        Self::build_with(system, weight, grid, weight.quadrature())
    }

    pub fn build_with(
        system: &SystemSpec,
        weight: &PenaltyWeight,
        grid: &TimeGrid,
        spec: QuadratureSpec,
    ) -> Result<Self, ReplicatorError> {
        let horizon = system.horizon();
        let tol = 1e-12 * horizon;
        if (grid.horizon() - horizon).abs() > tol || (weight.horizon() - horizon).abs() > tol {
            return Err(ReplicatorError::Mismatch(format!(
                "horizons differ: system {horizon}, weight {}, grid {}",
                weight.horizon(),
                grid.horizon()
            )));
        }
        if weight.dim() != system.n() {
            return Err(ReplicatorError::Mismatch(format!(
                "weight is {}x{}, state dimension is {}",
                weight.dim(),
                weight.dim(),
                system.n()
            )));
        }
        // bounds every e^{Aτ} evaluated below
        mat_exp(system.a(), horizon)?;
        let b = system.b();
        let bgb = symmetrize(&(b * weight.g_inverse() * b.transpose()));
        let mut this = RiccatiWeights {
            system: system.clone(),
            weight: weight.clone(),
            grid: grid.clone(),
            spec,
            bgb,
            steps: Vec::new(),
            nodes: Vec::new(),
        };
        let n_steps = grid.steps();
        let steps = (0..n_steps)
            .into_par_iter()
            .map(|i| {
                let lo = if i + 1 == n_steps { 0.0 } else { horizon - grid.t(i + 1) };
                let hi = horizon - grid.t(i);
                this.integral_to_go(lo, hi)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = system.n();
        let mut nodes = vec![DMatrix::zeros(n, n); n_steps + 1];
        for i in (0..n_steps).rev() {
            nodes[i] = &nodes[i + 1] + &steps[i];
        }
        for (i, r) in nodes.iter().enumerate().take(n_steps) {
            let min_eig = min_eigenvalue(r);
            if !(min_eig > 0.0) {
                return Err(ReplicatorError::NotPositive { t: grid.t(i), min_eig });
            }
        }
        this.steps = steps;
        this.nodes = nodes;
        Ok(this)
    }

    pub fn system(&self) -> &SystemSpec {
        &self.system
    }
    pub fn weight(&self) -> &PenaltyWeight {
        &self.weight
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn quadrature(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// `Q` at time-to-go `τ > 0`.
    pub fn q_to_go(&self, tau: f64) -> DMatrix<f64> {
        let scaled = &self.bgb * self.weight.g_inv_to_go(tau);
        if self.system.a().iter().all(|&v| v == 0.0) {
            return scaled;
        }
        let e = mat_exp(self.system.a(), tau).expect("bounded by e^{AT}");
        symmetrize(&(&e * scaled * e.transpose()))
    }

    pub fn q(&self, t: f64) -> Result<DMatrix<f64>, ReplicatorError> {
        let horizon = self.system.horizon();
        if !(t >= 0.0 && t < horizon) {
            return Err(ReplicatorError::Mismatch(format!("Q is defined on [0, {horizon}), got t = {t}")));
        }
        Ok(self.q_to_go(horizon - t))
    }

    /// `∫ Q` over time-to-go `[lo, hi]`.
    pub fn integral_to_go(&self, lo: f64, hi: f64) -> Result<DMatrix<f64>, ReplicatorError> {
        let m = self.weight.integrate_to_go(|tau| self.q_to_go(tau), &self.spec, lo, hi)?;
        Ok(symmetrize(&m))
    }

    /// `R` at time-to-go `τ`, by direct quadrature.
    pub fn r_to_go(&self, tau: f64) -> Result<DMatrix<f64>, ReplicatorError> {
        self.integral_to_go(0.0, tau)
    }

    /// `R(s)` for any `s ∈ [0, T]`.
    pub fn r_at(&self, s: f64) -> Result<DMatrix<f64>, ReplicatorError> {
        let horizon = self.system.horizon();
        if !(s >= 0.0 && s <= horizon) {
            return Err(ReplicatorError::Mismatch(format!("R is defined on [0, {horizon}], got s = {s}")));
        }
        if let Some(i) = self.grid.index_of(s) {
            return Ok(self.nodes[i].clone());
        }
        self.r_to_go(horizon - s)
    }

    /// Cached `R(t_i)`.
    pub fn r_node(&self, i: usize) -> &DMatrix<f64> {
        &self.nodes[i]
    }

    /// `R(t_i) - R(t_{i+1})`.
    pub fn step_integral(&self, i: usize) -> &DMatrix<f64> {
        &self.steps[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::WeightKind;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn ref_system(rate: f64) -> SystemSpec {
        SystemSpec::scalar(rate, 0.0, 1.0).unwrap()
    }

    #[test]
    fn pure_power_closed_form() {
        let w = PenaltyWeight::pure_power(0.75, 1.0, 1).unwrap();
        let grid = TimeGrid::graded(64, 1.0, 4.0).unwrap();
        let r = RiccatiWeights::build(&ref_system(0.0), &w, &grid).unwrap();
        assert_relative_eq!(r.r_node(0)[(0, 0)], 4.0, max_relative = 1e-12);
        for i in 0..=64 {
            let exact = 4.0 * (1.0 - grid.t(i)).powf(0.25);
            assert_relative_eq!(r.r_node(i)[(0, 0)], exact, max_relative = 1e-10, epsilon = 1e-14);
        }
        assert_eq!(r.r_node(64)[(0, 0)], 0.0);
        assert_relative_eq!(r.r_at(0.3).unwrap()[(0, 0)], 4.0 * 0.7f64.powf(0.25), max_relative = 1e-10);
        assert_relative_eq!(r.q(0.5).unwrap()[(0, 0)], 0.5f64.powf(-0.75), max_relative = 1e-14);
    }

    #[test]
    fn with_rate_matches_refined_reference() {
        let w = PenaltyWeight::pure_power(0.75, 1.0, 1).unwrap();
        let grid = TimeGrid::graded(16, 1.0, 4.0).unwrap();
        let r = RiccatiWeights::build(&ref_system(0.05), &w, &grid).unwrap();
        // trapezoid in v = (1-t)^{1/4}, integrand 4 e^{0.1 v^4}
        let m = 1_000_000;
        let h = 1.0 / m as f64;
        let g = |v: f64| 4.0 * (0.1 * v.powi(4)).exp();
        let reference = (0.5 * (g(0.0) + g(1.0)) + (1..m).map(|k| g(k as f64 * h)).sum::<f64>()) * h;
        assert!((r.r_node(0)[(0, 0)] - reference).abs() < 1e-8);
    }

    #[test]
    fn matrix_system_is_diagonal_when_decoupled() {
        let w = PenaltyWeight::pure_power(0.75, 1.0, 2).unwrap();
        let sys = SystemSpec::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DVector::zeros(2), 1.0, 1).unwrap();
        let grid = TimeGrid::graded(8, 1.0, 4.0).unwrap();
        let r = RiccatiWeights::build(&sys, &w, &grid).unwrap();
        assert_relative_eq!(r.r_node(0), &(DMatrix::identity(2, 2) * 4.0), max_relative = 1e-12);
    }

    #[test]
    fn plateau_weight_splits_cleanly() {
        let w = PenaltyWeight::new(WeightKind::PlateauPower { t1: 0.5 }, 0.75, 1.0, DMatrix::identity(1, 1)).unwrap();
        let grid = TimeGrid::graded(32, 1.0, 4.0).unwrap();
        let r = RiccatiWeights::build(&ref_system(0.0), &w, &grid).unwrap();
        let exact = 0.5 + 4.0 * 0.5f64.powf(0.25);
        assert_relative_eq!(r.r_node(0)[(0, 0)], exact, max_relative = 1e-10);
        assert_relative_eq!(r.r_node(0)[(0, 0)], w.integrated_g_inv(0.0, 1.0), max_relative = 1e-10);
    }

    #[test]
    fn steps_are_loewner_positive() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        let sys = SystemSpec::new(a, b, DVector::zeros(2), 1.0, 1).unwrap();
        let w = PenaltyWeight::pure_power(0.75, 1.0, 2).unwrap();
        let grid = TimeGrid::graded(32, 1.0, 4.0).unwrap();
        let r = RiccatiWeights::build(&sys, &w, &grid).unwrap();
        for i in 0..32 {
            assert!(min_eigenvalue(r.step_integral(i)) >= -1e-10);
        }
        assert!(r.r_at(1.0).unwrap().amax() == 0.0);
    }

    #[test]
    fn rejects_mismatched_horizons() {
        let w = PenaltyWeight::pure_power(0.75, 2.0, 1).unwrap();
        let grid = TimeGrid::graded(8, 1.0, 4.0).unwrap();
        assert!(matches!(RiccatiWeights::build(&ref_system(0.0), &w, &grid), Err(ReplicatorError::Mismatch(_))));
    }
}
