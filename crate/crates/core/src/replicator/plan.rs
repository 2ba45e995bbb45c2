//! Per-step linear maps turning the multiplier `μ̂(t_i)` into control, state
//! update and cost.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ReplicatorError, RiccatiWeights};
use crate::mathcore::{mat_exp, mat_exp_integral, solve_spd};
use crate::sde::TimeGrid;

/// How the control is carried across a step.
///
/// `Exact` holds `μ̂` at its left-node value and integrates the resulting
/// control exactly, so the state moves by `e^{-A(T-t_{i+1})} (R(t_i) - R(t_{i+1})) μ̂_i`
/// and the step cost is `μ̂_iᵀ (R(t_i) - R(t_{i+1})) μ̂_i`. The multiplier
/// increment uses `R(t_{i+1})⁻¹`, the inverse of what remains to be
/// steered, and the last step carries no increment.
///
/// `LeftPoint` freezes `û(t_i)` over the step, integrates the state with
/// `∫₀^{Δt} e^{As} ds`, sums `ûᵀ Γ(t_i) û Δt_i` and uses `R(t_i)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Exact,
    LeftPoint,
}

#[derive(Debug, Clone)]
pub struct Step {
    /// `e^{AΔt_i}`
    pub prop: DMatrix<f64>,
    /// `x_{i+1} = prop x_i + drive μ̂_i`
    pub drive: DMatrix<f64>,
    /// Contribution of `μ̂_i` to `x(T)`.
    pub terminal: DMatrix<f64>,
    /// Step cost `μ̂_iᵀ cost μ̂_i`.
    pub cost: DMatrix<f64>,
    /// `û(t_i) = gain μ̂_i`
    pub gain: DMatrix<f64>,
    /// `ψ(t_i) = e^{Aᵀ(T-t_i)} μ̂_i`
    pub adjoint: DMatrix<f64>,
    /// `bᵀ e^{Aᵀ(T-t_i)}`, so that `bᵀψ = b_adjoint μ̂_i`.
    pub b_adjoint: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// `|l1_map μ̂_i|` is `g |û|` at the left node.
    pub l1_map: DMatrix<f64>,
    /// `∫ g⁻¹` over the step as the scheme sees it.
    pub g_inv_weight: f64,
    /// Factor in `μ̂_{i+1} = μ̂_i + factor k_f(t_i) Δw_i`.
    pub kernel_factor: Option<DMatrix<f64>>,
}

/// [`Step`] for a one-dimensional state.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScalarStep {
    pub prop: f64,
    pub drive: f64,
    pub cost: f64,
    pub gain: f64,
    pub b_adjoint: f64,
    pub gamma: f64,
    pub l1_map: f64,
    pub g_inv_weight: f64,
    pub kernel_factor: Option<f64>,
}

impl From<&Step> for ScalarStep {
    fn from(s: &Step) -> Self {
        ScalarStep {
            prop: s.prop[(0, 0)],
            drive: s.drive[(0, 0)],
            cost: s.cost[(0, 0)],
            gain: s.gain[(0, 0)],
            b_adjoint: s.b_adjoint[(0, 0)],
            gamma: s.gamma[(0, 0)],
            l1_map: s.l1_map[(0, 0)],
            g_inv_weight: s.g_inv_weight,
            kernel_factor: s.kernel_factor.as_ref().map(|k| k[(0, 0)]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepPlan {
    scheme: Scheme,
    grid: TimeGrid,
    n: usize,
    steps: Vec<Step>,
    scalar: Option<Vec<ScalarStep>>,
    r0: DMatrix<f64>,
    free_terminal: DVector<f64>,
    x0: DVector<f64>,
}

impl StepPlan {
    pub fn new(riccati: &RiccatiWeights, scheme: Scheme) -> Result<Self, ReplicatorError> {
        Self::with_simulation_weight(riccati, riccati, scheme)
    }

    /// Multipliers from `dual`, controls and costs from `sim`. The two
    /// differ only when deliberately mismatched to exercise the checks.
    pub fn with_simulation_weight(
        dual: &RiccatiWeights,
        sim: &RiccatiWeights,
        scheme: Scheme,
    ) -> Result<Self, ReplicatorError> {
        if dual.grid() != sim.grid() || dual.system() != sim.system() {
            return Err(ReplicatorError::Mismatch("dual and simulation caches use different grids or systems".into()));
        }
        let grid = dual.grid().clone();
        let system = dual.system();
        let (a, b) = (system.a(), system.b());
        let n = system.n();
        let horizon = grid.horizon();
        let weight = sim.weight();
        let g_inv = weight.g_inverse();
        let n_steps = grid.steps();
        let eye = DMatrix::identity(n, n);
        let inverse = |m: &DMatrix<f64>| solve_spd(m, &eye);
        let mut steps = Vec::with_capacity(n_steps);
        for i in 0..n_steps {
            let (t, dt) = (grid.t(i), grid.dt(i));
            let to_go = horizon - t;
            let to_go_next = if i + 1 == n_steps { 0.0 } else { horizon - grid.t(i + 1) };
            let e_left = mat_exp(a, to_go)?;
            let e_next = mat_exp(a, to_go_next)?;
            let prop = mat_exp(a, dt)?;
            let gamma = weight.gamma(t)?;
            let gamma_inv = weight.gamma_inv(t)?;
            let gain = &gamma_inv * b.transpose() * e_left.transpose();
            let l1_map = g_inv * b.transpose() * e_left.transpose();
            let adjoint = e_left.transpose();
            let b_adjoint = b.transpose() * &adjoint;
            let step = match scheme {
                Scheme::Exact => {
                    let w = sim.step_integral(i).clone();
                    let back = mat_exp(a, -to_go_next)?;
                    Step {
                        prop,
                        drive: back * &w,
                        terminal: w.clone(),
                        cost: w,
                        gain,
                        adjoint,
                        b_adjoint,
                        gamma,
                        l1_map,
                        g_inv_weight: weight.integrated_g_inv(t, grid.t(i + 1)),
                        kernel_factor: if i + 1 < n_steps { Some(inverse(dual.r_node(i + 1))?) } else { None },
                    }
                }
                Scheme::LeftPoint => {
                    let drive = mat_exp_integral(a, dt)? * b * &gain;
                    let terminal = &e_next * &drive;
                    let cost = gain.transpose() * &gamma * &gain * dt;
                    Step {
                        prop,
                        drive,
                        terminal,
                        cost: crate::mathcore::symmetrize(&cost),
                        gain,
                        adjoint,
                        b_adjoint,
                        gamma,
                        l1_map,
                        g_inv_weight: weight.g_inv(t)? * dt,
                        kernel_factor: Some(inverse(dual.r_node(i))?),
                    }
                }
            };
            steps.push(step);
        }
        let scalar = (n == 1).then(|| steps.iter().map(ScalarStep::from).collect());
        Ok(StepPlan {
            scheme,
            grid,
            n,
            steps,
            scalar,
            r0: dual.r_node(0).clone(),
            free_terminal: system.free_terminal()?,
            x0: system.x0().clone(),
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }
    /// The steps as plain numbers when the state is scalar.
    pub(crate) fn scalar_steps(&self) -> Option<&[ScalarStep]> {
        self.scalar.as_deref()
    }
    pub fn step(&self, i: usize) -> &Step {
        &self.steps[i]
    }

    /// `μ̄ = R(0)⁻¹ (E f - e^{AT} a)`.
    pub fn dual_init(&self, target_mean: &DVector<f64>) -> Result<DVector<f64>, ReplicatorError> {
        if target_mean.len() != self.n {
            return Err(ReplicatorError::Mismatch(format!(
                "target has dimension {}, state has {}",
                target_mean.len(),
                self.n
            )));
        }
        let gap = DMatrix::from_column_slice(self.n, 1, (target_mean - &self.free_terminal).as_slice());
        let mu = solve_spd(&self.r0, &gap)?;
        Ok(DVector::from_column_slice(mu.as_slice()))
    }

    pub fn r0(&self) -> &DMatrix<f64> {
        &self.r0
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn free_terminal(&self) -> &DVector<f64> {
        &self.free_terminal
    }

    /// Control and adjoint at node `i` for a given multiplier value.
    pub fn control_at(&self, i: usize, mu: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), ReplicatorError> {
        let step = self.steps.get(i).ok_or_else(|| {
            ReplicatorError::Mismatch(format!("control is defined at nodes 0..{}, got {i}", self.steps.len()))
        })?;
        Ok((&step.gain * mu, &step.adjoint * mu))
    }
}

/// `out += m x` for a column-major `m`.
pub(crate) fn mul_add(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    for (c, &xc) in x.iter().enumerate() {
        if xc == 0.0 {
            continue;
        }
        let col = &m.as_slice()[c * rows..(c + 1) * rows];
        for (o, &v) in out.iter_mut().zip(col) {
            *o += v * xc;
        }
    }
}

/// `xᵀ m y`
pub(crate) fn bilinear(x: &[f64], m: &DMatrix<f64>, y: &[f64]) -> f64 {
    let rows = m.nrows();
    let mut total = 0.0;
    for (c, &yc) in y.iter().enumerate() {
        let col = &m.as_slice()[c * rows..(c + 1) * rows];
        let dot: f64 = col.iter().zip(x).map(|(a, b)| a * b).sum();
        total += dot * yc;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replicator::SystemSpec;
    use crate::weights::PenaltyWeight;
    use approx::assert_relative_eq;

    fn plan(scheme: Scheme, rate: f64) -> StepPlan {
        let sys = SystemSpec::scalar(rate, 0.0, 1.0).unwrap();
        let w = PenaltyWeight::pure_power(0.75, 1.0, 1).unwrap();
        let grid = TimeGrid::graded(16, 1.0, 4.0).unwrap();
        StepPlan::new(&RiccatiWeights::build(&sys, &w, &grid).unwrap(), scheme).unwrap()
    }

    #[test]
    fn control_examples() {
        let p = plan(Scheme::Exact, 0.0);
        let mu = DVector::from_element(1, 0.25);
        let (u, psi) = p.control_at(0, &mu).unwrap();
        assert_relative_eq!(u[0], 0.25, epsilon = 1e-15);
        assert_eq!(psi[0], 0.25);
        let (u, _) = p.control_at(5, &DVector::zeros(1)).unwrap();
        assert_eq!(u[0], 0.0);
        assert!(p.control_at(16, &mu).is_err());
        let t = p.grid().t(9);
        let (u, _) = p.control_at(9, &mu).unwrap();
        assert_relative_eq!(u[0], 0.25 * (1.0 - t).powf(-0.75), max_relative = 1e-14);
    }

    #[test]
    fn exact_terminal_maps_sum_to_r0() {
        for rate in [0.0, 0.05] {
            let p = plan(Scheme::Exact, rate);
            let total: f64 = p.steps().iter().map(|s| s.terminal[(0, 0)]).sum();
            let direct: f64 = p.steps().iter().map(|s| s.cost[(0, 0)]).sum();
            assert_relative_eq!(total, direct, max_relative = 1e-14);
            if rate == 0.0 {
                assert_relative_eq!(total, 4.0, max_relative = 1e-12);
            }
            assert!(p.step(15).kernel_factor.is_none());
        }
    }

    #[test]
    fn left_point_stationarity() {
        let p = plan(Scheme::LeftPoint, 0.05);
        let mu = DVector::from_element(1, 0.7);
        for (i, s) in p.steps().iter().enumerate() {
            let (u, psi) = p.control_at(i, &mu).unwrap();
            assert_relative_eq!(&s.b_adjoint * &mu, psi.clone(), epsilon = 1e-15);
            let grad: DVector<f64> = psi - &s.gamma * u;
            assert!(grad.amax() <= 1e-10);
        }
    }

    #[test]
    fn dual_init_examples() {
        let p = plan(Scheme::Exact, 0.0);
        let mu = p.dual_init(&DVector::from_element(1, 1.0)).unwrap();
        assert_relative_eq!(mu[0], 0.25, max_relative = 1e-12);
        assert_eq!(p.dual_init(&DVector::zeros(1)).unwrap()[0], 0.0);
        assert!(p.dual_init(&DVector::zeros(2)).is_err());

        let sys = crate::replicator::SystemSpec::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
            1,
        )
        .unwrap();
        let w = PenaltyWeight::pure_power(0.75, 1.0, 2).unwrap();
        let grid = TimeGrid::graded(8, 1.0, 4.0).unwrap();
        let p = StepPlan::new(&RiccatiWeights::build(&sys, &w, &grid).unwrap(), Scheme::Exact).unwrap();
        let mu = p.dual_init(&DVector::from_column_slice(&[1.0, 2.0])).unwrap();
        assert_relative_eq!(mu, DVector::from_column_slice(&[0.25, 0.5]), max_relative = 1e-12);
    }

    #[test]
    fn helpers() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut out = [1.0, 1.0];
        mul_add(&m, &[1.0, -1.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        assert_eq!(bilinear(&[1.0, 0.0], &m, &[0.0, 1.0]), 2.0);
    }
}
