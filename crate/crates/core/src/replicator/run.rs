//! Path simulation of the optimal pair `(û, μ̂)` and ensemble statistics.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::plan::{bilinear, mul_add, ScalarStep};
use super::{ReplicatorError, Scheme, StepPlan};
use crate::kernels::{PathState, Payoff};
use crate::parallel::map_chunks;
use crate::sde::{PathEnsemble, TimeGrid};
use crate::stats::{Estimate, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Number of leading paths whose full trajectories are kept.
    pub retain: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { retain: 32 }
    }
}

/// Node values of one path, flattened node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub n: usize,
    /// `μ̂(t_0..t_N)`; the last entry is the multiplier paired with `x(T)`.
    pub mu: Vec<f64>,
    /// `û(t_0..t_{N-1})`
    pub u: Vec<f64>,
    /// `x(t_0..t_N)`
    pub x: Vec<f64>,
}

impl PathTrace {
    pub fn new(steps: usize, n: usize) -> Self {
        PathTrace { n, mu: vec![0.0; (steps + 1) * n], u: vec![0.0; steps * n], x: vec![0.0; (steps + 1) * n] }
    }

    pub fn mu_at(&self, i: usize) -> &[f64] {
        &self.mu[i * self.n..(i + 1) * self.n]
    }
    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.n..(i + 1) * self.n]
    }
    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRecord {
    pub cost: f64,
    /// `|x(T) - f|`
    pub residual: f64,
    /// `μ̂(T)ᵀ (f - x(T))`
    pub constraint: f64,
    /// `∫ g |û|² dt`
    pub g_cost: f64,
    /// `∫ |û| dt`
    pub l1: f64,
    /// Largest entry of `bᵀψ(t_i) - Γ(t_i) û(t_i)` over the nodes.
    pub stationarity: f64,
}

/// Runs one path. `dw` holds the increments step-major and `trace` is
/// overwritten.
pub fn simulate_path(
    plan: &StepPlan,
    payoff: &Payoff,
    mu_bar: &DVector<f64>,
    state: &PathState<'_>,
    trace: &mut PathTrace,
) -> Result<PathRecord, ReplicatorError> {
    let n = plan.n();
    let d = payoff.noise_dim();
    let n_steps = plan.grid().steps();
    let mut k = DMatrix::zeros(n, d);
    let deterministic = payoff.is_deterministic();
    trace.mu[..n].copy_from_slice(mu_bar.as_slice());
    trace.x[..n].copy_from_slice(plan.initial_state().as_slice());
    let mut record = PathRecord { cost: 0.0, residual: 0.0, constraint: 0.0, g_cost: 0.0, l1: 0.0, stationarity: 0.0 };
    if let (Some(steps), 1) = (plan.scalar_steps(), d) {
        scalar_loop(steps, payoff, state, trace, &mut k, deterministic, &mut record)?;
    } else {
        vector_loop(plan, payoff, state, trace, &mut k, deterministic, &mut record)?;
    }
    let f = payoff.terminal(state)?;
    let x_t = &trace.x[n_steps * n..];
    let mu_t = &trace.mu[n_steps * n..];
    let mut sq = 0.0;
    for r in 0..n {
        let gap = f[r] - x_t[r];
        sq += gap * gap;
        record.constraint += mu_t[r] * gap;
    }
    record.residual = sq.sqrt();
    if !(record.cost.is_finite() && record.residual.is_finite()) {
        return Err(ReplicatorError::Math(crate::mathcore::MathError::NonFinite("path simulation")));
    }
    Ok(record)
}

fn vector_loop(
    plan: &StepPlan,
    payoff: &Payoff,
    state: &PathState<'_>,
    trace: &mut PathTrace,
    k: &mut DMatrix<f64>,
    deterministic: bool,
    record: &mut PathRecord,
) -> Result<(), ReplicatorError> {
    let n = plan.n();
    let d = payoff.noise_dim();
    let n_steps = plan.grid().steps();
    let mut kdw = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for i in 0..n_steps {
        let step = plan.step(i);
        let (head, tail) = trace.mu.split_at_mut((i + 1) * n);
        let mu = &head[i * n..];
        let u = &mut trace.u[i * n..(i + 1) * n];
        u.fill(0.0);
        mul_add(&step.gain, mu, u);
        // stationarity bᵀψ - Γû
        scratch.fill(0.0);
        mul_add(&step.b_adjoint, mu, &mut scratch);
        for (r, s) in scratch.iter().enumerate() {
            let gu: f64 = (0..n).map(|c| step.gamma[(r, c)] * u[c]).sum();
            record.stationarity = record.stationarity.max((s - gu).abs());
        }
        let (xh, xt) = trace.x.split_at_mut((i + 1) * n);
        let x_next = &mut xt[..n];
        x_next.fill(0.0);
        mul_add(&step.prop, &xh[i * n..], x_next);
        mul_add(&step.drive, mu, x_next);

        record.cost += bilinear(mu, &step.cost, mu);
        scratch.fill(0.0);
        mul_add(&step.l1_map, mu, &mut scratch);
        let g_norm2: f64 = scratch.iter().map(|v| v * v).sum();
        record.g_cost += g_norm2 * step.g_inv_weight;
        record.l1 += g_norm2.sqrt() * step.g_inv_weight;

        let mu_next = &mut tail[..n];
        mu_next.copy_from_slice(mu);
        if let (Some(factor), false) = (&step.kernel_factor, deterministic) {
            payoff.kernel_into(state, i, k)?;
            kdw.fill(0.0);
            mul_add(k, &state.dw[i * d..(i + 1) * d], &mut kdw);
            mul_add(factor, &kdw, mu_next);
        }
    }
    Ok(())
}

fn scalar_loop(
    steps: &[ScalarStep],
    payoff: &Payoff,
    state: &PathState<'_>,
    trace: &mut PathTrace,
    k: &mut DMatrix<f64>,
    deterministic: bool,
    record: &mut PathRecord,
) -> Result<(), ReplicatorError> {
    let mut x = trace.x[0];
    let mut mu = trace.mu[0];
    for (i, s) in steps.iter().enumerate() {
        let u = s.gain * mu;
        trace.u[i] = u;
        record.stationarity = record.stationarity.max((s.b_adjoint * mu - s.gamma * u).abs());
        x = s.prop * x + s.drive * mu;
        trace.x[i + 1] = x;
        record.cost += mu * s.cost * mu;
        let g = s.l1_map * mu;
        record.g_cost += g * g * s.g_inv_weight;
        record.l1 += g.abs() * s.g_inv_weight;
        if let (Some(factor), false) = (s.kernel_factor, deterministic) {
            payoff.kernel_into(state, i, k)?;
            mu += factor * (k[(0, 0)] * state.dw[i]);
        }
        trace.mu[i + 1] = mu;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ReplicationRun {
    pub scheme: Scheme,
    pub grid: TimeGrid,
    pub n: usize,
    pub seed: u64,
    pub mu_bar: DVector<f64>,
    pub records: Vec<PathRecord>,
    /// Per-node sums of `μ̂` components, `(N + 1) * n` slots.
    pub mu_nodes: Moments,
    /// `(path id, trace)` for the retained paths.
    pub trajectories: Vec<(usize, PathTrace)>,
    /// `x(T)` of every path, `n` entries each.
    pub terminal: Vec<f64>,
}

/// Simulates every path of `ensemble` and folds `visit` over the results
/// into `slots` running sums, in path order.
pub(crate) fn fold_paths<F>(
    plan: &StepPlan,
    payoff: &Payoff,
    ensemble: &PathEnsemble,
    slots: usize,
    visit: F,
) -> Result<Moments, ReplicatorError>
where
    F: Fn(&PathState<'_>, &PathTrace, &PathRecord, &mut Moments) + Sync,
{
    check_inputs(plan, payoff, ensemble)?;
    let mu_bar = plan.dual_init(&payoff.mean())?;
    let grid = plan.grid();
    let (n, n_steps, d) = (plan.n(), grid.steps(), ensemble.dim());
    let parts = map_chunks(ensemble.paths(), |range| {
        let mut acc = Moments::new(slots);
        let mut trace = PathTrace::new(n_steps, n);
        let mut dw = vec![0.0; n_steps * d];
        for p in range {
            ensemble.fill_increments(p, &mut dw);
            let state = PathState::new(payoff, grid, &dw);
            let record = simulate_path(plan, payoff, &mu_bar, &state, &mut trace)?;
            acc.count += 1;
            visit(&state, &trace, &record, &mut acc);
        }
        Ok::<_, ReplicatorError>(acc)
    });
    let mut total = Moments::new(slots);
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

/// Runs every path of `ensemble`. Results do not depend on the size of the
/// worker pool.
pub fn run_ensemble(
    plan: &StepPlan,
    payoff: &Payoff,
    ensemble: &PathEnsemble,
    options: RunOptions,
) -> Result<ReplicationRun, ReplicatorError> {
    check_inputs(plan, payoff, ensemble)?;
    let mu_bar = plan.dual_init(&payoff.mean())?;
    let grid = plan.grid();
    let (n, n_steps, d) = (plan.n(), grid.steps(), ensemble.dim());
    let slots = (n_steps + 1) * n;
    let parts = map_chunks(ensemble.paths(), |range| {
        let mut records = Vec::with_capacity(range.len());
        let mut terminal = Vec::with_capacity(range.len() * n);
        let mut moments = Moments::new(slots);
        let mut kept = Vec::new();
        let mut trace = PathTrace::new(n_steps, n);
        let mut dw = vec![0.0; n_steps * d];
        for p in range {
            ensemble.fill_increments(p, &mut dw);
            let state = PathState::new(payoff, grid, &dw);
            records.push(simulate_path(plan, payoff, &mu_bar, &state, &mut trace)?);
            terminal.extend_from_slice(trace.x_at(n_steps));
            moments.count += 1;
            for (j, &v) in trace.mu.iter().enumerate() {
                moments.push(j, v);
            }
            if p < options.retain {
                kept.push((p, trace.clone()));
            }
        }
        Ok::<_, ReplicatorError>((records, terminal, moments, kept))
    });
    let mut records = Vec::with_capacity(ensemble.paths());
    let mut terminal = Vec::with_capacity(ensemble.paths() * n);
    let mut mu_nodes = Moments::new(slots);
    let mut trajectories = Vec::new();
    for part in parts {
        let (r, x, m, k) = part?;
        records.extend(r);
        terminal.extend(x);
        mu_nodes.merge(&m);
        trajectories.extend(k);
    }
    Ok(ReplicationRun {
        scheme: plan.scheme(),
        grid: grid.clone(),
        n,
        seed: ensemble.seed(),
        mu_bar,
        records,
        mu_nodes,
        trajectories,
        terminal,
    })
}

pub(crate) fn check_inputs(plan: &StepPlan, payoff: &Payoff, ensemble: &PathEnsemble) -> Result<(), ReplicatorError> {
    if payoff.dim() != plan.n() {
        return Err(ReplicatorError::Mismatch(format!(
            "target has dimension {}, state has {}",
            payoff.dim(),
            plan.n()
        )));
    }
    if payoff.noise_dim() != ensemble.dim() {
        return Err(ReplicatorError::Mismatch(format!(
            "target uses {} noise components, ensemble has {}",
            payoff.noise_dim(),
            ensemble.dim()
        )));
    }
    if ensemble.grid() != plan.grid() {
        return Err(ReplicatorError::Mismatch("ensemble and plan use different grids".into()));
    }
    Ok(())
}

impl ReplicationRun {
    pub fn paths(&self) -> usize {
        self.records.len()
    }

    fn estimate(&self, f: impl Fn(&PathRecord) -> f64) -> Estimate {
        let xs: Vec<f64> = self.records.iter().map(f).collect();
        Estimate::from_samples(&xs)
    }

    pub fn cost(&self) -> Estimate {
        self.estimate(|r| r.cost)
    }

    pub fn residual_rmse(&self) -> f64 {
        let ss: f64 = self.records.iter().map(|r| r.residual * r.residual).sum();
        (ss / self.paths() as f64).sqrt()
    }

    /// `E μ̂(T)ᵀ (f - x(T))`
    pub fn constraint(&self) -> Estimate {
        self.estimate(|r| r.constraint)
    }

    /// `L(û, μ̂) = ½ E ∫ ûᵀΓû dt + E μ̂(T)ᵀ (f - x(T))`
    pub fn lagrangian(&self) -> Estimate {
        self.estimate(|r| 0.5 * r.cost + r.constraint)
    }

    pub fn terminal_at(&self, path: usize) -> &[f64] {
        &self.terminal[path * self.n..(path + 1) * self.n]
    }

    pub fn stationarity(&self) -> f64 {
        self.records.iter().map(|r| r.stationarity).fold(0.0, f64::max)
    }

    /// Mean and standard error of component `k` of `μ̂(t_i)`.
    pub fn mu_node(&self, i: usize, k: usize) -> Estimate {
        let j = i * self.n + k;
        Estimate { mean: self.mu_nodes.mean(j), se: self.mu_nodes.se(j) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::PayoffFamily;
    use crate::replicator::{RiccatiWeights, SystemSpec};
    use crate::weights::PenaltyWeight;
    use approx::assert_relative_eq;

    fn setup(steps: usize, scheme: Scheme) -> StepPlan {
        let sys = SystemSpec::scalar(0.0, 0.0, 1.0).unwrap();
        let w = PenaltyWeight::pure_power(0.75, 1.0, 1).unwrap();
        let grid = TimeGrid::graded(steps, 1.0, 4.0).unwrap();
        StepPlan::new(&RiccatiWeights::build(&sys, &w, &grid).unwrap(), scheme).unwrap()
    }

    fn deterministic(v: f64) -> Payoff {
        Payoff::new(PayoffFamily::Deterministic { value: DVector::from_element(1, v) }, 1.0, 1).unwrap()
    }

    fn wiener() -> Payoff {
        Payoff::new(
            PayoffFamily::LinearWiener { offset: DVector::zeros(1), loading: DMatrix::from_element(1, 1, 1.0) },
            1.0,
            1,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_target_is_hit_exactly() {
        let plan = setup(256, Scheme::Exact);
        let ens = PathEnsemble::new(plan.grid().clone(), 4, 1, 3).unwrap();
        let run = run_ensemble(&plan, &deterministic(1.0), &ens, RunOptions::default()).unwrap();
        assert_relative_eq!(run.mu_bar[0], 0.25, max_relative = 1e-12);
        let tr = &run.trajectories[0].1;
        assert!(tr.mu.iter().all(|&m| m == run.mu_bar[0]));
        assert!((tr.x_at(256)[0] - 1.0).abs() < 1e-12);
        assert_relative_eq!(run.cost().mean, 0.25, max_relative = 1e-12);
        assert_relative_eq!(run.records[0].l1, 1.0, max_relative = 1e-12);
        assert!(run.stationarity() <= 1e-10);
        assert!(run.constraint().mean.abs() < 1e-12);
    }

    #[test]
    fn zero_target_gives_zero_control() {
        let plan = setup(64, Scheme::LeftPoint);
        let ens = PathEnsemble::new(plan.grid().clone(), 3, 1, 3).unwrap();
        let run = run_ensemble(&plan, &deterministic(0.0), &ens, RunOptions::default()).unwrap();
        assert_eq!(run.cost().mean, 0.0);
        assert!(run.trajectories[0].1.u.iter().all(|&u| u == 0.0));
        assert_eq!(run.residual_rmse(), 0.0);
    }

    #[test]
    fn wiener_residual_is_last_increment() {
        let plan = setup(64, Scheme::Exact);
        let ens = PathEnsemble::new(plan.grid().clone(), 50, 1, 9).unwrap();
        let run = run_ensemble(&plan, &wiener(), &ens, RunOptions { retain: 50 }).unwrap();
        for (p, tr) in &run.trajectories {
            let dw = ens.increments(*p);
            let f: f64 = dw.iter().sum();
            assert!((tr.x_at(64)[0] - f + dw[63]).abs() < 1e-12);
        }
    }

    #[test]
    fn multiplier_variance_matches_isometry() {
        let plan = setup(64, Scheme::Exact);
        let ens = PathEnsemble::new(plan.grid().clone(), 20_000, 1, 5).unwrap();
        let run = run_ensemble(&plan, &wiener(), &ens, RunOptions { retain: 0 }).unwrap();
        let grid = plan.grid();
        for i in [8, 32, 60] {
            // Σ_{j<i} Δt_j R(t_{j+1})⁻²
            let var: f64 = (0..i).map(|j| grid.dt(j) / (16.0 * (1.0 - grid.t(j + 1)).sqrt())).sum();
            let e = run.mu_node(i, 0);
            assert!(e.within(0.0, 4.0, 0.0), "node {i}: {e:?}");
            let m2 = run.mu_nodes.sum_sq[i] / run.paths() as f64;
            assert!((m2 - var).abs() < 0.05 * var, "node {i}: {m2} vs {var}");
        }
    }

    #[test]
    fn determinism_and_mismatch() {
        let plan = setup(32, Scheme::Exact);
        let ens = PathEnsemble::new(plan.grid().clone(), 600, 1, 1).unwrap();
        let a = run_ensemble(&plan, &wiener(), &ens, RunOptions::default()).unwrap();
        let b = run_ensemble(&plan, &wiener(), &ens, RunOptions::default()).unwrap();
        assert_eq!(a.records, b.records);
        let other = PathEnsemble::new(TimeGrid::uniform(32, 1.0).unwrap(), 10, 1, 1).unwrap();
        assert!(run_ensemble(&plan, &wiener(), &other, RunOptions::default()).is_err());
    }
}
