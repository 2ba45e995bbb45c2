//! Closed-form optimal cost and the Monte Carlo optimality diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::plan::{bilinear, mul_add};
use super::run::fold_paths;
use super::{ReplicationRun, ReplicatorError, RiccatiWeights, StepPlan};
use crate::kernels::Payoff;
use crate::mathcore::{min_eigenvalue, solve_spd};
use crate::sde::PathEnsemble;
use crate::stats::Estimate;

/// `J* = (E f - e^{AT}a)ᵀ R(0)⁻¹ (E f - e^{AT}a) + ∫₀ᵀ tr(R(t)⁻¹ E[k_f k_fᵀ](t)) dt`.
pub fn min_cost_closed_form(riccati: &RiccatiWeights, payoff: &Payoff) -> Result<f64, ReplicatorError> {
    let system = riccati.system();
    let n = system.n();
    if payoff.dim() != n {
        return Err(ReplicatorError::Mismatch(format!("target has dimension {}, state has {n}", payoff.dim())));
    }
    let gap = payoff.mean() - system.free_terminal()?;
    let gap_m = DMatrix::from_column_slice(n, 1, gap.as_slice());
    let first = (gap_m.transpose() * solve_spd(riccati.r_node(0), &gap_m)?)[(0, 0)];
    if payoff.is_deterministic() {
        return Ok(first);
    }
    let horizon = system.horizon();
    let spec = riccati.quadrature().with_tolerance(1e-9)?;
    let mut cuts: Vec<f64> = vec![0.0];
    cuts.extend(payoff.kernel_breakpoints().iter().rev().map(|t| horizon - t));
    cuts.push(horizon);
    let failure = std::sync::Mutex::new(None);
    let integrand = |tau: f64| {
        let r = riccati.r_to_go(tau).and_then(|r| {
            let m = payoff.kernel_second_moment(horizon - tau);
            Ok(solve_spd(&r, &m)?.trace())
        });
        match r {
            Ok(v) => DMatrix::from_element(1, 1, v),
            Err(e) => {
                failure.lock().expect("unpoisoned").get_or_insert(e);
                DMatrix::from_element(1, 1, f64::NAN)
            }
        }
    };
    let mut second = 0.0;
    for w in cuts.windows(2) {
        match riccati.weight().integrate_to_go(integrand, &spec, w[0], w[1]) {
            Ok(v) => second += v[(0, 0)],
            Err(e) => {
                return Err(failure.lock().expect("unpoisoned").take().unwrap_or(ReplicatorError::Math(e)));
            }
        }
    }
    Ok(first + second)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LoewnerReport {
    /// Smallest eigenvalue of `R(t_i) - R(t_{i+1})` over all steps.
    pub min_eigenvalue: f64,
    pub passes: bool,
}

pub fn loewner_check(riccati: &RiccatiWeights) -> LoewnerReport {
    let min =
        (0..riccati.grid().steps()).map(|i| min_eigenvalue(riccati.step_integral(i))).fold(f64::INFINITY, f64::min);
    LoewnerReport { min_eigenvalue: min, passes: min >= -1e-10 }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MartingaleReport {
    /// Largest `|mean - μ̄| / se` over nodes and components.
    pub worst_z: f64,
    pub worst_node: usize,
    pub passes: bool,
}

/// Node means of `μ̂` against `μ̄`, `k` standard errors.
pub fn martingale_check(run: &ReplicationRun, k: f64) -> MartingaleReport {
    let mut report = MartingaleReport { worst_z: 0.0, worst_node: 0, passes: true };
    for i in 0..=run.grid.steps() {
        for c in 0..run.n {
            let target = run.mu_bar[c];
            let e = run.mu_node(i, c);
            let floor = 1e-12 * target.abs().max(1.0);
            if !e.within(target, k, floor) {
                report.passes = false;
            }
            let dev = (e.mean - target).abs();
            let z = if dev <= floor {
                0.0
            } else if e.se > 0.0 {
                dev / e.se
            } else {
                f64::INFINITY
            };
            if z > report.worst_z {
                report.worst_z = z;
                report.worst_node = i;
            }
        }
    }
    report
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Admissibility {
    /// `E ∫ g |û|² dt`
    pub weighted_energy: Estimate,
    /// `E (∫ |û| dt)²`
    pub l1_squared: Estimate,
}

pub fn admissibility_report(run: &ReplicationRun) -> Admissibility {
    let energy: Vec<f64> = run.records.iter().map(|r| r.g_cost).collect();
    let l1: Vec<f64> = run.records.iter().map(|r| r.l1 * r.l1).collect();
    Admissibility { weighted_energy: Estimate::from_samples(&energy), l1_squared: Estimate::from_samples(&l1) }
}

/// A perturbation of the multiplier path, `v_i = shape_i Z` for `i ≥ start`
/// and zero before. The control moves by `gain_i v_i` on step `i`. `Z` is 1,
/// or `1 + w_k(t_start)` when `factor = Some(k)`, so `v` is adapted.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub start: usize,
    pub shape: Vec<DVector<f64>>,
    pub factor: Option<usize>,
}

impl Perturbation {
    fn scale(&self, w: impl Fn(usize, usize) -> f64) -> f64 {
        match self.factor {
            None => 1.0,
            Some(k) => 1.0 + w(self.start, k),
        }
    }

    /// `Σ_i T_i shape_i`, the effect on `x(T)` per unit `Z`.
    pub fn terminal_shift(&self, plan: &StepPlan) -> DVector<f64> {
        let mut out = vec![0.0; plan.n()];
        for (j, s) in self.shape.iter().enumerate() {
            mul_add(&plan.step(self.start + j).terminal, s.as_slice(), &mut out);
        }
        DVector::from_vec(out)
    }

    /// `Σ_i shape_iᵀ C_i shape_i`
    pub fn quadratic(&self, plan: &StepPlan) -> f64 {
        self.shape
            .iter()
            .enumerate()
            .map(|(j, s)| bilinear(s.as_slice(), &plan.step(self.start + j).cost, s.as_slice()))
            .sum()
    }
}

fn random_shape<R: Rng>(plan: &StepPlan, rng: &mut R, factor: Option<usize>) -> Perturbation {
    let n_steps = plan.grid().steps();
    let start = rng.random_range(0..n_steps - 1);
    let shape = (start..n_steps)
        .map(|_| DVector::from_iterator(plan.n(), (0..plan.n()).map(|_| rng.sample::<f64, _>(StandardNormal))))
        .collect();
    Perturbation { start, shape, factor }
}

fn normalise(mut p: Perturbation, plan: &StepPlan) -> Perturbation {
    let q = p.quadratic(plan);
    if q > 0.0 {
        let s = q.sqrt().recip();
        for v in &mut p.shape {
            *v *= s;
        }
    }
    p
}

/// A random adapted perturbation with `Σ T_i v_i = 0` on every path, so that
/// `x(T)` is unchanged. Normalised to `Σ shapeᵀ C shape = 1`.
pub fn random_zero_replicating<R: Rng>(
    plan: &StepPlan,
    rng: &mut R,
    factor: Option<usize>,
) -> Result<Perturbation, ReplicatorError> {
    let mut p = random_shape(plan, rng, factor);
    p.shape[0].fill(0.0);
    let rest = p.terminal_shift(plan);
    let first = plan.step(p.start).terminal.clone();
    let fix = first
        .lu()
        .solve(&rest)
        .ok_or_else(|| ReplicatorError::Mismatch(format!("terminal map of step {} is singular", p.start)))?;
    p.shape[0] = -fix;
    Ok(normalise(p, plan))
}

/// A random adapted perturbation without the terminal restriction.
pub fn random_adapted<R: Rng>(plan: &StepPlan, rng: &mut R, factor: Option<usize>) -> Perturbation {
    normalise(random_shape(plan, rng, factor), plan)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PerturbationOutcome {
    pub index: usize,
    pub epsilon: f64,
    /// Monte Carlo estimate of the change in the tested functional.
    pub change: Estimate,
    pub passes: bool,
}

const EXACT_FLOOR: f64 = 1e-12;

fn outcomes(
    total: &crate::stats::Moments,
    count: usize,
    eps: &[f64],
    passes: impl Fn(&Estimate) -> bool,
) -> Vec<PerturbationOutcome> {
    let mut out = Vec::with_capacity(count * eps.len());
    for j in 0..count {
        for (e_idx, &epsilon) in eps.iter().enumerate() {
            let slot = j * eps.len() + e_idx;
            let se = if total.count > 1 { total.se(slot) } else { 0.0 };
            let change = Estimate { mean: total.mean(slot), se };
            out.push(PerturbationOutcome { index: j, epsilon, passes: passes(&change), change });
        }
    }
    out
}

/// `cost(û + εv) - cost(û)` per perturbation and `ε`; passes when the mean
/// change is not below zero by more than `k` standard errors.
pub fn perturbation_check(
    plan: &StepPlan,
    payoff: &Payoff,
    ensemble: &PathEnsemble,
    perturbations: &[Perturbation],
    eps: &[f64],
    k: f64,
) -> Result<Vec<PerturbationOutcome>, ReplicatorError> {
    let quads: Vec<f64> = perturbations.iter().map(|p| p.quadratic(plan)).collect();
    let n = plan.n();
    let total = fold_paths(plan, payoff, ensemble, perturbations.len() * eps.len(), |state, trace, _, acc| {
        for (j, p) in perturbations.iter().enumerate() {
            let z = p.scale(|i, c| state.w_at(i, c));
            let cross: f64 = p
                .shape
                .iter()
                .enumerate()
                .map(|(o, s)| {
                    let i = p.start + o;
                    bilinear(&trace.mu[i * n..(i + 1) * n], &plan.step(i).cost, s.as_slice())
                })
                .sum::<f64>()
                * z;
            for (e_idx, &e) in eps.iter().enumerate() {
                acc.push(j * eps.len() + e_idx, 2.0 * e * cross + e * e * z * z * quads[j]);
            }
        }
    })?;
    Ok(outcomes(&total, perturbations.len(), eps, |c| c.mean + k * c.se + EXACT_FLOOR >= 0.0))
}

/// `L(û + εv, μ̂) - L(û, μ̂)` for arbitrary adapted `v`; should not be negative.
pub fn primal_saddle_check(
    plan: &StepPlan,
    payoff: &Payoff,
    ensemble: &PathEnsemble,
    perturbations: &[Perturbation],
    eps: &[f64],
    k: f64,
) -> Result<Vec<PerturbationOutcome>, ReplicatorError> {
    let quads: Vec<f64> = perturbations.iter().map(|p| p.quadratic(plan)).collect();
    let shifts: Vec<DVector<f64>> = perturbations.iter().map(|p| p.terminal_shift(plan)).collect();
    let n = plan.n();
    let n_steps = plan.grid().steps();
    let total = fold_paths(plan, payoff, ensemble, perturbations.len() * eps.len(), |state, trace, _, acc| {
        let mu_t = &trace.mu[n_steps * n..];
        for (j, p) in perturbations.iter().enumerate() {
            let z = p.scale(|i, c| state.w_at(i, c));
            let cross: f64 = p
                .shape
                .iter()
                .enumerate()
                .map(|(o, s)| {
                    let i = p.start + o;
                    bilinear(&trace.mu[i * n..(i + 1) * n], &plan.step(i).cost, s.as_slice())
                })
                .sum::<f64>()
                * z;
            let pull: f64 = mu_t.iter().zip(shifts[j].iter()).map(|(a, b)| a * b).sum::<f64>() * z;
            for (e_idx, &e) in eps.iter().enumerate() {
                let change = e * cross + 0.5 * e * e * z * z * quads[j] - e * pull;
                acc.push(j * eps.len() + e_idx, change);
            }
        }
    })?;
    Ok(outcomes(&total, perturbations.len(), eps, |c| c.mean + k * c.se + EXACT_FLOOR >= 0.0))
}

/// `L(û, μ̂ + εη) - L(û, μ̂)` with `η = direction (1 + w_0(T))`; should
/// not be positive.
pub fn dual_saddle_check(
    plan: &StepPlan,
    payoff: &Payoff,
    ensemble: &PathEnsemble,
    directions: &[DVector<f64>],
    eps: &[f64],
    k: f64,
) -> Result<Vec<PerturbationOutcome>, ReplicatorError> {
    let n = plan.n();
    let n_steps = plan.grid().steps();
    let total = fold_paths(plan, payoff, ensemble, directions.len() * eps.len(), |state, trace, _, acc| {
        let f = payoff.terminal(state).expect("checked by the simulation");
        let x_t = &trace.x[n_steps * n..];
        let z = 1.0 + state.w_at(n_steps, 0);
        for (j, dir) in directions.iter().enumerate() {
            let gap: f64 = (0..n).map(|r| dir[r] * (f[r] - x_t[r])).sum::<f64>() * z;
            for (e_idx, &e) in eps.iter().enumerate() {
                acc.push(j * eps.len() + e_idx, e * gap);
            }
        }
    })?;
    Ok(outcomes(&total, directions.len(), eps, |c| c.mean <= k * c.se + EXACT_FLOOR))
}
