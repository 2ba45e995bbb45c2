//! Monte Carlo diagnostics for kernels: the square-integrability check near
//! the horizon and the regression oracle `k_f(t_i) ≈ E[(f - E f) Δw_i] / Δt_i`.

use nalgebra::DMatrix;
use serde::Serialize;

use super::{KernelError, PathState, Payoff};
use crate::parallel::map_chunks;
use crate::sde::PathEnsemble;
use crate::stats::Moments;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NodeMoment {
    pub t: f64,
    /// Monte Carlo estimate of `E|k_f(t)|²` (Frobenius norm).
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KfReport {
    pub tau: f64,
    pub nodes: Vec<NodeMoment>,
    pub sup_estimate: f64,
    pub sup_se: f64,
    pub sup_time: f64,
    /// Slope `β` of `log E|k|² ≈ c + β log(T - t)` over the nodes in `[τ, T)`.
    pub growth_exponent: f64,
    pub diverging: bool,
}

const DIVERGENCE_SLOPE: f64 = -0.1;

/// Estimates `sup_{t ∈ [τ, T)} E|k_f(t)|²` over the grid nodes of `ensemble`.
pub fn validate_kf(payoff: &Payoff, ensemble: &PathEnsemble, tau: f64) -> Result<KfReport, KernelError> {
    let horizon = payoff.horizon();
    if !(tau > 0.0 && tau < horizon) {
        return Err(KernelError::Invalid(format!("tau must lie in (0, {horizon}), got {tau}")));
    }
    check_ensemble(payoff, ensemble)?;
    let grid = ensemble.grid();
    let idx: Vec<usize> = (0..grid.steps()).filter(|&i| grid.t(i) >= tau).collect();
    if idx.is_empty() {
        return Err(KernelError::Invalid(format!("no grid node in [{tau}, {horizon})")));
    }
    let parts = map_chunks(ensemble.paths(), |range| -> Result<Moments, KernelError> {
        let mut acc = Moments::new(idx.len());
        let mut dw = vec![0.0; grid.steps() * ensemble.dim()];
        let mut k = DMatrix::zeros(payoff.dim(), payoff.noise_dim());
        for p in range {
            ensemble.fill_increments(p, &mut dw);
            let state = PathState::new(payoff, grid, &dw);
            acc.count += 1;
            for (j, &i) in idx.iter().enumerate() {
                payoff.kernel_into(&state, i, &mut k)?;
                acc.push(j, k.norm_squared());
            }
        }
        Ok(acc)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    let total = Moments::merge_all(idx.len(), &parts);

    let nodes: Vec<NodeMoment> = idx
        .iter()
        .enumerate()
        .map(|(j, &i)| NodeMoment { t: grid.t(i), mean: total.mean(j), se: total.se(j) })
        .collect();
    let best = nodes.iter().max_by(|a, b| a.mean.total_cmp(&b.mean)).expect("at least one node");
    let growth_exponent = fit_growth(&nodes, horizon);
    Ok(KfReport {
        tau,
        sup_estimate: best.mean,
        sup_se: best.se,
        sup_time: best.t,
        growth_exponent,
        diverging: growth_exponent < DIVERGENCE_SLOPE,
        nodes,
    })
}

/// Least-squares slope over the nodes in the half of the `log(T - t)` range
/// nearest the horizon, where a divergent kernel shows its growth.
fn fit_growth(nodes: &[NodeMoment], horizon: f64) -> f64 {
    let all: Vec<(f64, f64)> =
        nodes.iter().filter(|n| n.mean > 0.0).map(|n| ((horizon - n.t).ln(), n.mean.ln())).collect();
    let lo = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mid = 0.5 * (lo + hi);
    let pts: Vec<(f64, f64)> = all.into_iter().filter(|p| p.0 <= mid).collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ProbeResult {
    pub node: usize,
    pub t: f64,
    /// `(row, column)` of the kernel entry.
    pub entry: (usize, usize),
    pub regression: f64,
    pub kernel_mean: f64,
    /// Standard error of the per-path difference between the two estimators.
    pub se: f64,
    pub z: f64,
}

/// Regression oracle at the given step indices: compares
/// `E[(f - E f) Δw_i] / Δt_i` with `E k_f(t_i)` for every kernel entry.
/// The two differ by `O(Δt_i)` through the drift of `E k_f` over the step.
pub fn regression_probe(
    payoff: &Payoff,
    ensemble: &PathEnsemble,
    probes: &[usize],
) -> Result<Vec<ProbeResult>, KernelError> {
    check_ensemble(payoff, ensemble)?;
    let grid = ensemble.grid();
    let (n, d) = (payoff.dim(), payoff.noise_dim());
    if let Some(&bad) = probes.iter().find(|&&i| i >= grid.steps()) {
        return Err(KernelError::TimeOutOfRange { t: grid.t(bad.min(grid.steps())), horizon: payoff.horizon() });
    }
    let mean_f = payoff.mean();
    let width = n * d;
    let parts = map_chunks(ensemble.paths(), |range| -> Result<(Moments, Moments), KernelError> {
        let mut diff = Moments::new(probes.len() * width);
        let mut reg = Moments::new(probes.len() * width);
        let mut dw = vec![0.0; grid.steps() * d];
        let mut k = DMatrix::zeros(n, d);
        for p in range {
            ensemble.fill_increments(p, &mut dw);
            let state = PathState::new(payoff, grid, &dw);
            let f = payoff.terminal(&state)? - &mean_f;
            diff.count += 1;
            reg.count += 1;
            for (j, &i) in probes.iter().enumerate() {
                payoff.kernel_into(&state, i, &mut k)?;
                let dt = grid.dt(i);
                for r in 0..n {
                    for c in 0..d {
                        let x = f[r] * dw[i * d + c] / dt;
                        let slot = j * width + r * d + c;
                        reg.push(slot, x);
                        diff.push(slot, x - k[(r, c)]);
                    }
                }
            }
        }
        Ok((diff, reg))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut diff = Moments::new(probes.len() * width);
    let mut reg = Moments::new(probes.len() * width);
    for (a, b) in &parts {
        diff.merge(a);
        reg.merge(b);
    }
    let mut out = Vec::with_capacity(probes.len() * width);
    for (j, &i) in probes.iter().enumerate() {
        for r in 0..n {
            for c in 0..d {
                let slot = j * width + r * d + c;
                let regression = reg.mean(slot);
                let delta = diff.mean(slot);
                let se = diff.se(slot);
                let z = if se > 0.0 {
                    delta / se
                } else if delta == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                out.push(ProbeResult {
                    node: i,
                    t: grid.t(i),
                    entry: (r, c),
                    regression,
                    kernel_mean: regression - delta,
                    se,
                    z,
                });
            }
        }
    }
    Ok(out)
}

/// Root mean square of `E f + Σ k_f(t_i) Δw_i - f` over the ensemble.
pub fn representation_rmse(payoff: &Payoff, ensemble: &PathEnsemble) -> Result<f64, KernelError> {
    check_ensemble(payoff, ensemble)?;
    let grid = ensemble.grid();
    let (n, d) = (payoff.dim(), payoff.noise_dim());
    let mean_f = payoff.mean();
    let parts = map_chunks(ensemble.paths(), |range| -> Result<f64, KernelError> {
        let mut sq = 0.0;
        let mut dw = vec![0.0; grid.steps() * d];
        let mut k = DMatrix::zeros(n, d);
        for p in range {
            ensemble.fill_increments(p, &mut dw);
            let state = PathState::new(payoff, grid, &dw);
            let mut rep = mean_f.clone();
            for i in 0..grid.steps() {
                payoff.kernel_into(&state, i, &mut k)?;
                for r in 0..n {
                    for c in 0..d {
                        rep[r] += k[(r, c)] * dw[i * d + c];
                    }
                }
            }
            sq += (rep - payoff.terminal(&state)?).norm_squared();
        }
        Ok(sq)
    });
    let mut total = 0.0;
    for part in parts {
        total += part?;
    }
    Ok((total / ensemble.paths() as f64).sqrt())
}

fn check_ensemble(payoff: &Payoff, ensemble: &PathEnsemble) -> Result<(), KernelError> {
    if ensemble.dim() != payoff.noise_dim() {
        return Err(KernelError::Invalid(format!(
            "ensemble has {} noise components, payoff expects {}",
            ensemble.dim(),
            payoff.noise_dim()
        )));
    }
    let gap = (ensemble.grid().horizon() - payoff.horizon()).abs();
    if gap > 1e-12 * payoff.horizon() {
        return Err(KernelError::Invalid(format!(
            "ensemble horizon {} differs from payoff horizon {}",
            ensemble.grid().horizon(),
            payoff.horizon()
        )));
    }
    Ok(())
}
