//! Cash accumulation, dividend flows and short-rate curves built on the
//! replicator. Everything is simulated under the pricing measure, where the
//! asset price is a martingale.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{validate_kf, KernelError, PathState, Payoff, PayoffFamily};
use crate::parallel::map_chunks;
use crate::replicator::{
    run_ensemble, simulate_path, PathTrace, ReplicationRun, ReplicatorError, RiccatiWeights, RunOptions, Scheme,
    StepPlan, SystemSpec,
};
use crate::sde::{fmt_f64, Market, PathEnsemble, SdeError, TimeGrid};
use crate::stats::Estimate;
use crate::weights::{PenaltyWeight, WeightError};

pub const DEFAULT_DIVIDEND_PROPORTION: f64 = 0.05;

/// Paths used to check the interval kernels of a bond curve.
const KF_PATHS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinanceError {
    #[error("{0}")]
    Unsupported(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("interval {interval}: target kernel fails the growth check (slope {slope:.3})")]
    KernelGrowth { interval: usize, slope: f64 },
    #[error(transparent)]
    Replicator(#[from] ReplicatorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Grid(#[from] SdeError),
}

/// Deposit plan `u` with `∫₀ᵀ e^{r(T-t)} u(t) dt = f`, optimal for
/// `E ∫ Γ u² dt`.
#[derive(Debug, Clone)]
pub struct CashPlan {
    rate: f64,
    payoff: Payoff,
    weight: PenaltyWeight,
    system: SystemSpec,
}

/// Builds a cash plan for a market-linked target.
pub fn cash_plan(payoff: Payoff, weight: &PenaltyWeight, rate: f64) -> Result<CashPlan, FinanceError> {
    match payoff.family() {
        PayoffFamily::GbmTerminal { .. } | PayoffFamily::EuropeanCall { .. } | PayoffFamily::AsianAverage { .. } => {}
        other => {
            return Err(FinanceError::Unsupported(format!(
                "cash plans need a market-linked target, got {}",
                family_name(other)
            )))
        }
    }
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(FinanceError::Invalid(format!("rate must be non-negative, got {rate}")));
    }
    if payoff.noise_dim() != 1 {
        return Err(FinanceError::Invalid("cash plans use a single noise source".into()));
    }
    if weight.dim() != 1 || (weight.horizon() - payoff.horizon()).abs() > 1e-12 * payoff.horizon() {
        return Err(FinanceError::Invalid("weight must be scalar with the target's horizon".into()));
    }
    let system = SystemSpec::scalar(rate, 0.0, payoff.horizon())?;
    Ok(CashPlan { rate, payoff, weight: weight.clone(), system })
}

/// Dividend flow paying the proportion `c` of the terminal equity.
pub fn dividend_plan(market: Market, proportion: f64, weight: &PenaltyWeight) -> Result<CashPlan, FinanceError> {
    if !(proportion >= 0.0 && proportion.is_finite()) {
        return Err(FinanceError::Invalid(format!("proportion must be non-negative, got {proportion}")));
    }
    let payoff = Payoff::new(PayoffFamily::GbmTerminal { scale: proportion, market }, weight.horizon(), 1)?;
    cash_plan(payoff, weight, 0.0)
}

pub fn family_name(family: &PayoffFamily) -> &'static str {
    match family {
        PayoffFamily::Deterministic { .. } => "deterministic",
        PayoffFamily::LinearWiener { .. } => "linear_wiener",
        PayoffFamily::GbmTerminal { .. } => "gbm_terminal",
        PayoffFamily::EuropeanCall { .. } => "european_call",
        PayoffFamily::AsianAverage { .. } => "asian_average",
        PayoffFamily::LognormalIncrement { .. } => "lognormal_increment",
    }
}

impl CashPlan {
    pub fn rate(&self) -> f64 {
        self.rate
    }
    pub fn payoff(&self) -> &Payoff {
        &self.payoff
    }
    pub fn weight(&self) -> &PenaltyWeight {
        &self.weight
    }
    pub fn system(&self) -> &SystemSpec {
        &self.system
    }

    pub fn step_plan(&self, grid: &TimeGrid, scheme: Scheme) -> Result<StepPlan, FinanceError> {
        let riccati = RiccatiWeights::build(&self.system, &self.weight, grid)?;
        Ok(StepPlan::new(&riccati, scheme)?)
    }

    pub fn run(&self, ensemble: &PathEnsemble, scheme: Scheme, options: RunOptions) -> Result<CashRun, FinanceError> {
        let plan = self.step_plan(ensemble.grid(), scheme)?;
        Ok(CashRun { run: run_ensemble(&plan, &self.payoff, ensemble, options)? })
    }
}

#[derive(Debug, Clone)]
pub struct CashRun {
    pub run: ReplicationRun,
}

impl CashRun {
    /// Accumulated cash `∫ e^{r(T-t)} u dt` on every path.
    pub fn accumulated(&self) -> &[f64] {
        &self.run.terminal
    }

    pub fn accumulated_mean(&self) -> Estimate {
        Estimate::from_samples(self.accumulated())
    }

    /// Root mean square of `∫ e^{r(T-t)} u dt - f`.
    pub fn residual_rmse(&self) -> f64 {
        self.run.residual_rmse()
    }

    pub fn cost(&self) -> Estimate {
        self.run.cost()
    }
}

/// Target for one interval `[T_{k-1}, T_k]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntervalTarget {
    /// `f_k = value`
    Deterministic { value: f64 },
    /// `f_k = exp(θ + η (w(T_k) - w(T_{k-1})))`
    Lognormal { theta: f64, eta: f64 },
}

/// Maturities `T_1 < T_2 < ...` with targets
/// `f_k = log ξ_{k-1} - log ξ_k = ∫_{T_{k-1}}^{T_k} r dt`, `ξ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BondCurveSpec {
    maturities: Vec<f64>,
    targets: Vec<IntervalTarget>,
    weight: PenaltyWeight,
    steps: Vec<usize>,
}

impl BondCurveSpec {
    /// `weight` is rescaled to each interval length; `steps` is the number
    /// of grid steps per interval.
    pub fn new(
        maturities: Vec<f64>,
        targets: Vec<IntervalTarget>,
        weight: PenaltyWeight,
        steps: Vec<usize>,
    ) -> Result<Self, FinanceError> {
        if maturities.is_empty() {
            return Err(FinanceError::Invalid("at least one maturity is required".into()));
        }
        if targets.len() != maturities.len() || steps.len() != maturities.len() {
            return Err(FinanceError::Invalid(format!(
                "{} maturities need as many targets and step counts, got {} and {}",
                maturities.len(),
                targets.len(),
                steps.len()
            )));
        }
        if weight.dim() != 1 {
            return Err(FinanceError::Invalid("bond curves use a scalar weight".into()));
        }
        let mut prev = 0.0;
        for (k, &t) in maturities.iter().enumerate() {
            if !(t > prev && t.is_finite()) {
                return Err(FinanceError::Invalid(format!(
                    "maturities must be strictly increasing and positive: T_{} = {t} after {prev}",
                    k + 1
                )));
            }
            prev = t;
        }
        for (k, target) in targets.iter().enumerate() {
            match *target {
                IntervalTarget::Deterministic { value } if !(value > 0.0 && value.is_finite()) => {
                    return Err(FinanceError::Invalid(format!(
                        "f_{} must be positive so that the bond price lies in (0, 1), got {value}",
                        k + 1
                    )));
                }
                IntervalTarget::Lognormal { theta, eta } if !(theta.is_finite() && eta.is_finite()) => {
                    return Err(FinanceError::Invalid(format!("f_{} parameters must be finite", k + 1)));
                }
                _ => {}
            }
        }
        Ok(BondCurveSpec { maturities, targets, weight, steps })
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }
    pub fn targets(&self) -> &[IntervalTarget] {
        &self.targets
    }
    pub fn intervals(&self) -> usize {
        self.maturities.len()
    }

    fn start(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.maturities[k - 1]
        }
    }

    /// Interval `k` in its own clock, starting at zero.
    fn local_grid(&self, k: usize) -> Result<TimeGrid, FinanceError> {
        let len = self.maturities[k] - self.start(k);
        let weight = self.weight.with_horizon(len)?;
        Ok(TimeGrid::for_weight(self.steps[k], &weight)?)
    }

    fn local_payoff(&self, k: usize) -> Result<Payoff, FinanceError> {
        let len = self.maturities[k] - self.start(k);
        let family = match self.targets[k] {
            IntervalTarget::Deterministic { value } => {
                PayoffFamily::Deterministic { value: DVector::from_element(1, value) }
            }
            IntervalTarget::Lognormal { theta, eta } => {
                PayoffFamily::LognormalIncrement { theta, eta, start: 0.0, end: len }
            }
        };
        Ok(Payoff::new(family, len, 1)?)
    }

    /// Concatenation of the interval grids on `[0, T_K]`.
    pub fn global_grid(&self) -> Result<TimeGrid, FinanceError> {
        let mut nodes = vec![0.0];
        for k in 0..self.intervals() {
            let local = self.local_grid(k)?;
            let start = self.start(k);
            let steps = local.steps();
            nodes.extend((1..steps).map(|i| start + local.t(i)));
            nodes.push(self.maturities[k]);
        }
        Ok(TimeGrid::from_nodes(nodes)?)
    }
}

/// Per-path outcome of one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BondRow {
    pub path_id: usize,
    /// 1-based maturity index.
    pub k: usize,
    pub f_k: f64,
    /// `∫_{T_{k-1}}^{T_k} r dt`
    pub integral: f64,
    /// `exp(-Σ_{j≤k} ∫ r)`
    pub xi_hat: f64,
}

#[derive(Debug, Clone)]
pub struct ShortRateResult {
    pub maturities: Vec<f64>,
    pub grid: TimeGrid,
    /// Path-major, `K` rows per path.
    pub rows: Vec<BondRow>,
    /// `(path id, r(t_i))` on the global grid for the retained paths.
    pub short_rates: Vec<(usize, Vec<f64>)>,
    pub cost: Vec<Estimate>,
}

impl ShortRateResult {
    pub fn paths(&self) -> usize {
        self.rows.len() / self.maturities.len()
    }

    pub fn row(&self, path: usize, k: usize) -> &BondRow {
        &self.rows[path * self.maturities.len() + k]
    }

    /// Root mean square of `∫ r - f_k` over paths, per interval.
    pub fn residual_rmse(&self) -> Vec<f64> {
        let m = self.paths() as f64;
        (0..self.maturities.len())
            .map(|k| {
                let ss: f64 = (0..self.paths()).map(|p| (self.row(p, k).integral - self.row(p, k).f_k).powi(2)).sum();
                (ss / m).sqrt()
            })
            .collect()
    }

    /// Largest `|Σ_{j≤k} f_j + log ξ̂_k|` over paths and maturities.
    pub fn telescoping_error(&self) -> f64 {
        let k_max = self.maturities.len();
        let mut worst: f64 = 0.0;
        for p in 0..self.paths() {
            let mut sum = 0.0;
            for k in 0..k_max {
                let row = self.row(p, k);
                sum += row.f_k;
                worst = worst.max((sum + row.xi_hat.ln()).abs());
            }
        }
        worst
    }

    /// Whether every reconstructed bond price lies in `(0, 1)`.
    pub fn prices_in_unit_interval(&self) -> bool {
        self.rows.iter().all(|r| r.xi_hat > 0.0 && r.xi_hat < 1.0)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "k", "f_k", "integral_r", "xi_hat_k"])?;
        for r in &self.rows {
            w.write_record([
                r.path_id.to_string(),
                r.k.to_string(),
                fmt_f64(r.f_k),
                fmt_f64(r.integral),
                fmt_f64(r.xi_hat),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the scalar replicator (`A = 0`, `b = 1`) on each interval with its
/// own clock, all intervals driven by one continuous Wiener path per sample.
pub fn bond_curve(
    spec: &BondCurveSpec,
    paths: usize,
    seed: u64,
    scheme: Scheme,
    options: RunOptions,
) -> Result<ShortRateResult, FinanceError> {
    let grid = spec.global_grid()?;
    let ensemble = PathEnsemble::new(grid.clone(), paths, 1, seed)?;
    let k_max = spec.intervals();
    let mut plans = Vec::with_capacity(k_max);
    let mut offsets = Vec::with_capacity(k_max);
    let mut offset = 0;
    for k in 0..k_max {
        let len = spec.maturities[k] - spec.start(k);
        let local = spec.local_grid(k)?;
        let payoff = spec.local_payoff(k)?;
        if !payoff.is_deterministic() {
            let probe = PathEnsemble::new(local.clone(), KF_PATHS.min(paths), 1, seed ^ (k as u64 + 1))?;
            let report = validate_kf(&payoff, &probe, 0.5 * len)?;
            if report.diverging || !report.sup_estimate.is_finite() {
                return Err(FinanceError::KernelGrowth { interval: k + 1, slope: report.growth_exponent });
            }
        }
        let system = SystemSpec::scalar(0.0, 0.0, len)?;
        let weight = spec.weight.with_horizon(len)?;
        let riccati = RiccatiWeights::build(&system, &weight, &local)?;
        let plan = StepPlan::new(&riccati, scheme)?;
        let mu_bar = plan.dual_init(&payoff.mean())?;
        offsets.push(offset);
        offset += local.steps();
        plans.push((local, payoff, plan, mu_bar));
    }
    let total_steps = grid.steps();
    let chunks = map_chunks(paths, |range| -> Result<_, FinanceError> {
        let mut rows = Vec::with_capacity(range.len() * k_max);
        let mut rates = Vec::new();
        let mut cost = vec![Vec::with_capacity(range.len()); k_max];
        let mut dw = vec![0.0; total_steps];
        let mut traces: Vec<PathTrace> = plans.iter().map(|(g, ..)| PathTrace::new(g.steps(), 1)).collect();
        for p in range {
            ensemble.fill_increments(p, &mut dw);
            let mut log_xi = 0.0;
            let mut r_path = Vec::new();
            for (k, (local, payoff, plan, mu_bar)) in plans.iter().enumerate() {
                let slice = &dw[offsets[k]..offsets[k] + local.steps()];
                let state = PathState::new(payoff, local, slice);
                let record = simulate_path(plan, payoff, mu_bar, &state, &mut traces[k])?;
                let f_k = payoff.terminal(&state)?[0];
                let integral = traces[k].x_at(local.steps())[0];
                log_xi -= integral;
                rows.push(BondRow { path_id: p, k: k + 1, f_k, integral, xi_hat: log_xi.exp() });
                cost[k].push(record.cost);
                if p < options.retain {
                    r_path.extend_from_slice(&traces[k].u);
                }
            }
            if p < options.retain {
                rates.push((p, r_path));
            }
        }
        Ok((rows, rates, cost))
    });
    let mut rows = Vec::with_capacity(paths * k_max);
    let mut short_rates = Vec::new();
    let mut costs = vec![Vec::with_capacity(paths); k_max];
    for chunk in chunks {
        let (r, s, c) = chunk?;
        rows.extend(r);
        short_rates.extend(s);
        for (all, part) in costs.iter_mut().zip(c) {
            all.extend(part);
        }
    }
    Ok(ShortRateResult {
        maturities: spec.maturities.clone(),
        grid,
        rows,
        short_rates,
        cost: costs.iter().map(|c| Estimate::from_samples(c)).collect(),
    })
}
