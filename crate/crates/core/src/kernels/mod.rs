//! Terminal targets `f` together with their means and martingale
//! representation kernels `k_f`, so that `f = E f + ∫₀ᵀ k_f(t) dw(t)`.
//!
//! Finance families are scalar and driven by Wiener component 0 through a
//! [`Market`]. Their kernels follow from `E[f | F_t]` in closed form:
//!
//! * terminal price `c S(T)`: `k = c σ(t) S(t)`
//! * call `c (S(T) - K)⁺`: `k = c Φ(d₁) σ(t) S(t)`
//! * average `(c/T) ∫ S dt`: `E[f|F_t] = (c/T)(∫₀ᵗ S + (T-t) S(t))`, so `k = (c/T)(T-t) σ(t) S(t)`
//! * lognormal increment `exp(θ + η (w(b) - w(a)))`: `k = η E[f|F_t]` on `[a, b)`

mod black;
mod validate;

pub use black::{bs_price_delta, norm_cdf, norm_pdf, BsQuote};
pub use validate::{regression_probe, representation_rmse, validate_kf, KfReport, NodeMoment, ProbeResult};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mathcore::gauss_legendre;
use crate::sde::{simulate_gbm, Market, TimeGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("time {t} is not before the horizon {horizon}")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("invalid payoff: {0}")]
    Invalid(String),
    #[error("time {0} is not a node of the simulation grid")]
    NotOnGrid(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayoffFamily {
    Deterministic {
        value: DVector<f64>,
    },
    /// `f = offset + loading · w(T)`.
    LinearWiener {
        offset: DVector<f64>,
        loading: DMatrix<f64>,
    },
    GbmTerminal {
        scale: f64,
        market: Market,
    },
    EuropeanCall {
        scale: f64,
        strike: f64,
        market: Market,
    },
    AsianAverage {
        scale: f64,
        market: Market,
    },
    /// `f = exp(θ + η (w(end) - w(start)))`, always positive.
    LognormalIncrement {
        theta: f64,
        eta: f64,
        start: f64,
        end: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payoff {
    family: PayoffFamily,
    horizon: f64,
    noise_dim: usize,
}

/// Everything about one simulated path that a kernel or payoff may read.
#[derive(Debug, Clone)]
pub struct PathState<'a> {
    pub grid: &'a TimeGrid,
    pub dw: &'a [f64],
    pub dim: usize,
    /// `w(t_i)`, node-major, `(N + 1) * d` entries.
    pub w: Vec<f64>,
    pub prices: Option<Vec<f64>>,
}

impl<'a> PathState<'a> {
    pub fn new(payoff: &Payoff, grid: &'a TimeGrid, dw: &'a [f64]) -> Self {
        let d = payoff.noise_dim;
        let n = grid.steps();
        let mut w = vec![0.0; (n + 1) * d];
        for i in 0..n {
            for k in 0..d {
                w[(i + 1) * d + k] = w[i * d + k] + dw[i * d + k];
            }
        }
        let prices = payoff.market().map(|m| simulate_gbm(m, grid, dw, d).prices);
        PathState { grid, dw, dim: d, w, prices }
    }

    pub fn w_at(&self, i: usize, k: usize) -> f64 {
        self.w[i * self.dim + k]
    }

    fn price(&self, i: usize) -> f64 {
        self.prices.as_ref().expect("market path simulated")[i]
    }
}

impl Payoff {
    pub fn new(family: PayoffFamily, horizon: f64, noise_dim: usize) -> Result<Self, KernelError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(KernelError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if noise_dim == 0 {
            return Err(KernelError::Invalid("noise dimension must be at least 1".into()));
        }
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(KernelError::Invalid(format!("{what} must be finite")))
            }
        };
        match &family {
            PayoffFamily::Deterministic { value } => {
                if value.is_empty() || value.iter().any(|v| !v.is_finite()) {
                    return Err(KernelError::Invalid("deterministic target must be a finite, non-empty vector".into()));
                }
            }
            PayoffFamily::LinearWiener { offset, loading } => {
                if loading.nrows() != offset.len() || loading.ncols() != noise_dim || offset.is_empty() {
                    return Err(KernelError::Invalid(format!(
                        "loading must be {}x{}, got {}x{}",
                        offset.len(),
                        noise_dim,
                        loading.nrows(),
                        loading.ncols()
                    )));
                }
                if offset.iter().chain(loading.iter()).any(|v| !v.is_finite()) {
                    return Err(KernelError::Invalid("linear Wiener target must be finite".into()));
                }
            }
            PayoffFamily::GbmTerminal { scale, .. } | PayoffFamily::AsianAverage { scale, .. } => {
                finite(*scale, "scale")?;
            }
            PayoffFamily::EuropeanCall { scale, strike, .. } => {
                finite(*scale, "scale")?;
                if !(*strike > 0.0 && strike.is_finite()) {
                    return Err(KernelError::Invalid(format!("strike must be positive, got {strike}")));
                }
            }
            PayoffFamily::LognormalIncrement { theta, eta, start, end } => {
                finite(*theta, "theta")?;
                finite(*eta, "eta")?;
                if !(*start >= 0.0 && start < end && *end <= horizon * (1.0 + 1e-12)) {
                    return Err(KernelError::Invalid(format!(
                        "increment interval [{start}, {end}] must lie inside [0, {horizon}]"
                    )));
                }
            }
        }
        Ok(Payoff { family, horizon, noise_dim })
    }

    pub fn family(&self) -> &PayoffFamily {
        &self.family
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            PayoffFamily::Deterministic { value } => value.len(),
            PayoffFamily::LinearWiener { offset, .. } => offset.len(),
            _ => 1,
        }
    }

    pub fn market(&self) -> Option<&Market> {
        match &self.family {
            PayoffFamily::GbmTerminal { market, .. }
            | PayoffFamily::EuropeanCall { market, .. }
            | PayoffFamily::AsianAverage { market, .. } => Some(market),
            _ => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.family, PayoffFamily::Deterministic { .. })
    }

    /// `E f` under the simulation (martingale) measure.
    pub fn mean(&self) -> DVector<f64> {
        match &self.family {
            PayoffFamily::Deterministic { value } => value.clone(),
            PayoffFamily::LinearWiener { offset, .. } => offset.clone(),
            PayoffFamily::GbmTerminal { scale, market } | PayoffFamily::AsianAverage { scale, market } => {
                DVector::from_element(1, scale * market.s0())
            }
            PayoffFamily::EuropeanCall { scale, strike, market } => {
                let vol = market.vol().rms(0.0, self.horizon);
                let q = bs_price_delta(market.s0(), *strike, 0.0, self.horizon, vol).expect("validated inputs");
                DVector::from_element(1, scale * q.price)
            }
            PayoffFamily::LognormalIncrement { theta, eta, start, end } => {
                DVector::from_element(1, (theta + 0.5 * eta * eta * (end - start)).exp())
            }
        }
    }

    /// Pathwise value of `f`.
    pub fn terminal(&self, path: &PathState<'_>) -> Result<DVector<f64>, KernelError> {
        let n = path.grid.steps();
        Ok(match &self.family {
            PayoffFamily::Deterministic { value } => value.clone(),
            PayoffFamily::LinearWiener { offset, loading } => {
                let w_t = DVector::from_column_slice(&path.w[n * path.dim..(n + 1) * path.dim]);
                offset + loading * w_t
            }
            PayoffFamily::GbmTerminal { scale, .. } => DVector::from_element(1, scale * path.price(n)),
            PayoffFamily::EuropeanCall { scale, strike, .. } => {
                DVector::from_element(1, scale * (path.price(n) - strike).max(0.0))
            }
            PayoffFamily::AsianAverage { scale, .. } => {
                let integral: f64 = (0..n).map(|i| 0.5 * (path.price(i) + path.price(i + 1)) * path.grid.dt(i)).sum();
                DVector::from_element(1, scale * integral / self.horizon)
            }
            PayoffFamily::LognormalIncrement { theta, eta, start, end } => {
                let a = path.grid.index_of(*start).ok_or(KernelError::NotOnGrid(*start))?;
                let b = path.grid.index_of(*end).ok_or(KernelError::NotOnGrid(*end))?;
                DVector::from_element(1, (theta + eta * (path.w_at(b, 0) - path.w_at(a, 0))).exp())
            }
        })
    }

    /// `k_f(t_i)` as an `n × d` matrix.
    pub fn kernel_eval(&self, path: &PathState<'_>, i: usize) -> Result<DMatrix<f64>, KernelError> {
        let mut out = DMatrix::zeros(self.dim(), self.noise_dim);
        self.kernel_into(path, i, &mut out)?;
        Ok(out)
    }

    /// In-place variant of [`Payoff::kernel_eval`]; `out` must be `n × d`.
    pub fn kernel_into(&self, path: &PathState<'_>, i: usize, out: &mut DMatrix<f64>) -> Result<(), KernelError> {
        let t = path.grid.t(i);
        if !(t < self.horizon) || i >= path.grid.steps() {
            return Err(KernelError::TimeOutOfRange { t, horizon: self.horizon });
        }
        let tau = self.horizon - t;
        match &self.family {
            PayoffFamily::Deterministic { .. } => out.fill(0.0),
            PayoffFamily::LinearWiener { loading, .. } => out.copy_from(loading),
            PayoffFamily::GbmTerminal { scale, market } => {
                out.fill(0.0);
                out[(0, 0)] = scale * market.vol().at(t) * path.price(i);
            }
            PayoffFamily::EuropeanCall { scale, strike, market } => {
                out.fill(0.0);
                let s = path.price(i);
                let vbar = market.vol().rms(t, self.horizon);
                let q = bs_price_delta(s, *strike, t, self.horizon, vbar)?;
                out[(0, 0)] = scale * q.delta * market.vol().at(t) * s;
            }
            PayoffFamily::AsianAverage { scale, market } => {
                out.fill(0.0);
                out[(0, 0)] = scale / self.horizon * tau * market.vol().at(t) * path.price(i);
            }
            PayoffFamily::LognormalIncrement { theta, eta, start, end } => {
                out.fill(0.0);
                if t >= *start && t < *end {
                    let a = path.grid.index_of(*start).ok_or(KernelError::NotOnGrid(*start))?;
                    let dw = path.w_at(i, 0) - path.w_at(a, 0);
                    let cond_mean = (theta + eta * dw + 0.5 * eta * eta * (end - t)).exp();
                    out[(0, 0)] = eta * cond_mean;
                }
            }
        }
        Ok(())
    }

    /// Times in `(0, T)` where the kernel jumps.
    pub fn kernel_breakpoints(&self) -> Vec<f64> {
        match &self.family {
            PayoffFamily::LognormalIncrement { start, end, .. } => {
                [*start, *end].into_iter().filter(|&t| t > 0.0 && t < self.horizon).collect()
            }
            _ => Vec::new(),
        }
    }

    /// `E[k_f(t) k_f(t)ᵀ]`, an `n × n` matrix, for `t ∈ [0, T)`.
    pub fn kernel_second_moment(&self, t: f64) -> DMatrix<f64> {
        let scalar = |v: f64| DMatrix::from_element(1, 1, v);
        match &self.family {
            PayoffFamily::Deterministic { value } => DMatrix::zeros(value.len(), value.len()),
            PayoffFamily::LinearWiener { loading, .. } => loading * loading.transpose(),
            PayoffFamily::GbmTerminal { scale, market } => {
                let sig = market.vol().at(t);
                let es2 = market.s0().powi(2) * market.vol().integrated_variance(0.0, t).exp();
                scalar(scale * scale * sig * sig * es2)
            }
            PayoffFamily::AsianAverage { scale, market } => {
                let sig = market.vol().at(t);
                let es2 = market.s0().powi(2) * market.vol().integrated_variance(0.0, t).exp();
                let lever = scale / self.horizon * (self.horizon - t);
                scalar(lever * lever * sig * sig * es2)
            }
            PayoffFamily::EuropeanCall { scale, strike, market } => {
                let sig = market.vol().at(t);
                scalar(scale * scale * sig * sig * call_delta_moment(market, *strike, t, self.horizon))
            }
            PayoffFamily::LognormalIncrement { theta, eta, start, end } => {
                if t >= *start && t < *end {
                    scalar(eta * eta * (2.0 * theta + 2.0 * eta * eta * (t - start) + eta * eta * (end - t)).exp())
                } else {
                    scalar(0.0)
                }
            }
        }
    }
}

/// `E[Φ(d₁(S_t))² S_t²]` for lognormal `S_t`, by Gauss-Legendre in the
/// standard normal variable with the steep `Φ(d₁)` transition isolated.
fn call_delta_moment(market: &Market, strike: f64, t: f64, horizon: f64) -> f64 {
    let var0 = market.vol().integrated_variance(0.0, t);
    let tau = horizon - t;
    let vbar = market.vol().rms(t, horizon);
    let sd_rest = vbar * tau.sqrt();
    let s0 = market.s0();
    let delta = |s: f64| {
        if sd_rest > 0.0 {
            norm_cdf(((s / strike).ln() + 0.5 * sd_rest * sd_rest) / sd_rest)
        } else if s > strike {
            1.0
        } else if s < strike {
            0.0
        } else {
            0.5
        }
    };
    if var0 <= 0.0 {
        let d = delta(s0);
        return d * d * s0 * s0;
    }
    let sd0 = var0.sqrt();
    let price = |z: f64| s0 * (sd0 * z - 0.5 * var0).exp();
    let integrand = |z: f64| {
        let s = price(z);
        let d = delta(s);
        d * d * s * s * norm_pdf(z)
    };
    // z where d₁ = 0, and the z-width of the transition
    let z_mid = ((strike).ln() - 0.5 * sd_rest * sd_rest - s0.ln() + 0.5 * var0) / sd0;
    let width = sd_rest / sd0;
    // S² φ(z) peaks at z = 2 sd0
    let (lo, hi) = (-12.0 + 2.0 * sd0, 12.0 + 2.0 * sd0);
    let mut cuts = vec![lo, hi];
    for c in [z_mid - 10.0 * width, z_mid, z_mid + 10.0 * width] {
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    let (x, w) = gauss_legendre(32);
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let panels = 8;
        let h = (seg[1] - seg[0]) / panels as f64;
        for p in 0..panels {
            let mid = seg[0] + (p as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(&w) {
                total += wi * 0.5 * h * integrand(mid + 0.5 * h * xi);
            }
        }
    }
    total
}
