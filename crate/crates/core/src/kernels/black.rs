//! Zero-drift Black-Scholes analytics: the asset itself is the martingale,
//! so the call value is `x Φ(d₁) - K Φ(d₂)` with no discounting.

use libm::erfc;

use super::KernelError;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsQuote {
    pub price: f64,
    pub delta: f64,
}

/// Price and delta of a call struck at `strike`, seen at time `t` with
/// spot `x`, maturing at `maturity`, with RMS volatility `vol` over `[t, T]`.
pub fn bs_price_delta(x: f64, strike: f64, t: f64, maturity: f64, vol: f64) -> Result<BsQuote, KernelError> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(KernelError::Invalid(format!("spot must be positive, got {x}")));
    }
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(KernelError::Invalid(format!("strike must be positive, got {strike}")));
    }
    if !(t < maturity) {
        return Err(KernelError::TimeOutOfRange { t, horizon: maturity });
    }
    if !(vol > 0.0 && vol.is_finite()) {
        return Err(KernelError::Invalid(format!("volatility must be positive, got {vol}")));
    }
    let sd = vol * (maturity - t).sqrt();
    let d1 = ((x / strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    Ok(BsQuote { price: x * norm_cdf(d1) - strike * norm_cdf(d2), delta: norm_cdf(d1) })
}
