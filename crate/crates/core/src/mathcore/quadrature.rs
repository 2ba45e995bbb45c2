//! Composite Gauss-Legendre quadrature after the power substitution
//! `v = (T - t)^{1-α}`, which turns an integrand behaving like
//! `(T - t)^{-α}` near `T` into a bounded, smooth function of `v`.
//!
//! Integrands are written in terms of the time-to-go `τ = T - t` so that
//! points arbitrarily close to the singular endpoint never round onto it.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::MathError;

const GL_ORDER: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub max_panels: usize,
    /// Singularity exponent used in the substitution; must lie in (0.5, 1).
    pub alpha: f64,
}

impl QuadratureSpec {
    pub fn new(alpha: f64) -> Result<Self, MathError> {
        let spec = QuadratureSpec { rel_tol: 1e-10, max_panels: 4096, alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_tolerance(mut self, rel_tol: f64) -> Result<Self, MathError> {
        self.rel_tol = rel_tol;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MathError> {
        if !(self.rel_tol > 0.0) {
            return Err(MathError::InvalidSpec(format!("tolerance must be positive, got {}", self.rel_tol)));
        }
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(MathError::InvalidSpec(format!("alpha must lie in (0.5, 1), got {}", self.alpha)));
        }
        if self.max_panels == 0 {
            return Err(MathError::InvalidSpec("max_panels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Nodes and weights of the `order`-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

fn panels_in_v<F>(f: &F, p: f64, v_lo: f64, v_hi: f64, panels: usize) -> Result<DMatrix<f64>, MathError>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let (nodes, weights) = rule();
    let h = (v_hi - v_lo) / panels as f64;
    let mut acc: Option<DMatrix<f64>> = None;
    for k in 0..panels {
        let mid = v_lo + (k as f64 + 0.5) * h;
        for (x, w) in nodes.iter().zip(weights) {
            let v = mid + 0.5 * h * x;
            let tau = v.powf(p);
            let jac = p * v.powf(p - 1.0);
            let val = f(tau);
            if val.iter().any(|e| !e.is_finite()) {
                return Err(MathError::NonFinite("quadrature integrand"));
            }
            let scaled = val * (w * jac * 0.5 * h);
            match acc.as_mut() {
                Some(a) => *a += scaled,
                None => acc = Some(scaled),
            }
        }
    }
    Ok(acc.expect("at least one panel"))
}

/// `∫ₛᵉ F(t) dt` for `s ≤ e ≤ t_end`, where the integrand is supplied as a
/// function of the time-to-go `τ = t_end - t` and may blow up like
/// `τ^{-α}` as `τ → 0`.
pub fn integrate_singular_segment<F>(
    f: F,
    spec: &QuadratureSpec,
    s: f64,
    e: f64,
    t_end: f64,
) -> Result<DMatrix<f64>, MathError>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    if !(s.is_finite() && e.is_finite() && t_end.is_finite()) {
        return Err(MathError::NonFinite("integration limits"));
    }
    if !(s <= e && e <= t_end) {
        return Err(MathError::InvalidSpec(format!("need s <= e <= T, got s={s}, e={e}, T={t_end}")));
    }
    integrate_to_go(f, spec, t_end - e, t_end - s)
}

/// `∫ F(τ) dτ` over time-to-go `τ ∈ [lo, hi]`, `0 ≤ lo ≤ hi`. Passing the
/// limits as times-to-go keeps short intervals next to the singular end
/// free of cancellation.
pub fn integrate_to_go<F>(f: F, spec: &QuadratureSpec, lo: f64, hi: f64) -> Result<DMatrix<f64>, MathError>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    spec.validate()?;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(MathError::NonFinite("integration limits"));
    }
    if !(0.0 <= lo && lo <= hi) {
        return Err(MathError::InvalidSpec(format!("need 0 <= lo <= hi, got lo={lo}, hi={hi}")));
    }
    if lo == hi {
        let probe = f(hi);
        return Ok(DMatrix::zeros(probe.nrows(), probe.ncols()));
    }
    let p = 1.0 / (1.0 - spec.alpha);
    let v_hi = hi.powf(1.0 - spec.alpha);
    let v_lo = lo.powf(1.0 - spec.alpha);
    let mut panels = 1;
    let mut prev = panels_in_v(&f, p, v_lo, v_hi, panels)?;
    loop {
        let next_panels = panels * 2;
        if next_panels > spec.max_panels {
            return Err(MathError::QuadratureNotConverged {
                start: lo,
                end: hi,
                tol: spec.rel_tol,
                panels: spec.max_panels,
            });
        }
        let cur = panels_in_v(&f, p, v_lo, v_hi, next_panels)?;
        let scale = cur.amax();
        let diff = (&cur - &prev).amax();
        if diff <= spec.rel_tol * scale || scale == 0.0 {
            return Ok(cur);
        }
        prev = cur;
        panels = next_panels;
    }
}

/// `∫ₛᵀ F(t) dt` with an integrable singularity at `T`.
pub fn integrate_singular<F>(f: F, spec: &QuadratureSpec, s: f64, t_end: f64) -> Result<DMatrix<f64>, MathError>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    integrate_singular_segment(f, spec, s, t_end, t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let m30: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert_relative_eq!(m30, 2.0 / 31.0, epsilon = 1e-14);
    }

    #[test]
    fn pure_power_singularity() {
        let spec = QuadratureSpec::new(0.75).unwrap();
        let r = integrate_singular(|tau| scalar(tau.powf(-0.75)), &spec, 0.0, 1.0).unwrap();
        assert_relative_eq!(r[(0, 0)], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_integrand() {
        let spec = QuadratureSpec::new(0.75).unwrap();
        let r = integrate_singular(|_| DMatrix::zeros(2, 2), &spec, 0.3, 1.0).unwrap();
        assert_eq!(r, DMatrix::zeros(2, 2));
    }

    #[test]
    fn weighted_singularity_matches_refined_trapezoid() {
        let spec = QuadratureSpec::new(0.75).unwrap();
        let r = integrate_singular(|tau| scalar((0.1 * tau).exp() * tau.powf(-0.75)), &spec, 0.0, 1.0).unwrap();
        // trapezoid in v = (1-t)^{1/4}: integrand 4 e^{0.1 v^4}, 10^6 panels
        let m = 1_000_000;
        let h = 1.0 / m as f64;
        let g = |v: f64| 4.0 * (0.1 * v.powi(4)).exp();
        let mut sum = 0.5 * (g(0.0) + g(1.0));
        for k in 1..m {
            sum += g(k as f64 * h);
        }
        let reference = sum * h;
        assert!((r[(0, 0)] - reference).abs() < 1e-8, "{} vs {}", r[(0, 0)], reference);
    }

    #[test]
    fn additive_over_split() {
        let spec = QuadratureSpec::new(0.6).unwrap();
        let f = |tau: f64| scalar((1.0 + tau.sin()) * tau.powf(-0.6));
        let whole = integrate_singular(f, &spec, 0.1, 2.0).unwrap()[(0, 0)];
        let left = integrate_singular_segment(f, &spec, 0.1, 1.3, 2.0).unwrap()[(0, 0)];
        let right = integrate_singular(f, &spec, 1.3, 2.0).unwrap()[(0, 0)];
        assert!((whole - left - right).abs() <= 2.0 * spec.rel_tol * whole.abs());
    }

    #[test]
    fn to_go_limits_near_singularity() {
        let spec = QuadratureSpec::new(0.75).unwrap();
        let (lo, hi) = (1e-30, 2e-30);
        let r = integrate_to_go(|tau| scalar(tau.powf(-0.75)), &spec, lo, hi).unwrap()[(0, 0)];
        let exact = 4.0 * (hi.powf(0.25) - lo.powf(0.25));
        assert_relative_eq!(r, exact, max_relative = 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let spec = QuadratureSpec { rel_tol: 1e-15, max_panels: 2, alpha: 0.75 };
        let res = integrate_singular(|tau| scalar((40.0 * tau).sin() * tau.powf(-0.75)), &spec, 0.0, 1.0);
        assert!(matches!(res, Err(MathError::QuadratureNotConverged { .. })));
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(QuadratureSpec::new(0.4).is_err());
        assert!(QuadratureSpec::new(0.75).unwrap().with_tolerance(0.0).is_err());
    }
}
