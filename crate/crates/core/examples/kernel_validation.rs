//! Regression estimates of the representation kernel against the closed forms.

use lq_replicate::kernels::{regression_probe, validate_kf, Payoff, PayoffFamily};
use lq_replicate::sde::{Market, PathEnsemble, TimeGrid, Volatility};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let market = Market::new(1.5, Volatility::Constant(0.2))?;
    let families = [
        (
            "linear_wiener",
            PayoffFamily::LinearWiener { offset: DVector::zeros(1), loading: DMatrix::from_element(1, 1, 1.0) },
        ),
        ("gbm_terminal", PayoffFamily::GbmTerminal { scale: 1.0, market: market.clone() }),
        ("european_call", PayoffFamily::EuropeanCall { scale: 1.0, strike: 1.5, market: market.clone() }),
        ("asian_average", PayoffFamily::AsianAverage { scale: 1.0, market: market.clone() }),
        ("lognormal_increment", PayoffFamily::LognormalIncrement { theta: -3.0, eta: 0.2, start: 0.0, end: 1.0 }),
    ];
    let grid = TimeGrid::uniform(64, 1.0)?;
    let ensemble = PathEnsemble::new(grid, 20_000, 1, 17)?;
    for (name, family) in families {
        let payoff = Payoff::new(family, 1.0, 1)?;
        let probes = regression_probe(&payoff, &ensemble, &[5, 20, 35, 50, 62])?;
        let worst = probes.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
        let kf = validate_kf(&payoff, &ensemble, 0.5)?;
        println!(
            "{name:<20} worst |z| {worst:.2}  sup E|k|^2 on [T/2, T) = {:.5} +/- {:.1e}  growth slope {:.3}",
            kf.sup_estimate, kf.sup_se, kf.growth_exponent
        );
    }
    Ok(())
}
