//! Deposit plans with interest that accumulate to `S(T)` or to half a call.

use lq_replicate::finance::cash_plan;
use lq_replicate::kernels::{bs_price_delta, Payoff, PayoffFamily};
use lq_replicate::replicator::{RunOptions, Scheme};
use lq_replicate::sde::{Market, PathEnsemble, TimeGrid, Volatility};
use lq_replicate::weights::PenaltyWeight;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let weight = PenaltyWeight::pure_power(0.75, 1.0, 1)?;
    let market = Market::new(1.0, Volatility::Constant(0.2))?;
    let targets = [
        ("S(T)", PayoffFamily::GbmTerminal { scale: 1.0, market: market.clone() }),
        ("0.5 (S(T) - 1)+", PayoffFamily::EuropeanCall { scale: 0.5, strike: 1.0, market: market.clone() }),
    ];
    println!("call value 0.5 H(S(0), 0) = {:.6}", 0.5 * bs_price_delta(1.0, 1.0, 0.0, 1.0, 0.2)?.price);
    for (name, family) in targets {
        let plan = cash_plan(Payoff::new(family, 1.0, 1)?, &weight, 0.05)?;
        println!("target {name}, E f = {:.6}", plan.payoff().mean()[0]);
        for steps in [64, 256, 1024] {
            let ensemble = PathEnsemble::new(TimeGrid::for_weight(steps, &weight)?, 20_000, 1, 11)?;
            let run = plan.run(&ensemble, Scheme::Exact, RunOptions { retain: 0 })?;
            let acc = run.accumulated_mean();
            println!(
                "  N = {steps:>4}  accumulated {:.6} +/- {:.6}  residual RMSE {:.3e}",
                acc.mean,
                acc.se,
                run.residual_rmse()
            );
        }
    }
    Ok(())
}
