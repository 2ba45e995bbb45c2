//! A dividend flow paying 5% of terminal equity, and its near-deterministic limit.

use lq_replicate::finance::{dividend_plan, DEFAULT_DIVIDEND_PROPORTION};
use lq_replicate::replicator::{RunOptions, Scheme};
use lq_replicate::sde::{Market, PathEnsemble, TimeGrid, Volatility};
use lq_replicate::weights::PenaltyWeight;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let weight = PenaltyWeight::pure_power(0.75, 1.0, 1)?;
    let grid = TimeGrid::for_weight(256, &weight)?;
    let late = grid.nodes().iter().position(|&t| t >= 0.9).unwrap_or(0);
    for sigma in [0.2, 1e-8] {
        let market = Market::new(1.0, Volatility::Constant(sigma))?;
        let plan = dividend_plan(market, DEFAULT_DIVIDEND_PROPORTION, &weight)?;
        let ensemble = PathEnsemble::new(grid.clone(), 20_000, 1, 13)?;
        let run = plan.run(&ensemble, Scheme::Exact, RunOptions { retain: 1 })?;
        let paid = run.accumulated_mean();
        let (_, trace) = &run.run.trajectories[0];
        println!(
            "sigma = {sigma:e}: paid {:.6} +/- {:.2e}, first-path rate u(0) = {:.6}, u({:.3}) = {:.6}",
            paid.mean,
            paid.se,
            trace.u_at(0)[0],
            grid.t(late),
            trace.u_at(late)[0]
        );
    }
    Ok(())
}
