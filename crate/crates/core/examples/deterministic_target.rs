//! Steer `x' = u` from 0 to 1 at minimal weighted energy.

use lq_replicate::kernels::{Payoff, PayoffFamily};
use lq_replicate::replicator::{
    min_cost_closed_form, run_ensemble, RiccatiWeights, RunOptions, Scheme, StepPlan, SystemSpec,
};
use lq_replicate::sde::{PathEnsemble, TimeGrid};
use lq_replicate::weights::PenaltyWeight;
use nalgebra::DVector;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = SystemSpec::scalar(0.0, 0.0, 1.0)?;
    let weight = PenaltyWeight::pure_power(0.75, 1.0, 1)?;
    let payoff = Payoff::new(PayoffFamily::Deterministic { value: DVector::from_element(1, 1.0) }, 1.0, 1)?;
    let grid = TimeGrid::for_weight(4096, &weight)?;
    let riccati = RiccatiWeights::build(&system, &weight, &grid)?;
    let plan = StepPlan::new(&riccati, Scheme::Exact)?;
    let run = run_ensemble(&plan, &payoff, &PathEnsemble::new(grid, 1, 1, 0)?, RunOptions { retain: 1 })?;

    println!("mu_bar      {:.12}", run.mu_bar[0]);
    println!("cost        {:.12}", run.cost().mean);
    println!("closed form {:.12}", min_cost_closed_form(&riccati, &payoff)?);
    println!("x(T) - 1    {:.3e}", run.terminal[0] - 1.0);
    let (_, trace) = &run.trajectories[0];
    for i in [0, 1024, 2048, 3072, 4000] {
        println!("u(t = {:.4}) = {:.6}", run.grid.t(i), trace.u_at(i)[0]);
    }
    Ok(())
}
