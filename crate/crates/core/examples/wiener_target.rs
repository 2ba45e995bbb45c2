//! Replicate `f = w(1)` and watch the terminal error vanish under refinement.

use lq_replicate::kernels::{Payoff, PayoffFamily};
use lq_replicate::replicator::{
    martingale_check, min_cost_closed_form, run_ensemble, RiccatiWeights, RunOptions, Scheme, StepPlan, SystemSpec,
};
use lq_replicate::sde::{PathEnsemble, TimeGrid};
use lq_replicate::weights::PenaltyWeight;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = SystemSpec::scalar(0.0, 0.0, 1.0)?;
    let weight = PenaltyWeight::pure_power(0.75, 1.0, 1)?;
    let payoff = Payoff::new(
        PayoffFamily::LinearWiener { offset: DVector::zeros(1), loading: DMatrix::from_element(1, 1, 1.0) },
        1.0,
        1,
    )?;
    for steps in [64, 256, 1024] {
        let grid = TimeGrid::for_weight(steps, &weight)?;
        let riccati = RiccatiWeights::build(&system, &weight, &grid)?;
        let plan = StepPlan::new(&riccati, Scheme::Exact)?;
        let ensemble = PathEnsemble::new(grid, 10_000, 1, 7)?;
        let run = run_ensemble(&plan, &payoff, &ensemble, RunOptions::default())?;
        let cost = run.cost();
        println!(
            "N = {steps:>4}  cost {:.5} +/- {:.5} (J* = {:.5})  residual RMSE {:.3e}  martingale |z| {:.2}",
            cost.mean,
            cost.se,
            min_cost_closed_form(&riccati, &payoff)?,
            run.residual_rmse(),
            martingale_check(&run, 3.0).worst_z
        );
    }
    Ok(())
}
