//! A two-dimensional oscillator with a correlated two-factor target.

use lq_replicate::kernels::{Payoff, PayoffFamily};
use lq_replicate::replicator::{
    loewner_check, min_cost_closed_form, run_ensemble, RiccatiWeights, RunOptions, Scheme, StepPlan, SystemSpec,
};
use lq_replicate::sde::{PathEnsemble, TimeGrid};
use lq_replicate::weights::{PenaltyWeight, WeightKind};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let system = SystemSpec::new(a, DMatrix::identity(2, 2), DVector::from_column_slice(&[0.5, 0.0]), 1.0, 2)?;
    let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let weight = PenaltyWeight::new(WeightKind::PurePower, 0.7, 1.0, g)?;
    let payoff = Payoff::new(
        PayoffFamily::LinearWiener {
            offset: DVector::from_column_slice(&[1.0, -1.0]),
            loading: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.3]),
        },
        1.0,
        2,
    )?;
    let grid = TimeGrid::for_weight(256, &weight)?;
    let riccati = RiccatiWeights::build(&system, &weight, &grid)?;
    println!("R(0) = {:.6}", riccati.r_node(0));
    println!("Loewner check: {:?}", loewner_check(&riccati));
    let plan = StepPlan::new(&riccati, Scheme::Exact)?;
    let run = run_ensemble(&plan, &payoff, &PathEnsemble::new(grid, 10_000, 2, 1)?, RunOptions::default())?;
    let cost = run.cost();
    println!("mu_bar = {:?}", run.mu_bar.as_slice());
    println!(
        "cost {:.5} +/- {:.5}, closed form {:.5}, residual RMSE {:.3e}",
        cost.mean,
        cost.se,
        min_cost_closed_form(&riccati, &payoff)?,
        run.residual_rmse()
    );
    Ok(())
}
