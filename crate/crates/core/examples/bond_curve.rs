//! Short-rate paths reproducing two lognormal bond targets.

use lq_replicate::finance::{bond_curve, BondCurveSpec, IntervalTarget};
use lq_replicate::replicator::{RunOptions, Scheme};
use lq_replicate::weights::PenaltyWeight;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let weight = PenaltyWeight::pure_power(0.75, 1.0, 1)?;
    let target = IntervalTarget::Lognormal { theta: -3.0, eta: 0.2 };
    for steps in [32, 128, 512] {
        let spec = BondCurveSpec::new(vec![1.0, 2.5], vec![target, target], weight.clone(), vec![steps, steps])?;
        let res = bond_curve(&spec, 5_000, 21, Scheme::Exact, RunOptions { retain: 1 })?;
        println!(
            "N = {steps:>3} per interval: residual RMSE {:?}, telescoping error {:.3e}, prices in (0, 1): {}",
            res.residual_rmse(),
            res.telescoping_error(),
            res.prices_in_unit_interval()
        );
    }
    let spec = BondCurveSpec::new(vec![2.0], vec![IntervalTarget::Deterministic { value: 0.1 }], weight, vec![256])?;
    let res = bond_curve(&spec, 1, 0, Scheme::Exact, RunOptions::default())?;
    println!("deterministic f_1 = 0.1: xi_1 = {:.9} (exp(-0.1) = {:.9})", res.row(0, 0).xi_hat, (-0.1f64).exp());
    Ok(())
}
