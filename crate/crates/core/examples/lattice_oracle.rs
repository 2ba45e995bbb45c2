//! Exact lattice optimum against the continuous-time optimal cost.

use std::time::Instant;

use lq_replicate::oracle::oracle_vs_formula;
use lq_replicate::replicator::SystemSpec;
use lq_replicate::weights::PenaltyWeight;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let system = SystemSpec::scalar(0.0, 0.0, 1.0)?;
    let weight = PenaltyWeight::pure_power(0.75, 1.0, 1)?;
    let offset = DVector::zeros(1);
    let loading = DMatrix::from_element(1, 1, 1.0);
    let start = Instant::now();
    let rows = oracle_vs_formula(&system, &weight, &offset, &loading, &[4, 6, 8, 10], 1.0 / 3.0)?;
    println!("depth  oracle        formula       |oracle - J*|  kkt");
    for r in &rows {
        println!(
            "{:>5}  {:.10}  {:.10}  {:.3e}      {:.1e}",
            r.depth, r.oracle_cost, r.formula_cost, r.gap, r.kkt_residual
        );
    }
    println!("elapsed {:.2?}", start.elapsed());
    Ok(())
}
