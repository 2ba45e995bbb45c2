//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails.

use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lq_replicate::finance::{bond_curve, cash_plan, BondCurveSpec, IntervalTarget};
use lq_replicate::kernels::{bs_price_delta, regression_probe, validate_kf, Payoff, PayoffFamily};
use lq_replicate::oracle::oracle_vs_formula;
use lq_replicate::replicator::{
    martingale_check, min_cost_closed_form, perturbation_check, random_zero_replicating, run_ensemble, ReplicationRun,
    RiccatiWeights, RunOptions, Scheme, StepPlan, SystemSpec,
};
use lq_replicate::sde::{Market, PathEnsemble, TimeGrid, Volatility};
use lq_replicate::weights::PenaltyWeight;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

const ALPHA: f64 = 0.75;
const SE_BAND: f64 = 3.0;

// Deterministic unit target.
const UNIT_STEPS: usize = 4096;
const UNIT_MU_TOL: f64 = 1e-12;
const UNIT_COST_TOL: f64 = 1e-3;
const UNIT_TERMINAL_TOL: f64 = 1e-3;
const UNIT_RUNTIME_S: f64 = 5.0;

// Wiener target.
const WIENER_PATHS: usize = 100_000;
const WIENER_STEPS: usize = 1024;
const WIENER_J: f64 = 1.0 / 3.0;
const LADDER: [usize; 3] = [64, 256, 1024];
const LADDER_PATHS: usize = 10_000;
const WIENER_RUNTIME_S: f64 = 60.0;
const SEED: u64 = 7;

// Lattice oracle.
const DEPTHS: [usize; 4] = [4, 6, 8, 10];
const KKT_TOL: f64 = 1e-8;
const ORACLE_RUNTIME_S: f64 = 120.0;
const ORACLE_SLACK: f64 = 1e-12;

// Perturbations.
const PERTURBATIONS: usize = 20;
const EPSILONS: [f64; 4] = [-0.5, -0.1, 0.1, 0.5];
const PERTURBATION_PATHS: usize = 10_000;
const PERTURBATION_STEPS: usize = 256;

// Cash plans.
const CASH_PATHS: usize = 20_000;
const CASH_RATE: f64 = 0.05;
const CALL_VALUE: f64 = 0.039830;
const CALL_VALUE_TOL: f64 = 5e-6;

// Bonds.
const BOND_PATHS: usize = 10_000;
const BOND_STEPS: usize = 256;
const BOND_DETERMINISTIC_TOL: f64 = 1e-3;
const TELESCOPING_RMS_TOL: f64 = 1e-3;
const IDENTITY_TOL: f64 = 1e-12;

// Kernels.
const PROBES: [usize; 5] = [5, 20, 35, 50, 62];
const KERNEL_PATHS: usize = 20_000;

// Reproducibility.
const WORKERS: [usize; 3] = [1, 4, 8];

fn unit_weight() -> PenaltyWeight {
    PenaltyWeight::pure_power(ALPHA, 1.0, 1).expect("valid weight")
}

fn scalar_system() -> SystemSpec {
    SystemSpec::scalar(0.0, 0.0, 1.0).expect("valid system")
}

fn wiener() -> Payoff {
    Payoff::new(
        PayoffFamily::LinearWiener { offset: DVector::zeros(1), loading: DMatrix::from_element(1, 1, 1.0) },
        1.0,
        1,
    )
    .expect("valid payoff")
}

fn unit() -> Payoff {
    Payoff::new(PayoffFamily::Deterministic { value: DVector::from_element(1, 1.0) }, 1.0, 1).expect("valid payoff")
}

fn plan(steps: usize) -> Result<(RiccatiWeights, StepPlan), Box<dyn std::error::Error>> {
    let weight = unit_weight();
    let grid = TimeGrid::for_weight(steps, &weight)?;
    let riccati = RiccatiWeights::build(&scalar_system(), &weight, &grid)?;
    let plan = StepPlan::new(&riccati, Scheme::Exact)?;
    Ok((riccati, plan))
}

fn run(payoff: &Payoff, steps: usize, paths: usize, seed: u64) -> Result<ReplicationRun, Box<dyn std::error::Error>> {
    let (_, p) = plan(steps)?;
    let ensemble = PathEnsemble::new(p.grid().clone(), paths, 1, seed)?;
    Ok(run_ensemble(&p, payoff, &ensemble, RunOptions { retain: 0 })?)
}

fn deterministic_unit_target() -> Outcome {
    let start = Instant::now();
    let (riccati, _) = plan(UNIT_STEPS)?;
    let r = run(&unit(), UNIT_STEPS, 1, SEED)?;
    let elapsed = start.elapsed().as_secs_f64();
    let j_star = min_cost_closed_form(&riccati, &unit())?;
    let mu_err = (r.mu_bar[0] - 0.25).abs();
    let cost_err = (r.cost().mean - 0.25).abs();
    let terminal_err = (r.terminal[0] - 1.0).abs();
    let ok = mu_err <= UNIT_MU_TOL
        && cost_err <= UNIT_COST_TOL
        && (j_star - 0.25).abs() <= UNIT_COST_TOL
        && terminal_err <= UNIT_TERMINAL_TOL
        && elapsed < UNIT_RUNTIME_S;
    Ok((
        ok,
        format!(
            "mu_bar error {mu_err:.1e}, cost error {cost_err:.1e}, |x(T) - 1| = {terminal_err:.1e}, J* = {j_star:.12}, {elapsed:.2} s"
        ),
    ))
}

fn wiener_target() -> Outcome {
    let start = Instant::now();
    let r = run(&wiener(), WIENER_STEPS, WIENER_PATHS, SEED)?;
    let cost = r.cost();
    let cost_ok = cost.within(WIENER_J, SE_BAND, 0.0);
    let mart = martingale_check(&r, SE_BAND);
    let mut rmse = Vec::new();
    for steps in LADDER {
        rmse.push(run(&wiener(), steps, LADDER_PATHS, SEED)?.residual_rmse());
    }
    let decreasing = rmse.windows(2).all(|w| w[1] < w[0]);
    let elapsed = start.elapsed().as_secs_f64();
    let ok = cost_ok && mart.passes && decreasing && elapsed < WIENER_RUNTIME_S;
    Ok((
        ok,
        format!(
            "cost {:.5} +/- {:.5} vs 1/3, worst multiplier |z| {:.2}, residual RMSE {:?}, {elapsed:.1} s",
            cost.mean, cost.se, mart.worst_z, rmse
        ),
    ))
}

fn lattice_oracle() -> Outcome {
    let start = Instant::now();
    let rows = oracle_vs_formula(
        &scalar_system(),
        &unit_weight(),
        &DVector::zeros(1),
        &DMatrix::from_element(1, 1, 1.0),
        &DEPTHS,
        WIENER_J,
    )?;
    let elapsed = start.elapsed().as_secs_f64();
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + ORACLE_SLACK);
    let kkt = rows.iter().map(|r| r.kkt_residual).fold(0.0, f64::max);
    let below = rows.iter().all(|r| r.oracle_cost <= r.formula_cost + ORACLE_SLACK);
    let ok = monotone && kkt <= KKT_TOL && below && elapsed < ORACLE_RUNTIME_S;
    Ok((ok, format!("gaps {gaps:.4?}, max KKT residual {kkt:.1e}, oracle below formula: {below}, {elapsed:.2} s")))
}

fn perturbation_optimality() -> Outcome {
    let mut detail = String::new();
    let mut ok = true;
    for (name, payoff, paths, factor) in [("unit", unit(), 1, None), ("wiener", wiener(), PERTURBATION_PATHS, Some(0))]
    {
        let (_, p) = plan(PERTURBATION_STEPS)?;
        let ensemble = PathEnsemble::new(p.grid().clone(), paths, 1, SEED)?;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        let perts =
            (0..PERTURBATIONS).map(|_| random_zero_replicating(&p, &mut rng, factor)).collect::<Result<Vec<_>, _>>()?;
        let out = perturbation_check(&p, &payoff, &ensemble, &perts, &EPSILONS, SE_BAND)?;
        let failed = out.iter().filter(|o| !o.passes).count();
        let smallest = out.iter().map(|o| o.change.mean).fold(f64::INFINITY, f64::min);
        ok &= failed == 0 && out.len() == PERTURBATIONS * EPSILONS.len();
        let _ = write!(detail, "{name}: {failed}/{} failed, smallest change {smallest:.3e}; ", out.len());
    }
    Ok((ok, detail.trim_end_matches("; ").to_string()))
}

fn duality() -> Outcome {
    let r = run(&wiener(), WIENER_STEPS, WIENER_PATHS, SEED)?;
    let cost = r.cost();
    let lagrangian = r.lagrangian();
    let constraint = r.constraint();
    let ok = lagrangian.within(0.5 * cost.mean, SE_BAND, 0.0) && constraint.within(0.0, SE_BAND, 0.0);
    Ok((
        ok,
        format!(
            "L = {:.6} +/- {:.1e} vs cost/2 = {:.6}; constraint term {:.2e} +/- {:.1e}",
            lagrangian.mean,
            lagrangian.se,
            0.5 * cost.mean,
            constraint.mean,
            constraint.se
        ),
    ))
}

fn cash_accumulation() -> Outcome {
    let weight = unit_weight();
    let market = Market::new(1.0, Volatility::Constant(0.2))?;
    let call_value = 0.5 * bs_price_delta(1.0, 1.0, 0.0, 1.0, 0.2)?.price;
    let pinned = (call_value - CALL_VALUE).abs() <= CALL_VALUE_TOL;
    let mut ok = pinned;
    let mut detail = format!("0.5 H(S(0), 0) = {call_value:.6}; ");
    let cases = [
        ("S(T)", PayoffFamily::GbmTerminal { scale: 1.0, market: market.clone() }, 1.0),
        ("0.5 call", PayoffFamily::EuropeanCall { scale: 0.5, strike: 1.0, market }, call_value),
    ];
    for (name, family, expected) in cases {
        let cp = cash_plan(Payoff::new(family, 1.0, 1)?, &weight, CASH_RATE)?;
        let mut rmse = Vec::new();
        let mut last = None;
        for steps in LADDER {
            let ensemble = PathEnsemble::new(TimeGrid::for_weight(steps, &weight)?, CASH_PATHS, 1, SEED)?;
            let r = cp.run(&ensemble, Scheme::Exact, RunOptions { retain: 0 })?;
            rmse.push(r.residual_rmse());
            last = Some(r.accumulated_mean());
        }
        let acc = last.expect("ladder is not empty");
        let decreasing = rmse.windows(2).all(|w| w[1] < w[0]);
        ok &= decreasing && acc.within(expected, SE_BAND, 0.0);
        let _ = write!(
            detail,
            "{name}: accumulated {:.6} +/- {:.6} vs {expected:.6}, RMSE {:.2e} -> {:.2e} -> {:.2e}; ",
            acc.mean, acc.se, rmse[0], rmse[1], rmse[2]
        );
    }
    Ok((ok, detail.trim_end_matches("; ").to_string()))
}

fn bonds() -> Outcome {
    let weight = unit_weight();
    let lt = IntervalTarget::Lognormal { theta: -3.0, eta: 0.2 };
    let spec = BondCurveSpec::new(vec![1.0, 2.5], vec![lt, lt], weight.clone(), vec![BOND_STEPS, BOND_STEPS])?;
    let res = bond_curve(&spec, BOND_PATHS, SEED, Scheme::Exact, RunOptions { retain: 0 })?;
    let mut identity: f64 = 0.0;
    let mut sq = 0.0;
    let mut count = 0.0;
    for p in 0..res.paths() {
        let (mut sum_f, mut sum_resid) = (0.0, 0.0);
        for k in 0..2 {
            let row = res.row(p, k);
            sum_f += row.f_k;
            sum_resid += row.f_k - row.integral;
            let gap = sum_f + row.xi_hat.ln();
            identity = identity.max((gap - sum_resid).abs());
            sq += gap * gap;
            count += 1.0;
        }
    }
    let rms = (sq / count).sqrt();
    let single =
        BondCurveSpec::new(vec![2.0], vec![IntervalTarget::Deterministic { value: 0.1 }], weight, vec![BOND_STEPS])?;
    let xi = bond_curve(&single, 1, SEED, Scheme::Exact, RunOptions { retain: 0 })?.row(0, 0).xi_hat;
    let xi_err = (xi - (-0.1f64).exp()).abs();
    let ok = res.prices_in_unit_interval()
        && identity <= IDENTITY_TOL
        && rms <= TELESCOPING_RMS_TOL
        && xi_err <= BOND_DETERMINISTIC_TOL;
    Ok((
        ok,
        format!(
            "prices in (0, 1): {}, telescoping RMS {rms:.2e}, identity error {identity:.1e}, deterministic xi error {xi_err:.1e}",
            res.prices_in_unit_interval()
        ),
    ))
}

fn kernels() -> Outcome {
    let market = Market::new(1.5, Volatility::Constant(0.2))?;
    let families = [
        ("deterministic", PayoffFamily::Deterministic { value: DVector::from_element(1, 1.0) }),
        (
            "linear_wiener",
            PayoffFamily::LinearWiener { offset: DVector::zeros(1), loading: DMatrix::from_element(1, 1, 1.0) },
        ),
        ("gbm_terminal", PayoffFamily::GbmTerminal { scale: 1.0, market: market.clone() }),
        ("european_call", PayoffFamily::EuropeanCall { scale: 1.0, strike: 1.5, market: market.clone() }),
        ("asian_average", PayoffFamily::AsianAverage { scale: 1.0, market }),
        ("lognormal_increment", PayoffFamily::LognormalIncrement { theta: -3.0, eta: 0.2, start: 0.0, end: 1.0 }),
    ];
    let ensemble = PathEnsemble::new(TimeGrid::uniform(64, 1.0)?, KERNEL_PATHS, 1, SEED)?;
    let mut ok = true;
    let mut detail = String::new();
    for (name, family) in families {
        let payoff = Payoff::new(family, 1.0, 1)?;
        let probes = regression_probe(&payoff, &ensemble, &PROBES)?;
        let worst = probes.iter().map(|p| p.z.abs()).fold(0.0, f64::max);
        let kf = validate_kf(&payoff, &ensemble, 0.5)?;
        let pass = probes.len() == PROBES.len() && worst <= SE_BAND && kf.sup_estimate.is_finite() && !kf.diverging;
        ok &= pass;
        let _ = write!(detail, "{name} |z| {worst:.2} sup {:.4}; ", kf.sup_estimate);
    }
    Ok((ok, detail.trim_end_matches("; ").to_string()))
}

const REPRO_CONFIG: &str = r#"
[system]
horizon = 1.0

[weight]
alpha = 0.75

[payoff]
family = "linear_wiener"
offset = [0.0]
loading = [[1.0]]

[simulation]
paths = 5000
steps = 256
seed = 7
"#;

const REPRO_BONDS: &str = r#"
[weight]
alpha = 0.75

[application]
kind = "bonds"
maturities = [1.0, 2.5]
targets = [{ kind = "lognormal", theta = -3.0, eta = 0.2 }, { kind = "lognormal", theta = -3.0, eta = 0.2 }]
steps = [64, 64]

[simulation]
paths = 3000
steps = 64
seed = 7
"#;

fn outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, Box<dyn std::error::Error>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<Vec<_>, _>>()?;
    files.sort_by_key(|e| e.file_name());
    files.into_iter().map(|e| Ok((e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path())?))).collect()
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir()?;
    let mut ok = true;
    let mut compared = 0;
    for (label, text, command) in [("replicate", REPRO_CONFIG, "replicate"), ("bonds", REPRO_BONDS, "bonds")] {
        let cfg = tmp.path().join(format!("{label}.toml"));
        std::fs::write(&cfg, text)?;
        let mut reference: Option<Vec<(String, Vec<u8>)>> = None;
        for workers in WORKERS {
            let out = tmp.path().join(format!("{label}-{workers}"));
            let status = Command::new(env!("CARGO_BIN_EXE_lqrep"))
                .arg(command)
                .arg("--config")
                .arg(&cfg)
                .arg("--out")
                .arg(&out)
                .arg("--threads")
                .arg(workers.to_string())
                .output()?;
            ok &= status.status.success();
            let files = outputs(&out)?;
            match &reference {
                None => reference = Some(files),
                Some(r) => {
                    ok &= *r == files;
                    compared += files.len();
                }
            }
        }
    }
    Ok((ok, format!("{compared} files compared byte for byte across {WORKERS:?} workers")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("deterministic unit target", deterministic_unit_target),
        ("Wiener target", wiener_target),
        ("lattice oracle", lattice_oracle),
        ("perturbation optimality", perturbation_optimality),
        ("duality", duality),
        ("cash accumulation", cash_accumulation),
        ("bond curve", bonds),
        ("kernel validation", kernels),
        ("reproducibility", reproducibility),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (passed, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!("acceptance {}: {name}: {} ({detail})", i + 1, if passed { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
