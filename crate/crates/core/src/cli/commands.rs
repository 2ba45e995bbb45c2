use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{Application, Config};
use super::report::{self, write_json, SCHEMA};
use super::CliError;
use crate::finance::{bond_curve, family_name, ShortRateResult};
use crate::kernels::{Payoff, PayoffFamily};
use crate::oracle::{oracle_vs_formula, Comparison};
use crate::replicator::{
    admissibility_report, loewner_check, martingale_check, min_cost_closed_form, perturbation_check,
    random_zero_replicating, run_ensemble, ReplicationRun, RiccatiWeights, RunOptions, Scheme, StepPlan, SystemSpec,
};
use crate::sde::{fmt_f64, PathEnsemble, TimeGrid};
use crate::stats::Estimate;
use crate::weights::PenaltyWeight;

/// Standard errors allowed by the statistical checks.
pub const SE_BAND: f64 = 3.0;
/// Relative slack on the closed-form cost for deterministic targets.
pub const COST_FLOOR: f64 = 1e-6;
/// Absolute slack on the constraint term.
pub const CONSTRAINT_FLOOR: f64 = 1e-9;
/// Largest terminal RMSE accepted for deterministic targets.
pub const DETERMINISTIC_RESIDUAL: f64 = 1e-3;
pub const KKT_TOLERANCE: f64 = 1e-8;
pub const PERTURBATIONS: usize = 20;
pub const EPSILONS: [f64; 4] = [-0.5, -0.1, 0.1, 0.5];
/// Seed of the perturbation directions, independent of the path seed.
const PERTURBATION_SEED: u64 = 0x5eed;

fn timed<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    eprintln!("{label}: {:.3} s", start.elapsed().as_secs_f64());
    out
}

/// The system and target a replication run uses.
fn scenario(cfg: &Config) -> Result<(SystemSpec, Payoff), CliError> {
    match &cfg.application {
        Some(Application::Cash(plan)) | Some(Application::Dividend { plan, .. }) => {
            Ok((plan.system().clone(), plan.payoff().clone()))
        }
        Some(Application::Bonds(_)) => {
            Err(CliError::Validation("bond curves are run with the `bonds` subcommand".into()))
        }
        None => Ok((cfg.system()?.clone(), cfg.payoff()?.clone())),
    }
}

/// The Riccati cache of the scenario weight and the plan actually simulated,
/// whose multipliers come from `simulation.riccati_alpha` when set.
fn plans(cfg: &Config, system: &SystemSpec, grid: &TimeGrid) -> Result<(RiccatiWeights, StepPlan), CliError> {
    let riccati = RiccatiWeights::build(system, &cfg.weight, grid)?;
    let plan = match cfg.simulation.riccati_alpha {
        None => StepPlan::new(&riccati, cfg.simulation.scheme)?,
        Some(alpha) => {
            let w = &cfg.weight;
            let dual_weight = PenaltyWeight::new(w.kind(), alpha, w.horizon(), w.g_matrix().clone())
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let dual = RiccatiWeights::build(system, &dual_weight, grid)?;
            StepPlan::with_simulation_weight(&dual, &riccati, cfg.simulation.scheme)?
        }
    };
    Ok((riccati, plan))
}

fn simulate(
    cfg: &Config,
    system: &SystemSpec,
    payoff: &Payoff,
    steps: usize,
    retain: usize,
) -> Result<Simulated, CliError> {
    let grid = cfg.grid(steps)?;
    let (riccati, plan) = timed(&format!("riccati weights (N={steps})"), || plans(cfg, system, &grid))?;
    let ensemble = PathEnsemble::new(grid, cfg.simulation.paths, payoff.noise_dim(), cfg.simulation.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let run = timed(&format!("simulation (N={steps}, M={})", cfg.simulation.paths), || {
        run_ensemble(&plan, payoff, &ensemble, RunOptions { retain })
    })?;
    Ok(Simulated { riccati, plan, ensemble, run })
}

struct Simulated {
    riccati: RiccatiWeights,
    plan: StepPlan,
    ensemble: PathEnsemble,
    run: ReplicationRun,
}

#[derive(Serialize)]
struct ReplicateSummary<'a> {
    schema: u32,
    command: &'static str,
    fingerprint: &'a str,
    seed: u64,
    scheme: Scheme,
    paths: usize,
    steps: usize,
    grading: f64,
    application: Option<&'static str>,
    target: &'static str,
    target_mean: Vec<f64>,
    mu_bar: Vec<f64>,
    #[serde(rename = "closed_form_J*")]
    closed_form: f64,
    cost: Estimate,
    residual_rmse: f64,
    constraint: Estimate,
    lagrangian: Estimate,
    stationarity: f64,
    weighted_energy: Estimate,
    l1_squared: Estimate,
    accumulated: Option<Estimate>,
}

pub fn replicate(cfg: &Config) -> Result<(), CliError> {
    let (system, payoff) = scenario(cfg)?;
    let sim = simulate(cfg, &system, &payoff, cfg.simulation.steps, cfg.retain)?;
    let j_star = timed("closed-form cost", || min_cost_closed_form(&sim.riccati, &payoff))?;
    let run = &sim.run;
    let adm = admissibility_report(run);
    let accumulated = match cfg.application {
        Some(Application::Cash(_) | Application::Dividend { .. }) => Some(Estimate::from_samples(&run.terminal)),
        _ => None,
    };
    let summary = ReplicateSummary {
        schema: SCHEMA,
        command: "replicate",
        fingerprint: &cfg.fingerprint,
        seed: cfg.simulation.seed,
        scheme: cfg.simulation.scheme,
        paths: cfg.simulation.paths,
        steps: cfg.simulation.steps,
        grading: cfg.simulation.grading,
        application: cfg.application.as_ref().map(Application::name),
        target: family_name(payoff.family()),
        target_mean: payoff.mean().iter().copied().collect(),
        mu_bar: run.mu_bar.iter().copied().collect(),
        closed_form: j_star,
        cost: run.cost(),
        residual_rmse: run.residual_rmse(),
        constraint: run.constraint(),
        lagrangian: run.lagrangian(),
        stationarity: run.stationarity(),
        weighted_energy: adm.weighted_energy,
        l1_squared: adm.l1_squared,
        accumulated,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    report::write_paths_csv(&cfg.out_dir.join("paths.csv"), run)?;
    report::write_trajectories_csv(&cfg.out_dir.join("trajectories.csv"), run)?;
    println!(
        "mu_bar = {}  J* = {}  cost = {} +/- {}  residual RMSE = {}",
        fmt_vec(&summary.mu_bar),
        fmt_f64(j_star),
        fmt_f64(summary.cost.mean),
        fmt_f64(summary.cost.se),
        fmt_f64(summary.residual_rmse)
    );
    Ok(())
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| fmt_f64(*x)).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.to_string(), passed, detail }
    }
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    schema: u32,
    command: &'static str,
    fingerprint: &'a str,
    seed: u64,
    scheme: Scheme,
    paths: usize,
    steps: usize,
    ladder: &'a [usize],
    ladder_rmse: Vec<f64>,
    #[serde(rename = "closed_form_J*")]
    closed_form: f64,
    cost: Estimate,
    checks: &'a [Check],
}

pub fn verify(cfg: &Config) -> Result<(), CliError> {
    let (system, payoff) = scenario(cfg)?;
    let deterministic = payoff.is_deterministic();
    let sim = simulate(cfg, &system, &payoff, cfg.simulation.steps, 0)?;
    let j_star = min_cost_closed_form(&sim.riccati, &payoff)?;
    let run = &sim.run;
    let mut checks = Vec::new();

    let loewner = loewner_check(&sim.riccati);
    checks.push(Check::new(
        "R decreasing in the Loewner order",
        loewner.passes,
        format!("smallest step eigenvalue {:e}", loewner.min_eigenvalue),
    ));

    let cost = run.cost();
    checks.push(Check::new(
        "cost consistency",
        cost.within(j_star, SE_BAND, COST_FLOOR * j_star.abs().max(1.0)),
        format!("MC cost {} +/- {} against closed form {}", cost.mean, cost.se, j_star),
    ));

    if deterministic {
        let mut spread: f64 = 0.0;
        for i in 0..=run.grid.steps() {
            for k in 0..run.n {
                let node = run.mu_node(i, k);
                spread = spread.max((node.mean - run.mu_bar[k]).abs()).max(node.se);
            }
        }
        let tol = 1e-12 * run.mu_bar.amax().max(1.0);
        checks.push(Check::new("μ̂ constant", spread <= tol, format!("largest deviation {spread:e}")));
    } else {
        let mart = martingale_check(run, SE_BAND);
        checks.push(Check::new(
            "μ̂ martingale",
            mart.passes,
            format!("worst |z| = {:.3} at node {}", mart.worst_z, mart.worst_node),
        ));
    }

    let constraint = run.constraint();
    checks.push(Check::new(
        "constraint term vanishes",
        constraint.within(0.0, SE_BAND, CONSTRAINT_FLOOR),
        format!("E μ̂(T)ᵀ(f - x(T)) = {} +/- {}", constraint.mean, constraint.se),
    ));
    let lagrangian = run.lagrangian();
    checks.push(Check::new(
        "Lagrangian equals half the cost",
        lagrangian.within(0.5 * cost.mean, SE_BAND, CONSTRAINT_FLOOR),
        format!("L = {} +/- {}, cost / 2 = {}", lagrangian.mean, lagrangian.se, 0.5 * cost.mean),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(PERTURBATION_SEED);
    let factor = (!deterministic).then_some(0);
    let perts = (0..PERTURBATIONS)
        .map(|_| random_zero_replicating(&sim.plan, &mut rng, factor))
        .collect::<Result<Vec<_>, _>>()?;
    let outcomes = timed("perturbation check", || {
        perturbation_check(&sim.plan, &payoff, &sim.ensemble, &perts, &EPSILONS, SE_BAND)
    })?;
    let failed = outcomes.iter().filter(|o| !o.passes).count();
    let worst = outcomes.iter().map(|o| o.change.mean).fold(f64::INFINITY, f64::min);
    checks.push(Check::new(
        "perturbation optimality",
        failed == 0,
        format!("{failed} of {} cost changes negative beyond tolerance; smallest change {worst:e}", outcomes.len()),
    ));

    let adm = admissibility_report(run);
    let finite = adm.weighted_energy.mean.is_finite() && adm.l1_squared.mean.is_finite();
    checks.push(Check::new(
        "admissibility",
        finite,
        format!("E ∫ g|û|² = {}, E(∫|û|)² = {}", adm.weighted_energy.mean, adm.l1_squared.mean),
    ));

    let mut ladder_rmse = Vec::with_capacity(cfg.simulation.ladder.len());
    for &steps in &cfg.simulation.ladder {
        let rung = if steps == cfg.simulation.steps {
            run.residual_rmse()
        } else {
            simulate(cfg, &system, &payoff, steps, 0)?.run.residual_rmse()
        };
        ladder_rmse.push(rung);
    }
    let detail = format!("{:?} over N = {:?}", ladder_rmse, cfg.simulation.ladder);
    if deterministic {
        let ok = ladder_rmse.iter().all(|r| *r <= DETERMINISTIC_RESIDUAL);
        checks.push(Check::new("terminal constraint met on every grid", ok, detail));
    } else {
        let ok = ladder_rmse.windows(2).all(|w| w[1] < w[0]);
        checks.push(Check::new("residual RMSE strictly decreasing", ok, detail));
    }

    for c in &checks {
        println!("{}: {}  ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
    }
    let summary = VerifySummary {
        schema: SCHEMA,
        command: "verify",
        fingerprint: &cfg.fingerprint,
        seed: cfg.simulation.seed,
        scheme: cfg.simulation.scheme,
        paths: cfg.simulation.paths,
        steps: cfg.simulation.steps,
        ladder: &cfg.simulation.ladder,
        ladder_rmse,
        closed_form: j_star,
        cost,
        checks: &checks,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("verify.json"), &summary)?;
    let failures: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failures.join(", ")))
    }
}

#[derive(Serialize)]
struct OracleSummary<'a> {
    schema: u32,
    command: &'static str,
    fingerprint: &'a str,
    #[serde(rename = "closed_form_J*")]
    closed_form: f64,
    comparisons: &'a [Comparison],
    gap_non_increasing: bool,
    oracle_below_formula: bool,
    kkt_within_tolerance: bool,
}

pub fn oracle(cfg: &Config) -> Result<(), CliError> {
    if cfg.application.is_some() {
        return Err(CliError::Validation("the oracle runs on plain replication scenarios".into()));
    }
    let system = cfg.system()?;
    let payoff = cfg.payoff()?;
    if system.n() != 1 || system.noise_dim() != 1 {
        return Err(CliError::Validation("the oracle needs a scalar scenario (n = 1, d = 1)".into()));
    }
    let (offset, loading) = match payoff.family() {
        PayoffFamily::Deterministic { value } => (value.clone(), DMatrix::zeros(1, 1)),
        PayoffFamily::LinearWiener { offset, loading } => (offset.clone(), loading.clone()),
        other => {
            return Err(CliError::Validation(format!(
                "the oracle compares deterministic or linear Wiener targets, got {}",
                family_name(other)
            )))
        }
    };
    let riccati = RiccatiWeights::build(system, &cfg.weight, &cfg.grid(cfg.simulation.steps)?)?;
    let j_star = min_cost_closed_form(&riccati, payoff)?;
    let rows = timed("lattice oracle", || {
        oracle_vs_formula(system, &cfg.weight, &DVector::from(offset), &loading, &cfg.depths, j_star)
    })?;
    let slack = 1e-12 * j_star.abs().max(1.0);
    let summary = OracleSummary {
        schema: SCHEMA,
        command: "oracle",
        fingerprint: &cfg.fingerprint,
        closed_form: j_star,
        gap_non_increasing: rows.windows(2).all(|w| w[1].gap <= w[0].gap + slack),
        oracle_below_formula: rows.iter().all(|r| r.oracle_cost <= r.formula_cost + slack),
        kkt_within_tolerance: rows.iter().all(|r| r.kkt_residual <= KKT_TOLERANCE),
        comparisons: &rows,
    };
    println!("depth  oracle_cost              formula_cost             gap                      kkt_residual");
    for r in &rows {
        println!(
            "{:>5}  {}  {}  {}  {}",
            r.depth,
            fmt_f64(r.oracle_cost),
            fmt_f64(r.formula_cost),
            fmt_f64(r.gap),
            fmt_f64(r.kkt_residual)
        );
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("oracle.json"), &summary)?;
    let mut failures = Vec::new();
    if !summary.gap_non_increasing {
        failures.push("gap to J* non-increasing");
    }
    if !summary.oracle_below_formula {
        failures.push("oracle cost below formula cost");
    }
    if !summary.kkt_within_tolerance {
        failures.push("KKT residual");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(failures.join(", ")))
    }
}

#[derive(Serialize)]
struct BondSummary<'a> {
    schema: u32,
    command: &'static str,
    fingerprint: &'a str,
    seed: u64,
    paths: usize,
    maturities: &'a [f64],
    residual_rmse: Vec<f64>,
    telescoping_error: f64,
    prices_in_unit_interval: bool,
    xi_hat: Vec<Estimate>,
    cost: &'a [Estimate],
}

fn write_short_rates(path: &Path, res: &ShortRateResult) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    w.write_record(["path_id", "i", "t_i", "r"])?;
    for (p, rates) in &res.short_rates {
        for (i, r) in rates.iter().enumerate() {
            w.write_record([p.to_string(), i.to_string(), fmt_f64(res.grid.t(i)), fmt_f64(*r)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn bonds(cfg: &Config) -> Result<(), CliError> {
    let Some(Application::Bonds(spec)) = &cfg.application else {
        return Err(CliError::Validation("the bonds subcommand needs application.kind = \"bonds\"".into()));
    };
    let sim = &cfg.simulation;
    let res =
        timed("bond curve", || bond_curve(spec, sim.paths, sim.seed, sim.scheme, RunOptions { retain: cfg.retain }))?;
    let xi_hat = (0..spec.intervals())
        .map(|k| {
            let xs: Vec<f64> = (0..res.paths()).map(|p| res.row(p, k).xi_hat).collect();
            Estimate::from_samples(&xs)
        })
        .collect();
    let summary = BondSummary {
        schema: SCHEMA,
        command: "bonds",
        fingerprint: &cfg.fingerprint,
        seed: sim.seed,
        paths: sim.paths,
        maturities: spec.maturities(),
        residual_rmse: res.residual_rmse(),
        telescoping_error: res.telescoping_error(),
        prices_in_unit_interval: res.prices_in_unit_interval(),
        xi_hat,
        cost: &res.cost,
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(cfg.out_dir.join("bonds.csv"))?);
    res.write_csv(&mut file)?;
    drop(file);
    write_short_rates(&cfg.out_dir.join("short_rates.csv"), &res)?;
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    println!(
        "residual RMSE per interval {:?}, telescoping error {}, prices in (0, 1): {}",
        summary.residual_rmse,
        fmt_f64(summary.telescoping_error),
        summary.prices_in_unit_interval
    );
    if summary.prices_in_unit_interval {
        Ok(())
    } else {
        Err(CliError::Invariant("reconstructed bond prices in (0, 1)".into()))
    }
}
