//! TOML scenario files. Every block rejects unknown keys and every
//! validation error names the offending field.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::finance::{cash_plan, dividend_plan, BondCurveSpec, CashPlan, IntervalTarget, DEFAULT_DIVIDEND_PROPORTION};
use crate::kernels::{Payoff, PayoffFamily};
use crate::replicator::{Scheme, SystemSpec};
use crate::sde::{default_grading, Market, TimeGrid, Volatility};
use crate::weights::{PenaltyWeight, WeightError, WeightKind};

pub const DEFAULT_LADDER: [usize; 3] = [64, 256, 1024];
pub const DEFAULT_DEPTHS: [usize; 4] = [4, 6, 8, 10];
pub const DEFAULT_RETAIN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl fmt::Display) -> Self {
        ConfigError { field: field.to_string(), message: message.to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: Option<SystemBlock>,
    weight: WeightBlock,
    payoff: Option<PayoffBlock>,
    market: Option<MarketBlock>,
    simulation: SimulationBlock,
    application: Option<ApplicationBlock>,
    output: Option<OutputBlock>,
    oracle: Option<OracleBlock>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemBlock {
    n: Option<usize>,
    d: Option<usize>,
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<Vec<f64>>>,
    x0: Option<Vec<f64>>,
    horizon: f64,
}

#[derive(Debug, Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "snake_case")]
enum WeightShape {
    PurePower,
    PlateauPower,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightBlock {
    kind: Option<WeightShape>,
    alpha: f64,
    t1: Option<f64>,
    g: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
enum PayoffBlock {
    Deterministic { value: Vec<f64> },
    LinearWiener { offset: Vec<f64>, loading: Vec<Vec<f64>> },
    GbmTerminal { scale: f64 },
    EuropeanCall { scale: f64, strike: f64 },
    AsianAverage { scale: f64 },
    LognormalIncrement { theta: f64, eta: f64, start: Option<f64>, end: Option<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketBlock {
    s0: f64,
    sigma: Option<f64>,
    sigma_levels: Option<Vec<f64>>,
    sigma_breaks: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationBlock {
    paths: usize,
    steps: usize,
    grading: Option<f64>,
    seed: u64,
    scheme: Option<Scheme>,
    ladder: Option<Vec<usize>>,
    /// Builds the multipliers from a different `α` than the simulation;
    /// used to check that the verification suite notices.
    riccati_alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ApplicationBlock {
    Cash { rate: f64 },
    Dividend { proportion: Option<f64> },
    Bonds { maturities: Vec<f64>, targets: Vec<IntervalTarget>, steps: Option<Vec<usize>> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputBlock {
    dir: Option<PathBuf>,
    retain: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleBlock {
    depths: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub paths: usize,
    pub steps: usize,
    pub grading: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub ladder: Vec<usize>,
    pub riccati_alpha: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Application {
    Cash(CashPlan),
    Dividend { plan: CashPlan, proportion: f64 },
    Bonds(BondCurveSpec),
}

impl Application {
    pub fn name(&self) -> &'static str {
        match self {
            Application::Cash(_) => "cash",
            Application::Dividend { .. } => "dividend",
            Application::Bonds(_) => "bonds",
        }
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Config {
    /// SHA-256 of the file contents.
    pub fingerprint: String,
    pub system: Option<SystemSpec>,
    pub weight: PenaltyWeight,
    pub payoff: Option<Payoff>,
    pub simulation: Simulation,
    pub application: Option<Application>,
    pub out_dir: PathBuf,
    pub retain: usize,
    pub depths: Vec<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::new("config", e.message()))?;
        let fingerprint = hex::encode(Sha256::digest(text.as_bytes()));
        build(raw, fingerprint)
    }

    /// Grid with `steps` steps on the scenario horizon.
    pub fn grid(&self, steps: usize) -> Result<TimeGrid, ConfigError> {
        TimeGrid::graded(steps, self.weight.horizon(), self.simulation.grading)
            .map_err(|e| ConfigError::new("simulation.steps", e))
    }

    pub fn system(&self) -> Result<&SystemSpec, ConfigError> {
        self.system.as_ref().ok_or_else(|| ConfigError::new("system", "block is required for this command"))
    }

    pub fn payoff(&self) -> Result<&Payoff, ConfigError> {
        self.payoff.as_ref().ok_or_else(|| ConfigError::new("payoff", "block is required for this command"))
    }
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(ConfigError::new(field, "must be a non-empty rectangular array of rows"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ConfigError::new(field, "entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn shape_check(m: &DMatrix<f64>, shape: (usize, usize), field: &str) -> Result<(), ConfigError> {
    if m.shape() != shape {
        return Err(ConfigError::new(
            field,
            format!("expected {}x{}, got {}x{}", shape.0, shape.1, m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn weight_error(e: WeightError) -> ConfigError {
    let field = match e {
        WeightError::Alpha(_) => "weight.alpha",
        WeightError::Horizon(_) => "system.horizon",
        WeightError::Plateau { .. } => "weight.t1",
        WeightError::NotSpd(_) => "weight.g",
        WeightError::Domain { .. } => "weight",
    };
    ConfigError::new(field, e)
}

fn build(raw: RawConfig, fingerprint: String) -> Result<Config, ConfigError> {
    let is_bonds = matches!(raw.application, Some(ApplicationBlock::Bonds { .. }));
    let is_cash = matches!(raw.application, Some(ApplicationBlock::Cash { .. } | ApplicationBlock::Dividend { .. }));

    // Horizon: the system block, or the first maturity for bond curves.
    let horizon = match (&raw.system, &raw.application) {
        (Some(s), _) => s.horizon,
        (None, Some(ApplicationBlock::Bonds { maturities, .. })) => {
            *maturities.first().ok_or_else(|| ConfigError::new("application.maturities", "must not be empty"))?
        }
        (None, _) => return Err(ConfigError::new("system", "block is required")),
    };
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ConfigError::new("system.horizon", format!("must be positive and finite, got {horizon}")));
    }

    let (n, d) = match &raw.system {
        Some(s) => (s.n.unwrap_or(1), s.d.unwrap_or(1)),
        None => (1, 1),
    };
    if n == 0 {
        return Err(ConfigError::new("system.n", "must be at least 1"));
    }
    if d == 0 {
        return Err(ConfigError::new("system.d", "must be at least 1"));
    }

    let w = &raw.weight;
    let kind = match (w.kind.unwrap_or(WeightShape::PurePower), w.t1) {
        (WeightShape::PurePower, None) => WeightKind::PurePower,
        (WeightShape::PurePower, Some(_)) => {
            return Err(ConfigError::new("weight.t1", "only applies to kind = \"plateau_power\""))
        }
        (WeightShape::PlateauPower, Some(t1)) => WeightKind::PlateauPower { t1 },
        (WeightShape::PlateauPower, None) => return Err(ConfigError::new("weight.t1", "is required for a plateau")),
    };
    let g = match &w.g {
        Some(rows) => {
            let g = matrix(rows, "weight.g")?;
            shape_check(&g, (n, n), "weight.g")?;
            g
        }
        None => DMatrix::identity(n, n),
    };
    let weight = PenaltyWeight::new(kind, w.alpha, horizon, g).map_err(weight_error)?;

    let sim = &raw.simulation;
    if sim.paths == 0 {
        return Err(ConfigError::new("simulation.paths", "must be at least 1"));
    }
    if sim.steps < 2 {
        return Err(ConfigError::new("simulation.steps", format!("must be at least 2, got {}", sim.steps)));
    }
    let grading = sim.grading.unwrap_or_else(|| default_grading(weight.alpha()));
    if !(grading >= 1.0 && grading.is_finite()) {
        return Err(ConfigError::new("simulation.grading", format!("must be at least 1, got {grading}")));
    }
    let ladder = sim.ladder.clone().unwrap_or_else(|| DEFAULT_LADDER.to_vec());
    if ladder.len() < 2 || ladder.iter().any(|&s| s < 2) || ladder.windows(2).any(|p| p[1] <= p[0]) {
        return Err(ConfigError::new(
            "simulation.ladder",
            "needs at least two strictly increasing step counts, each at least 2",
        ));
    }
    if let Some(alpha) = sim.riccati_alpha {
        if !(alpha > 0.5 && alpha < 1.0) {
            return Err(ConfigError::new("simulation.riccati_alpha", format!("must lie in (0.5, 1), got {alpha}")));
        }
    }
    let simulation = Simulation {
        paths: sim.paths,
        steps: sim.steps,
        grading,
        seed: sim.seed,
        scheme: sim.scheme.unwrap_or_default(),
        ladder,
        riccati_alpha: sim.riccati_alpha,
    };

    let market = match &raw.market {
        Some(m) => {
            let vol = match (m.sigma, &m.sigma_levels, &m.sigma_breaks) {
                (Some(s), None, None) => Volatility::Constant(s),
                (None, Some(levels), breaks) => {
                    Volatility::Piecewise { breaks: breaks.clone().unwrap_or_default(), levels: levels.clone() }
                }
                _ => {
                    return Err(ConfigError::new(
                        "market.sigma",
                        "give either sigma or sigma_levels (with optional sigma_breaks)",
                    ))
                }
            };
            Some(Market::new(m.s0, vol).map_err(|e| ConfigError::new("market", e))?)
        }
        None => None,
    };
    let need_market = |field: &str| market.clone().ok_or_else(|| ConfigError::new(field, "needs a [market] block"));

    let system = if is_bonds {
        if raw.system.is_some() {
            return Err(ConfigError::new("system", "bond curves fix the system; remove the block"));
        }
        None
    } else {
        let s = raw.system.as_ref().expect("checked above");
        if is_cash && (s.a.is_some() || s.b.is_some() || s.x0.is_some() || n != 1 || d != 1) {
            return Err(ConfigError::new("system", "cash plans fix A = rate, b = 1, x0 = 0; give only horizon"));
        }
        let a = match &s.a {
            Some(rows) => matrix(rows, "system.a")?,
            None => DMatrix::zeros(n, n),
        };
        shape_check(&a, (n, n), "system.a")?;
        let b = match &s.b {
            Some(rows) => matrix(rows, "system.b")?,
            None => DMatrix::identity(n, n),
        };
        shape_check(&b, (n, n), "system.b")?;
        let x0 = DVector::from_vec(s.x0.clone().unwrap_or_else(|| vec![0.0; n]));
        if x0.len() != n {
            return Err(ConfigError::new("system.x0", format!("expected {n} entries, got {}", x0.len())));
        }
        Some(SystemSpec::new(a, b, x0, horizon, d).map_err(|e| ConfigError::new("system", e))?)
    };

    let payoff = match &raw.payoff {
        None => None,
        Some(p) => {
            let family = match p {
                PayoffBlock::Deterministic { value } => {
                    PayoffFamily::Deterministic { value: DVector::from_vec(value.clone()) }
                }
                PayoffBlock::LinearWiener { offset, loading } => PayoffFamily::LinearWiener {
                    offset: DVector::from_vec(offset.clone()),
                    loading: matrix(loading, "payoff.loading")?,
                },
                PayoffBlock::GbmTerminal { scale } => {
                    PayoffFamily::GbmTerminal { scale: *scale, market: need_market("payoff.family")? }
                }
                PayoffBlock::EuropeanCall { scale, strike } => {
                    PayoffFamily::EuropeanCall { scale: *scale, strike: *strike, market: need_market("payoff.family")? }
                }
                PayoffBlock::AsianAverage { scale } => {
                    PayoffFamily::AsianAverage { scale: *scale, market: need_market("payoff.family")? }
                }
                PayoffBlock::LognormalIncrement { theta, eta, start, end } => PayoffFamily::LognormalIncrement {
                    theta: *theta,
                    eta: *eta,
                    start: start.unwrap_or(0.0),
                    end: end.unwrap_or(horizon),
                },
            };
            let payoff = Payoff::new(family, horizon, d).map_err(|e| ConfigError::new("payoff", e))?;
            if payoff.dim() != n {
                return Err(ConfigError::new(
                    "payoff",
                    format!("target has dimension {}, system.n is {n}", payoff.dim()),
                ));
            }
            Some(payoff)
        }
    };

    let application = match &raw.application {
        None => None,
        Some(ApplicationBlock::Cash { rate }) => {
            let payoff = payoff.clone().ok_or_else(|| ConfigError::new("payoff", "cash plans need a target"))?;
            Some(Application::Cash(
                cash_plan(payoff, &weight, *rate).map_err(|e| ConfigError::new("application.rate", e))?,
            ))
        }
        Some(ApplicationBlock::Dividend { proportion }) => {
            if raw.payoff.is_some() {
                return Err(ConfigError::new("payoff", "dividend plans build their own target; remove the block"));
            }
            let proportion = proportion.unwrap_or(DEFAULT_DIVIDEND_PROPORTION);
            let plan = dividend_plan(need_market("application.kind")?, proportion, &weight)
                .map_err(|e| ConfigError::new("application.proportion", e))?;
            Some(Application::Dividend { plan, proportion })
        }
        Some(ApplicationBlock::Bonds { maturities, targets, steps }) => {
            if raw.payoff.is_some() || raw.market.is_some() {
                return Err(ConfigError::new("payoff", "bond curves take their targets from application.targets"));
            }
            let steps = steps.clone().unwrap_or_else(|| vec![simulation.steps; maturities.len()]);
            let mut prev = 0.0;
            for (k, &t) in maturities.iter().enumerate() {
                if !(t > prev && t.is_finite()) {
                    return Err(ConfigError::new(
                        "application.maturities",
                        format!("must be positive and strictly increasing (entry {} = {t} after {prev})", k + 1),
                    ));
                }
                prev = t;
            }
            if steps.iter().any(|&s| s < 2) {
                return Err(ConfigError::new("application.steps", "each interval needs at least 2 steps"));
            }
            let spec = BondCurveSpec::new(maturities.clone(), targets.clone(), weight.clone(), steps)
                .map_err(|e| ConfigError::new("application.targets", e))?;
            Some(Application::Bonds(spec))
        }
    };

    let (out_dir, retain) = match &raw.output {
        Some(o) => (o.dir.clone().unwrap_or_else(|| PathBuf::from("out")), o.retain.unwrap_or(DEFAULT_RETAIN)),
        None => (PathBuf::from("out"), DEFAULT_RETAIN),
    };
    let depths = raw.oracle.map_or_else(|| DEFAULT_DEPTHS.to_vec(), |o| o.depths);

    Ok(Config { fingerprint, system, weight, payoff, simulation, application, out_dir, retain, depths })
}
