//! Time grids, seeded Wiener-increment ensembles and driftless geometric
//! Brownian motion.
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path id)`,
//! so an ensemble is a pure function of its parameters and can be
//! generated path by path, in any order, on any number of threads.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weights::PenaltyWeight;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("grid needs at least {min} steps, got {got}")]
    TooFewSteps { min: usize, got: usize },
    #[error("grid horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("grading exponent must be >= 1, got {0}")]
    Grading(f64),
    #[error("grid nodes must start at 0 and increase strictly (node {index} = {value})")]
    NotIncreasing { index: usize, value: f64 },
    #[error("ensemble needs at least one path and one noise dimension")]
    EmptyEnsemble,
    #[error("initial price must be positive, got {0}")]
    InitialPrice(f64),
    #[error("volatility must be finite and bounded below by a positive constant: {0}")]
    Volatility(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    grading: f64,
}

/// Smallest admissible last step of a graded grid, relative to the horizon.
pub const MIN_LAST_STEP: f64 = 1e-15;

impl TimeGrid {
    /// `t_i = T (1 - (1 - i/N)^γ)`, with `t_N = T` exactly. The grading is
    /// capped so that `(1/N)^γ` stays above [`MIN_LAST_STEP`]; the value in
    /// effect is reported by [`TimeGrid::grading`].
    pub fn graded(steps: usize, horizon: f64, grading: f64) -> Result<Self, SdeError> {
        if steps < 2 {
            return Err(SdeError::TooFewSteps { min: 2, got: steps });
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SdeError::Horizon(horizon));
        }
        if !(grading >= 1.0 && grading.is_finite()) {
            return Err(SdeError::Grading(grading));
        }
        // keep the last step above a few ulps of the horizon
        let grading = grading.min(MIN_LAST_STEP.ln() / (1.0 / steps as f64).ln());
        let mut nodes: Vec<f64> = (0..=steps)
            .map(|i| {
                let frac = 1.0 - i as f64 / steps as f64;
                horizon * (1.0 - frac.powf(grading))
            })
            .collect();
        nodes[steps] = horizon;
        let grid = TimeGrid { nodes, grading };
        grid.check()?;
        Ok(grid)
    }

    pub fn uniform(steps: usize, horizon: f64) -> Result<Self, SdeError> {
        Self::graded(steps, horizon, 1.0)
    }

    /// Grading `γ = 1/(1-α)` matched to the weight's singular decay.
    pub fn for_weight(steps: usize, weight: &PenaltyWeight) -> Result<Self, SdeError> {
        Self::graded(steps, weight.horizon(), default_grading(weight.alpha()))
    }

    /// Arbitrary strictly increasing nodes starting at zero.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, SdeError> {
        if nodes.len() < 2 {
            return Err(SdeError::TooFewSteps { min: 1, got: nodes.len().saturating_sub(1) });
        }
        let grid = TimeGrid { nodes, grading: 1.0 };
        grid.check()?;
        Ok(grid)
    }

    fn check(&self) -> Result<(), SdeError> {
        if self.nodes[0] != 0.0 {
            return Err(SdeError::NotIncreasing { index: 0, value: self.nodes[0] });
        }
        for (i, w) in self.nodes.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(SdeError::NotIncreasing { index: i + 1, value: w[1] });
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }
    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("non-empty grid")
    }
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }
    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }
    pub fn dt(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }
    pub fn grading(&self) -> f64 {
        self.grading
    }

    /// Index of the node equal to `t` up to a relative tolerance.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon().max(1.0);
        self.nodes.iter().position(|&x| (x - t).abs() <= tol)
    }

    /// Nodes `lo..=hi` shifted so the first one sits at zero.
    pub fn local(&self, lo: usize, hi: usize) -> Result<TimeGrid, SdeError> {
        let origin = self.nodes[lo];
        let mut nodes: Vec<f64> = self.nodes[lo..=hi].iter().map(|t| t - origin).collect();
        nodes[0] = 0.0;
        TimeGrid::from_nodes(nodes)
    }
}

pub fn default_grading(alpha: f64) -> f64 {
    1.0 / (1.0 - alpha)
}

/// Seeded ensemble of Wiener increments, generated lazily per path.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    seed: u64,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, paths: usize, dim: usize, seed: u64) -> Result<Self, SdeError> {
        if paths == 0 || dim == 0 {
            return Err(SdeError::EmptyEnsemble);
        }
        Ok(PathEnsemble { grid, paths, dim, seed })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn paths(&self) -> usize {
        self.paths
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Increments of path `path`, step-major: entry `i * d + k` is `Δw_k` on step `i`.
    pub fn increments(&self, path: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.steps() * self.dim];
        self.fill_increments(path, &mut out);
        out
    }

    pub fn fill_increments(&self, path: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let d = self.dim;
        for i in 0..self.grid.steps() {
            let sd = self.grid.dt(i).sqrt();
            for k in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[i * d + k] = z * sd;
            }
        }
    }

    /// One row per (path, step): `path_id,i,t_i,dw_0,...`.
    pub fn write_csv<W: Write>(&self, out: W, paths: std::ops::Range<usize>) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["path_id".to_string(), "i".into(), "t_i".into()];
        header.extend((0..self.dim).map(|k| format!("dw_{k}")));
        w.write_record(&header)?;
        for p in paths.start..paths.end.min(self.paths) {
            let dw = self.increments(p);
            for i in 0..self.grid.steps() {
                let mut row = vec![p.to_string(), i.to_string(), fmt_f64(self.grid.t(i))];
                row.extend(dw[i * self.dim..(i + 1) * self.dim].iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, the round-trip width of an `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Deterministic volatility `σ(t)`, piecewise constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Volatility {
    Constant(f64),
    /// `levels[j]` applies on `[breaks[j-1], breaks[j])`, with `levels.len() == breaks.len() + 1`.
    Piecewise {
        breaks: Vec<f64>,
        levels: Vec<f64>,
    },
}

impl Volatility {
    fn validate(&self) -> Result<(), SdeError> {
        match self {
            Volatility::Constant(s) => {
                if !(*s > 0.0 && s.is_finite()) {
                    return Err(SdeError::Volatility(format!("level {s}")));
                }
            }
            Volatility::Piecewise { breaks, levels } => {
                if levels.len() != breaks.len() + 1 {
                    return Err(SdeError::Volatility("need one more level than breaks".into()));
                }
                if breaks.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(SdeError::Volatility("breaks must increase".into()));
                }
                if let Some(bad) = levels.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
                    return Err(SdeError::Volatility(format!("level {bad}")));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Volatility::Constant(s) => *s,
            Volatility::Piecewise { breaks, levels } => {
                let j = breaks.partition_point(|b| *b <= t);
                levels[j]
            }
        }
    }

    /// Lower bound `C` with `σ(t) ≥ C`.
    pub fn floor(&self) -> f64 {
        match self {
            Volatility::Constant(s) => *s,
            Volatility::Piecewise { levels, .. } => levels.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    /// `∫ₐᵇ σ(s)² ds`.
    pub fn integrated_variance(&self, a: f64, b: f64) -> f64 {
        match self {
            Volatility::Constant(s) => s * s * (b - a),
            Volatility::Piecewise { breaks, levels } => {
                let mut acc = 0.0;
                let mut lo = a;
                for (j, level) in levels.iter().enumerate() {
                    let hi = breaks.get(j).copied().unwrap_or(f64::INFINITY).min(b);
                    if hi > lo {
                        acc += level * level * (hi - lo);
                        lo = hi;
                    }
                    if lo >= b {
                        break;
                    }
                }
                acc
            }
        }
    }

    /// Root-mean-square volatility over `[a, b]`.
    pub fn rms(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return self.at(a);
        }
        (self.integrated_variance(a, b) / (b - a)).sqrt()
    }
}

/// Asset with `dS = σ(t) S dw` under the pricing measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    s0: f64,
    vol: Volatility,
}

impl Market {
    pub fn new(s0: f64, vol: Volatility) -> Result<Self, SdeError> {
        if !(s0 > 0.0 && s0.is_finite()) {
            return Err(SdeError::InitialPrice(s0));
        }
        vol.validate()?;
        Ok(Market { s0, vol })
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }
    pub fn vol(&self) -> &Volatility {
        &self.vol
    }

    /// Shift the clock: the market seen from `origin` with spot `s0`.
    pub fn shifted(&self, origin: f64, s0: f64) -> Result<Self, SdeError> {
        let vol = match &self.vol {
            Volatility::Constant(s) => Volatility::Constant(*s),
            Volatility::Piecewise { breaks, levels } => {
                Volatility::Piecewise { breaks: breaks.iter().map(|b| b - origin).collect(), levels: levels.clone() }
            }
        };
        Market::new(s0, vol)
    }
}

/// Prices `S(t_0..t_N)` along one path, log-exact stepping on Wiener component 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    pub prices: Vec<f64>,
}

pub fn simulate_gbm(market: &Market, grid: &TimeGrid, dw: &[f64], dim: usize) -> MarketPath {
    let n = grid.steps();
    let mut prices = Vec::with_capacity(n + 1);
    let mut s = market.s0;
    prices.push(s);
    for i in 0..n {
        let sig = market.vol.at(grid.t(i));
        s *= (sig * dw[i * dim] - 0.5 * sig * sig * grid.dt(i)).exp();
        prices.push(s);
    }
    MarketPath { prices }
}

/// GBM paths for a whole ensemble, in path order.
pub fn simulate_gbm_ensemble(market: &Market, ensemble: &PathEnsemble) -> Vec<MarketPath> {
    use rayon::prelude::*;
    (0..ensemble.paths())
        .into_par_iter()
        .map(|p| simulate_gbm(market, ensemble.grid(), &ensemble.increments(p), ensemble.dim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_examples() {
        assert_eq!(TimeGrid::uniform(2, 1.0).unwrap().nodes(), &[0.0, 0.5, 1.0]);
        assert_eq!(TimeGrid::graded(2, 1.0, 4.0).unwrap().nodes(), &[0.0, 0.9375, 1.0]);
        assert_eq!(TimeGrid::uniform(4, 2.0).unwrap().nodes(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(TimeGrid::graded(1, 1.0, 1.0), Err(SdeError::TooFewSteps { min: 2, got: 1 }));
        assert!(TimeGrid::graded(4, 1.0, 0.5).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn grids_hit_horizon_exactly() {
        for n in [2, 3, 7, 64, 1000, 4096] {
            for g in [1.0, 1.5, 4.0, 10.0] {
                let grid = TimeGrid::graded(n, 3.7, g).unwrap();
                assert_eq!(grid.horizon(), 3.7);
                assert!(grid.nodes().windows(2).all(|w| w[1] > w[0]));
            }
        }
    }

    #[test]
    fn default_grading_follows_alpha() {
        let w = PenaltyWeight::pure_power(0.75, 1.0, 1).unwrap();
        assert_eq!(TimeGrid::for_weight(8, &w).unwrap().grading(), 4.0);
    }

    #[test]
    fn ensemble_is_deterministic_and_path_keyed() {
        let grid = TimeGrid::uniform(16, 1.0).unwrap();
        let a = PathEnsemble::new(grid.clone(), 10, 2, 42).unwrap();
        let b = PathEnsemble::new(grid.clone(), 1000, 2, 42).unwrap();
        assert_eq!(a.increments(3), b.increments(3));
        assert_ne!(a.increments(3), a.increments(4));
        let c = PathEnsemble::new(grid, 10, 2, 43).unwrap();
        assert_ne!(a.increments(3), c.increments(3));
    }

    #[test]
    fn ensemble_moments() {
        let grid = TimeGrid::graded(8, 1.0, 2.0).unwrap();
        let m = 100_000;
        let ens = PathEnsemble::new(grid.clone(), m, 1, 9).unwrap();
        let mut sum = vec![0.0; 8];
        let mut sq = vec![0.0; 8];
        for p in 0..m {
            for (i, v) in ens.increments(p).iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..8 {
            let dt = grid.dt(i);
            let mean = sum[i] / m as f64;
            let var = sq[i] / m as f64 - mean * mean;
            assert!(mean.abs() <= 4.0 * (dt / m as f64).sqrt(), "step {i}: mean {mean}");
            assert!((var / dt - 1.0).abs() < 0.05, "step {i}: var ratio {}", var / dt);
        }
    }

    #[test]
    fn near_frozen_market() {
        let grid = TimeGrid::uniform(50, 1.0).unwrap();
        let ens = PathEnsemble::new(grid.clone(), 5, 1, 1).unwrap();
        let mkt = Market::new(2.0, Volatility::Constant(1e-8)).unwrap();
        for p in 0..5 {
            let path = simulate_gbm(&mkt, &grid, &ens.increments(p), 1);
            assert!(path.prices.iter().all(|s| (s / 2.0 - 1.0).abs() < 1e-6));
        }
    }

    #[test]
    fn gbm_first_two_moments() {
        let grid = TimeGrid::uniform(16, 1.0).unwrap();
        let m = 100_000;
        let ens = PathEnsemble::new(grid.clone(), m, 1, 2024).unwrap();
        let mkt = Market::new(1.0, Volatility::Constant(0.2)).unwrap();
        let paths = simulate_gbm_ensemble(&mkt, &ens);
        assert!(paths.iter().all(|p| p.prices.iter().all(|s| *s > 0.0)));
        for node in [4, 8, 16] {
            let xs: Vec<f64> = paths.iter().map(|p| p.prices[node]).collect();
            let mean = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!((mean - 1.0).abs() <= 3.0 * (var / m as f64).sqrt(), "node {node}: {mean}");
        }
        let sq: Vec<f64> = paths.iter().map(|p| p.prices[16].powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / m as f64;
        let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!((mean - 0.04f64.exp()).abs() <= 3.0 * (var / m as f64).sqrt());
    }

    #[test]
    fn piecewise_volatility() {
        let v = Volatility::Piecewise { breaks: vec![0.5], levels: vec![0.1, 0.3] };
        assert_eq!(v.at(0.2), 0.1);
        assert_eq!(v.at(0.5), 0.3);
        assert_relative_eq!(v.integrated_variance(0.0, 1.0), 0.5 * 0.01 + 0.5 * 0.09, epsilon = 1e-15);
        assert_relative_eq!(v.integrated_variance(0.25, 0.75), 0.25 * 0.01 + 0.25 * 0.09, epsilon = 1e-15);
        assert_eq!(v.floor(), 0.1);
        assert!(Market::new(1.0, Volatility::Constant(0.0)).is_err());
        assert!(Market::new(-1.0, Volatility::Constant(0.2)).is_err());
    }
}
