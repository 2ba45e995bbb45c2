//! Exact discrete-time ground truth on a binomial lattice.
//!
//! The noise is a random walk with increments `±√Δt_i`, the state follows
//! the Euler recursion `x_{i+1} = x_i + (A x_i + b u_i) Δt_i`, and one control
//! vector is chosen per lattice node. The adapted, equality-constrained
//! problem is assembled as a dense KKT system and solved directly.
//!
//! Paths are numbered `0..2^N` and read as bit strings: the top `i` bits of
//! `p` identify its level-`i` node, and bit `N-1-i` selects the sign of the
//! increment on step `i`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::mathcore::{mat_exp, solve_spd, MathError};
use crate::replicator::{ReplicatorError, RiccatiWeights, SystemSpec};
use crate::sde::{SdeError, TimeGrid};
use crate::weights::PenaltyWeight;

pub const MAX_DEPTH: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("lattice depth {depth} exceeds the limit of {max}")]
    DepthTooLarge { depth: usize, max: usize },
    #[error("target differs between sibling paths {path} and {sibling}: it is not known one step before the horizon, so the constraints are rank deficient")]
    RankDeficient { path: usize, sibling: usize },
    #[error("KKT system is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Grid(#[from] SdeError),
    #[error(transparent)]
    Replicator(#[from] ReplicatorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    grid: TimeGrid,
}

impl Lattice {
    pub fn new(grid: TimeGrid) -> Result<Self, OracleError> {
        if grid.steps() > MAX_DEPTH {
            return Err(OracleError::DepthTooLarge { depth: grid.steps(), max: MAX_DEPTH });
        }
        Ok(Lattice { grid })
    }

    pub fn depth(&self) -> usize {
        self.grid.steps()
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn paths(&self) -> usize {
        1 << self.depth()
    }
    pub fn nodes_at(&self, level: usize) -> usize {
        1 << level
    }
    /// Decision nodes on levels `0..N`.
    pub fn decision_nodes(&self) -> usize {
        self.paths() - 1
    }

    /// Global index of the level-`i` node on path `p`.
    pub fn node(&self, level: usize, path: usize) -> usize {
        (1 << level) - 1 + (path >> (self.depth() - level))
    }

    /// `ξ_i` on path `p`.
    pub fn increment(&self, step: usize, path: usize) -> f64 {
        let sd = self.grid.dt(step).sqrt();
        if (path >> (self.depth() - 1 - step)) & 1 == 1 {
            sd
        } else {
            -sd
        }
    }

    /// Walk value `Σ_{j<i} ξ_j` on path `p`.
    pub fn walk(&self, level: usize, path: usize) -> f64 {
        (0..level).map(|j| self.increment(j, path)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct OracleProblem {
    lattice: Lattice,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x0: DVector<f64>,
    /// `Γ_i` per level.
    gammas: Vec<DMatrix<f64>>,
    /// `f` per path.
    targets: Vec<DVector<f64>>,
}

impl OracleProblem {
    pub fn new<F>(
        lattice: Lattice,
        system: &SystemSpec,
        gammas: Vec<DMatrix<f64>>,
        target: F,
    ) -> Result<Self, OracleError>
    where
        F: Fn(&Lattice, usize) -> DVector<f64>,
    {
        let n = system.n();
        if gammas.len() != lattice.depth() || gammas.iter().any(|g| g.shape() != (n, n)) {
            return Err(OracleError::Dimension(format!("need {} weight matrices of size {n}x{n}", lattice.depth())));
        }
        let targets: Vec<DVector<f64>> = (0..lattice.paths()).map(|p| target(&lattice, p)).collect();
        if targets.iter().any(|f| f.len() != n) {
            return Err(OracleError::Dimension(format!("targets must have dimension {n}")));
        }
        Ok(OracleProblem {
            lattice,
            a: system.a().clone(),
            b: system.b().clone(),
            x0: system.x0().clone(),
            gammas,
            targets,
        })
    }

    /// `Γ_i = G Δt_i / ∫_{t_i}^{t_{i+1}} g⁻¹`, so that `Γ_i⁻¹ Δt_i` equals the
    /// exact step integral of `Γ⁻¹`.
    pub fn cell_matched_gammas(weight: &PenaltyWeight, grid: &TimeGrid) -> Vec<DMatrix<f64>> {
        (0..grid.steps())
            .map(|i| weight.g_matrix() * (grid.dt(i) / weight.integrated_g_inv(grid.t(i), grid.t(i + 1))))
            .collect()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    pub fn n(&self) -> usize {
        self.x0.len()
    }
    pub fn target(&self, path: usize) -> &DVector<f64> {
        &self.targets[path]
    }
    pub fn gamma(&self, level: usize) -> &DMatrix<f64> {
        &self.gammas[level]
    }

    fn step_map(&self, i: usize) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::identity(n, n) + &self.a * self.lattice.grid.dt(i)
    }

    /// `M_i = Π_{j>i} (I + A Δt_j)`, the effect of `x_{i+1}` on `x_N`.
    fn tail_maps(&self) -> Vec<DMatrix<f64>> {
        let depth = self.lattice.depth();
        let n = self.n();
        let mut maps = vec![DMatrix::identity(n, n); depth];
        for i in (0..depth.saturating_sub(1)).rev() {
            maps[i] = &maps[i + 1] * self.step_map(i + 1);
        }
        maps
    }

    fn free_terminal(&self) -> DVector<f64> {
        let mut x = self.x0.clone();
        for i in 0..self.lattice.depth() {
            x = self.step_map(i) * x;
        }
        x
    }

    /// Euler terminal states of every path under `controls` (one per node).
    pub fn terminal_states(&self, controls: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let lat = &self.lattice;
        (0..lat.paths())
            .map(|p| {
                let mut x = self.x0.clone();
                for i in 0..lat.depth() {
                    let u = &controls[lat.node(i, p)];
                    x = &x + (&self.a * &x + &self.b * u) * lat.grid.dt(i);
                }
                x
            })
            .collect()
    }

    /// `E Σ_i u_iᵀ Γ_i u_i Δt_i`
    pub fn cost(&self, controls: &[DVector<f64>]) -> f64 {
        let lat = &self.lattice;
        let mut total = 0.0;
        for i in 0..lat.depth() {
            let prob = 1.0 / lat.nodes_at(i) as f64;
            for k in 0..lat.nodes_at(i) {
                let u = &controls[(1 << i) - 1 + k];
                total += prob * (u.transpose() * &self.gammas[i] * u)[(0, 0)] * lat.grid.dt(i);
            }
        }
        total
    }

    /// `max_p |x_N(p) - f(p)|`
    pub fn feasibility(&self, controls: &[DVector<f64>]) -> f64 {
        self.terminal_states(controls).iter().zip(&self.targets).map(|(x, f)| (x - f).amax()).fold(0.0, f64::max)
    }

    /// Constraint rows, one block per pair of sibling paths.
    fn constraints(&self) -> Result<(DMatrix<f64>, DVector<f64>), OracleError> {
        let lat = &self.lattice;
        let n = self.n();
        let depth = lat.depth();
        for p in (0..lat.paths()).step_by(2) {
            if (&self.targets[p] - &self.targets[p + 1]).amax() != 0.0 {
                return Err(OracleError::RankDeficient { path: p, sibling: p + 1 });
            }
        }
        let maps = self.tail_maps();
        let free = self.free_terminal();
        let groups = lat.paths() / 2;
        let vars = lat.decision_nodes() * n;
        let mut c = DMatrix::zeros(groups * n, vars);
        let mut d = DVector::zeros(groups * n);
        for g in 0..groups {
            let p = 2 * g;
            for i in 0..depth {
                let block = &maps[i] * &self.b * lat.grid.dt(i);
                let col = lat.node(i, p) * n;
                c.view_mut((g * n, col), (n, n)).copy_from(&block);
            }
            d.rows_mut(g * n, n).copy_from(&(&self.targets[p] - &free));
        }
        Ok((c, d))
    }

    /// Hessian of the cost, block diagonal with `2 Γ_i Δt_i / 2^i`.
    fn hessian_blocks(&self) -> Vec<DMatrix<f64>> {
        let lat = &self.lattice;
        (0..lat.depth()).map(|i| &self.gammas[i] * (2.0 * lat.grid.dt(i) / lat.nodes_at(i) as f64)).collect()
    }

    fn level_of(node: usize) -> usize {
        (usize::BITS - 1 - (node + 1).leading_zeros()) as usize
    }

    fn split(&self, flat: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.n();
        (0..self.lattice.decision_nodes()).map(|k| flat.rows(k * n, n).into_owned()).collect()
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OracleSolution {
    #[serde(skip)]
    pub controls: Vec<DVector<f64>>,
    #[serde(skip)]
    pub multipliers: DVector<f64>,
    pub cost: f64,
    pub kkt_residual: f64,
    pub feasibility: f64,
}

/// Minimises `E Σ u_iᵀ Γ_i u_i Δt_i` subject to `x_N = f` on every path.
pub fn solve_constrained_lq(prob: &OracleProblem) -> Result<OracleSolution, OracleError> {
    let (c, d) = prob.constraints()?;
    let n = prob.n();
    let vars = c.ncols();
    let rows = c.nrows();
    let size = vars + rows;
    let mut kkt = DMatrix::zeros(size, size);
    let blocks = prob.hessian_blocks();
    for node in 0..prob.lattice.decision_nodes() {
        let h = &blocks[OracleProblem::level_of(node)];
        kkt.view_mut((node * n, node * n), (n, n)).copy_from(h);
    }
    kkt.view_mut((0, vars), (vars, rows)).copy_from(&c.transpose());
    kkt.view_mut((vars, 0), (rows, vars)).copy_from(&c);
    let mut rhs = DVector::zeros(size);
    rhs.rows_mut(vars, rows).copy_from(&d);
    let sol = kkt.clone().lu().solve(&rhs).ok_or(OracleError::Singular)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(OracleError::Singular);
    }
    let kkt_residual = (&kkt * &sol - &rhs).amax();
    let u = sol.rows(0, vars).into_owned();
    let controls = prob.split(&u);
    Ok(OracleSolution {
        cost: prob.cost(&controls),
        feasibility: prob.feasibility(&controls),
        multipliers: sol.rows(vars, rows).into_owned(),
        controls,
        kkt_residual,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SoftSolution {
    #[serde(skip)]
    pub controls: Vec<DVector<f64>>,
    pub cost: f64,
    /// `E |x_N - f|²`
    pub residual: f64,
}

/// Minimises `cost + λ E |x_N - f|²`; defined for any target.
pub fn solve_soft(prob: &OracleProblem, lambda: f64) -> Result<SoftSolution, OracleError> {
    let lat = &prob.lattice;
    let n = prob.n();
    let vars = lat.decision_nodes() * n;
    let maps = prob.tail_maps();
    let free = prob.free_terminal();
    let mut h = DMatrix::zeros(vars, vars);
    let blocks = prob.hessian_blocks();
    for node in 0..lat.decision_nodes() {
        h.view_mut((node * n, node * n), (n, n)).copy_from(&blocks[OracleProblem::level_of(node)]);
    }
    let mut g = DVector::zeros(vars);
    let weight = 2.0 * lambda / lat.paths() as f64;
    let mut row = DMatrix::zeros(n, vars);
    for p in 0..lat.paths() {
        row.fill(0.0);
        for i in 0..lat.depth() {
            let block = &maps[i] * &prob.b * lat.grid.dt(i);
            row.view_mut((0, lat.node(i, p) * n), (n, n)).copy_from(&block);
        }
        h += row.transpose() * &row * weight;
        g += row.transpose() * (&prob.targets[p] - &free) * weight;
    }
    let u = solve_spd(&crate::mathcore::symmetrize(&h), &DMatrix::from_column_slice(vars, 1, g.as_slice()))?;
    let controls = prob.split(&DVector::from_column_slice(u.as_slice()));
    let residual =
        prob.terminal_states(&controls).iter().zip(&prob.targets).map(|(x, f)| (x - f).norm_squared()).sum::<f64>()
            / lat.paths() as f64;
    Ok(SoftSolution { cost: prob.cost(&controls), residual, controls })
}

/// Feasible controls `z + Cᵀ(CCᵀ)⁻¹(d - Cz)` from random `z`, projected
/// through a QR factorisation of `Cᵀ`.
pub fn random_feasible<R: Rng>(
    prob: &OracleProblem,
    rng: &mut R,
    count: usize,
) -> Result<Vec<Vec<DVector<f64>>>, OracleError> {
    let (c, d) = prob.constraints()?;
    let qr = c.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    if (0..r.nrows()).any(|i| r[(i, i)] == 0.0) {
        return Err(OracleError::Singular);
    }
    let rt = r.transpose();
    let project = |res: DVector<f64>| -> DVector<f64> {
        let y = rt.solve_lower_triangular(&res).expect("nonzero diagonal");
        &q * y
    };
    Ok((0..count)
        .map(|_| {
            let mut u = DVector::from_iterator(c.ncols(), (0..c.ncols()).map(|_| rng.sample::<f64, _>(StandardNormal)));
            for _ in 0..2 {
                u += project(&d - &c * &u);
            }
            prob.split(&u)
        })
        .collect())
}

/// The closed-form feedback control on the lattice: `μ̂` advanced by
/// `R(t_i)⁻¹ K ξ_i` before the last step, `u_i = Γ_i⁻¹ bᵀ e^{Aᵀ(T-t_i)} μ̂_i`,
/// and a final correction `u_{N-1} += (b Δt_{N-1})⁻¹ (f - x_N)` that restores feasibility.
pub fn projected_formula_control(
    prob: &OracleProblem,
    riccati: &RiccatiWeights,
    loading: &DMatrix<f64>,
) -> Result<Vec<DVector<f64>>, OracleError> {
    let lat = &prob.lattice;
    let n = prob.n();
    if loading.shape() != (n, 1) {
        return Err(OracleError::Dimension(format!("loading must be {n}x1")));
    }
    if riccati.grid() != lat.grid() {
        return Err(OracleError::Dimension("Riccati cache and lattice use different grids".into()));
    }
    let depth = lat.depth();
    let horizon = lat.grid().horizon();
    let mean = (0..lat.paths()).fold(DVector::zeros(n), |acc, p| acc + &prob.targets[p]) / lat.paths() as f64;
    let gap = DMatrix::from_column_slice(n, 1, (mean - prob.free_terminal()).as_slice());
    let mu_bar = DVector::from_column_slice(solve_spd(riccati.r_node(0), &gap)?.as_slice());
    let eye = DMatrix::identity(n, n);
    let mut gains = Vec::with_capacity(depth);
    let mut factors = Vec::with_capacity(depth);
    for i in 0..depth {
        let e = mat_exp(&prob.a, horizon - lat.grid().t(i))?;
        let gamma_inv = solve_spd(&prob.gammas[i], &eye)?;
        gains.push(gamma_inv * prob.b.transpose() * e.transpose());
        factors.push(solve_spd(riccati.r_node(i), loading)?);
    }
    let b_last = &prob.b * lat.grid().dt(depth - 1);
    let b_last_lu = b_last.lu();
    let mut controls = vec![DVector::zeros(n); lat.decision_nodes()];
    for p in (0..lat.paths()).step_by(2) {
        let mut mu = mu_bar.clone();
        let mut x = prob.x0.clone();
        for i in 0..depth {
            let u = &gains[i] * &mu;
            x = &x + (&prob.a * &x + &prob.b * &u) * lat.grid().dt(i);
            controls[lat.node(i, p)] = u;
            if i + 1 < depth - 1 {
                mu += &factors[i] * lat.increment(i, p);
            }
        }
        let fix = b_last_lu.solve(&(&prob.targets[p] - &x)).ok_or(OracleError::Singular)?;
        controls[lat.node(depth - 1, p)] += fix;
    }
    Ok(controls)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Comparison {
    pub depth: usize,
    pub oracle_cost: f64,
    pub formula_cost: f64,
    #[serde(rename = "closed_form_J*")]
    pub closed_form: f64,
    pub gap: f64,
    pub kkt_residual: f64,
    pub feasibility: f64,
}

/// Lattice optimum for the target `offset + loading · w(t_{N-1})` against the
/// continuous optimum `j_star` for `offset + loading · w(T)`, at each depth.
pub fn oracle_vs_formula(
    system: &SystemSpec,
    weight: &PenaltyWeight,
    offset: &DVector<f64>,
    loading: &DMatrix<f64>,
    depths: &[usize],
    j_star: f64,
) -> Result<Vec<Comparison>, OracleError> {
    let mut out = Vec::with_capacity(depths.len());
    for &depth in depths {
        if depth > MAX_DEPTH {
            return Err(OracleError::DepthTooLarge { depth, max: MAX_DEPTH });
        }
        let grid = lattice_grid(depth, weight)?;
        let lattice = Lattice::new(grid.clone())?;
        let gammas = OracleProblem::cell_matched_gammas(weight, &grid);
        let prob = OracleProblem::new(lattice, system, gammas, |lat, p| {
            offset + loading * lat.walk(depth.saturating_sub(1), p)
        })?;
        let sol = solve_constrained_lq(&prob)?;
        let riccati = RiccatiWeights::build(system, weight, &grid)?;
        let formula = projected_formula_control(&prob, &riccati, loading)?;
        out.push(Comparison {
            depth,
            oracle_cost: sol.cost,
            formula_cost: prob.cost(&formula),
            closed_form: j_star,
            gap: (sol.cost - j_star).abs(),
            kkt_residual: sol.kkt_residual,
            feasibility: sol.feasibility,
        });
    }
    Ok(out)
}

/// Graded grid matched to the weight; a single step when `depth = 1`.
pub fn lattice_grid(depth: usize, weight: &PenaltyWeight) -> Result<TimeGrid, OracleError> {
    if depth == 0 {
        return Err(OracleError::Dimension("depth must be at least 1".into()));
    }
    if depth > MAX_DEPTH {
        return Err(OracleError::DepthTooLarge { depth, max: MAX_DEPTH });
    }
    Ok(if depth == 1 {
        TimeGrid::from_nodes(vec![0.0, weight.horizon()])?
    } else {
        TimeGrid::for_weight(depth, weight)?
    })
}
