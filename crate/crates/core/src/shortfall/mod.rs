//! Shortfall risk under a capital constraint.
//!
//! `J_k(y)` is the smallest worst-case expected shortfall the seller can reach
//! from node `k` with discounted portfolio value `y`. It is tabulated on a
//! uniform grid over `[0, Y_max]`, interpolated linearly, and computed by the
//! backward recursion
//!
//! ```text
//! J_n(y) = (Ỹ_n − y)^+
//! J_k(y) = min((X̃_k − y)^+, max((Ỹ_k − y)^+, inf_{u ∈ K(y)} p·J_up(y + u a1) + (1 − p)·J_dn(y + u a2)))
//! ```
//!
//! under the objective up-probability `p`. For knock-in contracts `X̃` is the
//! ungated seller leg.

mod grid;

use std::sync::Arc;

use rayon::prelude::*;

use crate::dynkin::{prefix_bits, tree_index, tree_payoffs, Contract, HedgeRule, HedgeStrategy, Mode, PATH_TREE_MAX_STEPS};
use crate::lattice::{step_params, Child, MarketModel, PathPrefix, StateSpace, StepParams};
use crate::payoffs::{gated_discounted, NodePayoffs};
use crate::{Error, Result};

pub use grid::{admissible_interval, AdmissibleInterval, GridConfig};
use grid::{Grid, InnerProblem, Table};

/// Largest `n` accepted by the path-tree shortfall solver; every node keeps
/// an `M`-point table.
pub const PATH_TREE_SHORTFALL_MAX_STEPS: usize = 14;

enum Nodes {
    Tree { buyer: Vec<f64>, seller: Vec<f64> },
    Lattice(StateSpace),
}

impl Nodes {
    fn len(&self, k: usize) -> usize {
        match self {
            Nodes::Tree { .. } => 1 << k,
            Nodes::Lattice(space) => space.len(k),
        }
    }

    fn child(&self, k: usize, i: usize, up: bool) -> Child {
        match self {
            Nodes::Tree { .. } => Child::Index(i | usize::from(up) << k),
            Nodes::Lattice(space) => space.child(k, i, up),
        }
    }

    fn payoffs(&self, k: usize, i: usize) -> NodePayoffs {
        match self {
            Nodes::Tree { buyer, seller } => {
                let at = tree_index(k, i as u64);
                NodePayoffs {
                    buyer: buyer[at],
                    seller: seller[at],
                }
            }
            Nodes::Lattice(space) => space.payoffs(k, i),
        }
    }

    fn walk(&self, signs: &[i8]) -> Child {
        match self {
            Nodes::Tree { .. } => Child::Index(prefix_bits(signs) as usize),
            Nodes::Lattice(space) => space.walk(signs),
        }
    }
}

/// Tabulated `J_k(·)` at every node of the solved problem.
pub struct RiskSurface {
    pub grid_config: GridConfig,
    pub mode: Mode,
    /// Upper end of the grid: the largest payoff leg over reachable nodes.
    pub y_max: f64,
    sp: StepParams,
    contract: Contract,
    grid: Grid,
    nodes: Nodes,
    /// Levels `0..n`, `M` values per state; unreachable states hold zeros.
    tables: Vec<Vec<f64>>,
    reachable: Vec<Vec<bool>>,
}

impl std::fmt::Debug for RiskSurface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RiskSurface")
            .field("mode", &self.mode)
            .field("n", &self.sp.n)
            .field("y_max", &self.y_max)
            .field("grid_config", &self.grid_config)
            .finish_non_exhaustive()
    }
}

impl RiskSurface {
    pub fn steps(&self) -> usize {
        self.sp.n
    }

    pub fn step_params(&self) -> &StepParams {
        &self.sp
    }

    pub fn contract(&self) -> &Contract {
        &self.contract
    }

    /// Grid points `y_0 = 0 < … < y_{M−1} = Y_max`.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid.m).map(|i| self.grid.point(i)).collect()
    }

    /// Spacing `Y_max/(M − 1)` of the grid.
    pub fn resolution(&self) -> f64 {
        self.grid.dy
    }

    /// `J_0(x)`.
    pub fn risk(&self, x: f64) -> f64 {
        self.j_at(&[], x)
    }

    /// `J_k(y)` at the node reached by `signs`.
    pub fn j_at(&self, signs: &[i8], y: f64) -> f64 {
        let k = signs.len();
        match self.nodes.walk(signs) {
            Child::Dead => 0.0,
            Child::Index(i) if k == self.sp.n => Table::Terminal(self.nodes.payoffs(k, i).buyer).eval(y),
            Child::Index(i) => Table::Grid(self.table(k, i), self.grid).eval(y),
        }
    }

    fn table(&self, k: usize, i: usize) -> &[f64] {
        let m = self.grid.m;
        &self.tables[k][i * m..(i + 1) * m]
    }

    /// Stored tables of the reachable states before maturity, with their step.
    pub fn tables(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        (0..self.sp.n).flat_map(move |k| {
            (0..self.nodes.len(k))
                .filter(move |&i| self.reachable[k][i])
                .map(move |i| (k, self.table(k, i)))
        })
    }

    fn child_table(&self, k: usize, i: usize, up: bool) -> Table<'_> {
        let next = self.tables.get(k + 1).map_or(&[][..], Vec::as_slice);
        child_table(&self.nodes, next, self.grid, self.sp.n, k, i, up)
    }

    fn inner(&self, k: usize, i: usize) -> InnerProblem<'_> {
        InnerProblem {
            up: self.child_table(k, i, true),
            dn: self.child_table(k, i, false),
            p: self.sp.p,
            a1: self.sp.a1,
            a2: self.sp.a2,
        }
    }

    /// Minimizing hedge position `u` at every grid point of a node.
    pub fn selectors(&self, signs: &[i8]) -> Vec<f64> {
        let k = signs.len();
        match self.nodes.walk(signs) {
            Child::Index(i) if k < self.sp.n => {
                let inner = self.inner(k, i);
                let mut hint = None;
                (0..self.grid.m)
                    .map(|j| {
                        let (_, u) = inner.solve(self.grid.point(j), &self.sp, &self.grid_config, hint);
                        hint = Some(u);
                        u
                    })
                    .collect()
            }
            _ => vec![0.0; self.grid.m],
        }
    }

    /// Cancellation decision and hedge position at an exact portfolio value.
    pub fn decision(&self, signs: &[i8], y: f64) -> (bool, f64) {
        let k = signs.len();
        let (pay, inner) = match self.nodes.walk(signs) {
            Child::Dead => (self.contract.payoffs_on_path(&self.sp, signs), (0.0, 0.0)),
            Child::Index(i) => {
                let inner = if k < self.sp.n {
                    self.inner(k, i).solve(y, &self.sp, &self.grid_config, None)
                } else {
                    (0.0, 0.0)
                };
                (self.nodes.payoffs(k, i), inner)
            }
        };
        let cancel = (pay.seller - y).max(0.0);
        let exercise = (pay.buyer - y).max(0.0);
        (cancel <= exercise.max(inner.0), inner.1)
    }
}

fn child_table<'a>(
    nodes: &Nodes,
    next: &'a [f64],
    grid: Grid,
    n: usize,
    k: usize,
    i: usize,
    up: bool,
) -> Table<'a> {
    match nodes.child(k, i, up) {
        Child::Dead => Table::Zero,
        Child::Index(c) if k + 1 == n => Table::Terminal(nodes.payoffs(n, c).buyer),
        Child::Index(c) => Table::Grid(&next[c * grid.m..(c + 1) * grid.m], grid),
    }
}

fn reachable_mask(nodes: &Nodes, n: usize) -> Vec<Vec<bool>> {
    match nodes {
        Nodes::Tree { .. } => (0..=n).map(|k| vec![true; 1 << k]).collect(),
        Nodes::Lattice(space) => {
            let mut mask: Vec<Vec<bool>> = (0..=n).map(|k| vec![false; space.len(k)]).collect();
            space.for_each_reachable(|k, i| mask[k][i] = true);
            mask
        }
    }
}

/// Largest discounted buyer or seller leg over the nodes a path can visit
/// before knock-out.
fn largest_leg(nodes: &Nodes, reachable: &[Vec<bool>], sp: &StepParams, contract: &Contract) -> f64 {
    match nodes {
        Nodes::Tree { .. } => (0..1u64 << sp.n)
            .map(|bits| {
                let g = gated_discounted(&contract.family, sp, &PathPrefix::from_bits(bits, sp.n), &contract.barrier)
                    .expect("full path");
                g.y_tilde.iter().chain(&g.x_tilde).fold(0.0f64, |a, &b| a.max(b))
            })
            .fold(0.0, f64::max),
        Nodes::Lattice(_) => reachable
            .iter()
            .enumerate()
            .flat_map(|(k, row)| row.iter().enumerate().filter(|(_, &r)| r).map(move |(i, _)| (k, i)))
            .map(|(k, i)| {
                let p = nodes.payoffs(k, i);
                p.buyer.max(p.seller)
            })
            .fold(0.0, f64::max),
    }
}

fn fill_table(
    out: &mut [f64],
    pay: NodePayoffs,
    inner: &InnerProblem<'_>,
    grid: Grid,
    sp: &StepParams,
    cfg: &GridConfig,
) {
    let mut hint = None;
    for (j, slot) in out.iter_mut().enumerate() {
        let y = grid.point(j);
        let cancel = (pay.seller - y).max(0.0);
        let exercise = (pay.buyer - y).max(0.0);
        if cancel <= exercise {
            *slot = cancel;
            continue;
        }
        // the continuation only matters when it beats the exercise shortfall
        if inner.objective(y, 0.0) <= exercise || hint.is_some_and(|u| inner.objective(y, u) <= exercise) {
            *slot = exercise;
            continue;
        }
        let (v, u) = inner.solve(y, sp, cfg, hint);
        hint = Some(u);
        *slot = cancel.min(exercise.max(v));
    }
    for j in 1..out.len() {
        out[j] = out[j].min(out[j - 1]);
    }
}

/// Solves the shortfall recursion and returns `J_0(x)` with the full surface.
pub fn solve_shortfall(
    model: &MarketModel,
    n: usize,
    contract: &Contract,
    x: f64,
    grid_cfg: &GridConfig,
    mode: Mode,
) -> Result<(f64, RiskSurface)> {
    grid_cfg.validate()?;
    contract.family.validate()?;
    contract.barrier.validate()?;
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::invalid("x", format!("initial capital must be finite and >= 0, got {x}")));
    }
    let sp = step_params(model, n)?;
    let nodes = match mode {
        Mode::PathTree => {
            if n > PATH_TREE_SHORTFALL_MAX_STEPS {
                return Err(Error::Budget {
                    n,
                    max: PATH_TREE_SHORTFALL_MAX_STEPS,
                });
            }
            let (buyer, seller) = tree_payoffs(&sp, contract);
            Nodes::Tree { buyer, seller }
        }
        Mode::Recombining => Nodes::Lattice(StateSpace::new(
            &sp,
            &contract.family,
            &contract.barrier,
            contract.convention,
        )?),
    };
    let reachable = reachable_mask(&nodes, n);
    let y_max = largest_leg(&nodes, &reachable, &sp, contract);
    // all legs vanish: any positive grid works and every table is zero
    let grid = Grid::new(grid_cfg.m, if y_max > 0.0 { y_max } else { 1.0 });
    let m = grid.m;

    let mut tables: Vec<Vec<f64>> = vec![Vec::new(); n];
    for k in (0..n).rev() {
        let (head, tail) = tables.split_at_mut(k + 1);
        let level = &mut head[k];
        *level = vec![0.0; nodes.len(k) * m];
        let next = tail.first().map_or(&[][..], Vec::as_slice);
        level.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
            if !reachable[k][i] {
                return;
            }
            let inner = InnerProblem {
                up: child_table(&nodes, next, grid, n, k, i, true),
                dn: child_table(&nodes, next, grid, n, k, i, false),
                p: sp.p,
                a1: sp.a1,
                a2: sp.a2,
            };
            fill_table(out, nodes.payoffs(k, i), &inner, grid, &sp, grid_cfg);
        });
    }

    let surface = RiskSurface {
        grid_config: *grid_cfg,
        mode,
        y_max,
        sp,
        contract: *contract,
        grid,
        nodes,
        tables,
        reachable,
    };
    Ok((surface.risk(x), surface))
}

struct ShortfallRule {
    surface: Arc<RiskSurface>,
}

impl HedgeRule for ShortfallRule {
    fn position(&self, signs: &[i8], value: f64) -> f64 {
        self.surface.decision(signs, value).1
    }

    fn cancels(&self, signs: &[i8], value: f64) -> bool {
        self.surface.decision(signs, value).0
    }
}

/// The risk-minimizing hedge: at each node the position minimizes the
/// continuation risk at the exact portfolio value, and the seller cancels once
/// the cancellation shortfall is the smallest available.
pub fn extract_optimal_hedge(surface: Arc<RiskSurface>, x: f64) -> Result<HedgeStrategy> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(Error::invalid("x", format!("initial capital must be finite and >= 0, got {x}")));
    }
    let sp = surface.sp;
    Ok(HedgeStrategy::new(x, &sp, 1.0, Arc::new(ShortfallRule { surface })))
}

/// Exact risk of a given hedge on the full path tree.
#[derive(Debug, Clone)]
pub struct PortfolioRisk {
    /// `W_0`: the risk when the seller also picks the best cancellation time.
    pub w0: f64,
    /// Risk when the seller cancels by the strategy's own rule.
    pub own_rule: f64,
    w: Vec<f64>,
    values: Vec<f64>,
}

impl PortfolioRisk {
    /// `W_k` at the node reached by `signs`.
    pub fn w_at(&self, signs: &[i8]) -> f64 {
        self.w[tree_index(signs.len(), prefix_bits(signs))]
    }

    /// Discounted portfolio value at the node reached by `signs`.
    pub fn value_at(&self, signs: &[i8]) -> f64 {
        self.values[tree_index(signs.len(), prefix_bits(signs))]
    }
}

/// `W_n = (Ỹ_n − Ṽ_n)^+`, `W_k = min((X̃_k − Ṽ_k)^+, max((Ỹ_k − Ṽ_k)^+, E_p[W_{k+1}]))`
/// along the portfolio generated by `strategy`.
pub fn portfolio_risk(strategy: &HedgeStrategy, contract: &Contract) -> Result<PortfolioRisk> {
    let sp = *strategy.step_params();
    let n = sp.n;
    if n > PATH_TREE_MAX_STEPS {
        return Err(Error::Budget {
            n,
            max: PATH_TREE_MAX_STEPS,
        });
    }
    let (buyer, seller) = tree_payoffs(&sp, contract);
    let size = buyer.len();
    let mut values = vec![0.0; size];
    let mut frozen = vec![false; size];
    let mut cancel_here = vec![false; size];
    values[0] = strategy.initial_capital;
    for k in 0..n {
        for bits in 0..1u64 << k {
            let at = tree_index(k, bits);
            let signs = PathPrefix::from_bits(bits, k);
            let (u, cancel) = strategy.decide(&signs, values[at], frozen[at]);
            cancel_here[at] = cancel;
            for up in [false, true] {
                let child = tree_index(k + 1, bits | u64::from(up) << k);
                values[child] = strategy.advance(values[at], u, up);
                frozen[child] = frozen[at] || cancel;
            }
        }
    }
    let p = sp.p;
    let mut w = vec![0.0; size];
    let mut own = vec![0.0; size];
    for bits in 0..1u64 << n {
        let at = tree_index(n, bits);
        w[at] = (buyer[at] - values[at]).max(0.0);
        own[at] = w[at];
    }
    for k in (0..n).rev() {
        for bits in 0..1u64 << k {
            let at = tree_index(k, bits);
            let up = tree_index(k + 1, bits | 1 << k);
            let dn = tree_index(k + 1, bits);
            let exercise = (buyer[at] - values[at]).max(0.0);
            let cancel = (seller[at] - values[at]).max(0.0);
            w[at] = cancel.min(exercise.max(p * w[up] + (1.0 - p) * w[dn]));
            own[at] = if cancel_here[at] {
                exercise.max(cancel)
            } else {
                exercise.max(p * own[up] + (1.0 - p) * own[dn])
            };
        }
    }
    Ok(PortfolioRisk {
        w0: w[0],
        own_rule: own[0],
        w,
        values,
    })
}
