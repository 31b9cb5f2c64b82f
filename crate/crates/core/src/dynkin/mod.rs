//! Discrete Dynkin games: game-option prices, saddle stopping rules and the
//! Doob-decomposition perfect hedge.
//!
//! Two solvers share one contract description. The path-tree solver visits
//! all `2^n` paths and reads payoffs straight off [`gated_discounted`]; the
//! recombining solver sweeps the Markov state space. The first is the oracle
//! for the second.

mod hedge;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lattice::{step_params, BarrierSpec, Child, MarketModel, PathPrefix, StateKind, StateSpace, StepParams, UpperBarrier};
use crate::payoffs::{gated_discounted, Convention, NodePayoffs, PayoffFamily};
use crate::{Error, Result};

pub use hedge::{HedgeRule, HedgeStrategy, Replay};

/// Largest `n` accepted by the path-tree solvers.
pub const PATH_TREE_MAX_STEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PathTree,
    Recombining,
}

impl Mode {
    /// Recombining when the family admits it, path tree otherwise.
    pub fn preferred(family: &PayoffFamily) -> Mode {
        match family.state_kind() {
            StateKind::PathDependent => Mode::PathTree,
            _ => Mode::Recombining,
        }
    }
}

/// Payoff family, barrier and settlement convention of a game option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contract {
    pub family: PayoffFamily,
    pub barrier: BarrierSpec,
    pub convention: Convention,
}

impl Contract {
    pub fn new(family: PayoffFamily, barrier: BarrierSpec) -> Self {
        Contract {
            family,
            barrier,
            convention: Convention::PerLeg,
        }
    }

    pub fn with_convention(self, convention: Convention) -> Self {
        Contract { convention, ..self }
    }

    pub fn with_barrier(self, barrier: BarrierSpec) -> Self {
        Contract { barrier, ..self }
    }

    /// Discounted buyer and seller legs at the node reached by `signs`.
    pub(crate) fn payoffs_on_path(&self, sp: &StepParams, signs: &[i8]) -> NodePayoffs {
        let g = gated_discounted(&self.family, sp, signs, &self.barrier).expect("prefix within n");
        let k = signs.len();
        NodePayoffs {
            buyer: g.y_tilde[k],
            seller: g.seller(k, self.convention),
        }
    }
}

/// Which stopping problem a backward sweep solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Valuation {
    /// `min(X̃, max(Ỹ, C))`
    Game,
    /// `max(Ỹ, C)`: the seller never cancels.
    American,
    /// `C`: only `Ỹ_n` is paid.
    European,
}

impl Valuation {
    fn combine(self, node: NodePayoffs, cont: f64) -> f64 {
        match self {
            Valuation::Game => node.seller.min(node.buyer.max(cont)),
            Valuation::American => node.buyer.max(cont),
            Valuation::European => cont,
        }
    }
}

/// Node index in a path tree: level `k`, signs encoded in the low `k` bits.
pub(crate) fn tree_index(k: usize, bits: u64) -> usize {
    (1usize << k) - 1 + bits as usize
}

/// Bits of a sign prefix (bit `i` set iff `ξ_{i+1} = +1`).
pub(crate) fn prefix_bits(signs: &[i8]) -> u64 {
    signs
        .iter()
        .enumerate()
        .fold(0u64, |acc, (i, &s)| if s > 0 { acc | 1 << i } else { acc })
}

/// Buyer and seller legs at every node of the path tree.
pub(crate) fn tree_payoffs(sp: &StepParams, contract: &Contract) -> (Vec<f64>, Vec<f64>) {
    let n = sp.n;
    let size = (1usize << (n + 1)) - 1;
    let mut buyer = vec![0.0; size];
    let mut seller = vec![0.0; size];
    for bits in 0..1u64 << n {
        let path = PathPrefix::from_bits(bits, n);
        let g = gated_discounted(&contract.family, sp, &path, &contract.barrier).expect("full path");
        // each node is written once, from the leaf whose unused bits are zero
        let top = 64 - bits.leading_zeros() as usize;
        for k in top..=n {
            let i = tree_index(k, bits);
            buyer[i] = g.y_tilde[k];
            seller[i] = g.seller(k, contract.convention);
        }
    }
    (buyer, seller)
}

fn check_tree_budget(n: usize, max: usize) -> Result<()> {
    if n > max {
        Err(Error::Budget { n, max })
    } else {
        Ok(())
    }
}

enum Process {
    Tree {
        values: Vec<f64>,
        buyer: Vec<f64>,
        seller: Vec<f64>,
    },
    Lattice {
        space: StateSpace,
        values: Vec<Vec<f64>>,
    },
}

/// Solved game: root price, value process and saddle stopping rules.
pub struct GameSolution {
    /// `V_0`, in discounted units.
    pub value: f64,
    pub mode: Mode,
    sp: StepParams,
    contract: Contract,
    process: Process,
}

impl std::fmt::Debug for GameSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameSolution")
            .field("value", &self.value)
            .field("mode", &self.mode)
            .field("n", &self.sp.n)
            .field("contract", &self.contract)
            .finish_non_exhaustive()
    }
}

fn solve_tree(sp: &StepParams, contract: &Contract, valuation: Valuation) -> Process {
    let n = sp.n;
    let (buyer, seller) = tree_payoffs(sp, contract);
    let mut values = vec![0.0; buyer.len()];
    let q = sp.p_tilde;
    for bits in 0..1u64 << n {
        let i = tree_index(n, bits);
        values[i] = buyer[i];
    }
    for k in (0..n).rev() {
        for bits in 0..1u64 << k {
            let i = tree_index(k, bits);
            let up = values[tree_index(k + 1, bits | 1 << k)];
            let dn = values[tree_index(k + 1, bits)];
            let node = NodePayoffs {
                buyer: buyer[i],
                seller: seller[i],
            };
            values[i] = valuation.combine(node, q * up + (1.0 - q) * dn);
        }
    }
    Process::Tree {
        values,
        buyer,
        seller,
    }
}

/// Backward sweep over the recombining states. Keeps every level when
/// `retain` is set, otherwise only the root level survives.
fn sweep_lattice(space: &StateSpace, valuation: Valuation, p: f64, retain: bool) -> Vec<Vec<f64>> {
    let n = space.steps();
    let mut levels: Vec<Vec<f64>> = Vec::with_capacity(if retain { n + 1 } else { 1 });
    let mut next: Vec<f64> = (0..space.len(n)).map(|i| space.payoffs(n, i).buyer).collect();
    for k in (0..n).rev() {
        let cur: Vec<f64> = (0..space.len(k))
            .map(|i| {
                let look = |up| match space.child(k, i, up) {
                    Child::Dead => 0.0,
                    Child::Index(c) => next[c],
                };
                let cont = p * look(true) + (1.0 - p) * look(false);
                valuation.combine(space.payoffs(k, i), cont)
            })
            .collect();
        if retain {
            levels.push(std::mem::replace(&mut next, cur));
        } else {
            next = cur;
        }
    }
    levels.push(next);
    levels.reverse();
    levels
}

fn root_value(space: &StateSpace, levels: &[Vec<f64>]) -> f64 {
    match space.root() {
        Child::Dead => 0.0,
        Child::Index(i) => levels[0][i],
    }
}

fn value_of(
    model: &MarketModel,
    n: usize,
    contract: &Contract,
    mode: Mode,
    valuation: Valuation,
) -> Result<f64> {
    contract.family.validate()?;
    contract.barrier.validate()?;
    let sp = step_params(model, n)?;
    match mode {
        Mode::PathTree => {
            check_tree_budget(n, PATH_TREE_MAX_STEPS)?;
            match solve_tree(&sp, contract, valuation) {
                Process::Tree { values, .. } => Ok(values[0]),
                Process::Lattice { .. } => unreachable!(),
            }
        }
        Mode::Recombining => {
            let space = StateSpace::new(&sp, &contract.family, &contract.barrier, contract.convention)?;
            let levels = sweep_lattice(&space, valuation, sp.p_tilde, false);
            Ok(root_value(&space, &levels))
        }
    }
}

/// Solves the game and keeps the full value process.
pub fn solve_game(model: &MarketModel, n: usize, contract: &Contract, mode: Mode) -> Result<GameSolution> {
    contract.family.validate()?;
    contract.barrier.validate()?;
    let sp = step_params(model, n)?;
    let process = match mode {
        Mode::PathTree => {
            check_tree_budget(n, PATH_TREE_MAX_STEPS)?;
            solve_tree(&sp, contract, Valuation::Game)
        }
        Mode::Recombining => {
            let space = StateSpace::new(&sp, &contract.family, &contract.barrier, contract.convention)?;
            let values = sweep_lattice(&space, Valuation::Game, sp.p_tilde, true);
            Process::Lattice { space, values }
        }
    };
    let value = match &process {
        Process::Tree { values, .. } => values[0],
        Process::Lattice { space, values } => root_value(space, values),
    };
    Ok(GameSolution {
        value,
        mode,
        sp,
        contract: *contract,
        process,
    })
}

/// Game price `V_0` without keeping the value process.
pub fn game_value(model: &MarketModel, n: usize, contract: &Contract, mode: Mode) -> Result<f64> {
    value_of(model, n, contract, mode, Valuation::Game)
}

/// Price when the seller can never cancel (the infinite-penalty limit).
pub fn american_value(model: &MarketModel, n: usize, contract: &Contract, mode: Mode) -> Result<f64> {
    value_of(model, n, contract, mode, Valuation::American)
}

/// `E_p̃[Ỹ_n]`: both players are held to maturity.
pub fn european_value(model: &MarketModel, n: usize, family: &PayoffFamily, barrier: &BarrierSpec) -> Result<f64> {
    let contract = Contract::new(*family, *barrier);
    value_of(model, n, &contract, Mode::preferred(family), Valuation::European)
}

/// Which player's saddle rule to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Seller,
    Buyer,
}

impl GameSolution {
    pub fn step_params(&self) -> &StepParams {
        &self.sp
    }

    pub fn contract(&self) -> &Contract {
        &self.contract
    }

    pub fn steps(&self) -> usize {
        self.sp.n
    }

    /// `V_k` at the node reached by `signs`.
    pub fn value_at(&self, signs: &[i8]) -> f64 {
        match &self.process {
            Process::Tree { values, .. } => values[tree_index(signs.len(), prefix_bits(signs))],
            Process::Lattice { space, values } => match space.walk(signs) {
                Child::Dead => 0.0,
                Child::Index(i) => values[signs.len()][i],
            },
        }
    }

    /// Discounted buyer leg `Ỹ_k` and seller leg at the node reached by `signs`.
    pub fn payoffs_at(&self, signs: &[i8]) -> (f64, f64) {
        let node = match &self.process {
            Process::Tree { buyer, seller, .. } => {
                let i = tree_index(signs.len(), prefix_bits(signs));
                NodePayoffs {
                    buyer: buyer[i],
                    seller: seller[i],
                }
            }
            Process::Lattice { space, .. } => match space.walk(signs) {
                Child::Index(i) => space.payoffs(signs.len(), i),
                Child::Dead => self.contract.payoffs_on_path(&self.sp, signs),
            },
        };
        (node.buyer, node.seller)
    }

    /// Whether `player` stops at the node reached by `signs`. The seller
    /// stops where the value meets the cancellation leg (never at `n`), the
    /// buyer where it meets the exercise leg.
    pub fn stops(&self, player: Player, signs: &[i8]) -> bool {
        let v = self.value_at(signs);
        let (buyer, seller) = self.payoffs_at(signs);
        match player {
            Player::Seller => signs.len() < self.sp.n && seller <= v,
            Player::Buyer => buyer >= v,
        }
    }

    /// Saddle stopping index of `player` along a full path; earliest index wins.
    pub fn stopping_index(&self, player: Player, signs: &[i8]) -> usize {
        (0..=signs.len().min(self.sp.n))
            .find(|&k| self.stops(player, &signs[..k]))
            .unwrap_or(self.sp.n)
    }

    pub fn sigma_star(&self, signs: &[i8]) -> usize {
        self.stopping_index(Player::Seller, signs)
    }

    pub fn tau_star(&self, signs: &[i8]) -> usize {
        self.stopping_index(Player::Buyer, signs)
    }

    /// `E_p̃` of the saddle stopping index of `player`.
    pub fn expected_stopping(&self, player: Player) -> f64 {
        let n = self.sp.n;
        let q = self.sp.p_tilde;
        match &self.process {
            Process::Tree { values, buyer, seller } => {
                let stop = |i: usize, k: usize| match player {
                    Player::Seller => k < n && seller[i] <= values[i],
                    Player::Buyer => buyer[i] >= values[i],
                };
                let mut next: Vec<f64> = vec![n as f64; 1 << n];
                for k in (0..n).rev() {
                    next = (0..1u64 << k)
                        .map(|bits| {
                            if stop(tree_index(k, bits), k) {
                                k as f64
                            } else {
                                q * next[(bits | 1 << k) as usize] + (1.0 - q) * next[bits as usize]
                            }
                        })
                        .collect();
                }
                next[0]
            }
            Process::Lattice { space, values } => {
                let stop = |k: usize, i: usize| {
                    let node = space.payoffs(k, i);
                    match player {
                        Player::Seller => k < n && node.seller <= values[k][i],
                        Player::Buyer => node.buyer >= values[k][i],
                    }
                };
                // after a knock-out the buyer stops at once; the seller stops at once
                // unless the cancellation leg is still owed, in which case it waits for n
                let dead = |k: usize| match (player, self.contract.convention) {
                    (Player::Seller, Convention::MinTime) => n as f64,
                    _ => k as f64,
                };
                let mut next: Vec<f64> = (0..space.len(n)).map(|_| n as f64).collect();
                for k in (0..n).rev() {
                    next = (0..space.len(k))
                        .map(|i| {
                            if stop(k, i) {
                                return k as f64;
                            }
                            let look = |up| match space.child(k, i, up) {
                                Child::Dead => dead(k + 1),
                                Child::Index(c) => next[c],
                            };
                            q * look(true) + (1.0 - q) * look(false)
                        })
                        .collect();
                }
                match space.root() {
                    Child::Index(i) => next[i],
                    Child::Dead => 0.0,
                }
            }
        }
    }
}

struct DoobRule {
    solution: Arc<GameSolution>,
}

impl HedgeRule for DoobRule {
    fn position(&self, signs: &[i8], _value: f64) -> f64 {
        let sp = &self.solution.sp;
        let mut path = signs.to_vec();
        path.push(1);
        let up = self.solution.value_at(&path);
        *path.last_mut().unwrap() = -1;
        let dn = self.solution.value_at(&path);
        (up - dn) / (sp.a1 - sp.a2)
    }

    fn cancels(&self, signs: &[i8], _value: f64) -> bool {
        self.solution.stops(Player::Seller, signs)
    }
}

/// Perfect hedge from the Doob decomposition of the value process: at each
/// node the stock position replicates the next-step value, and the seller
/// cancels at `σ*`. Capital above `V_0` is kept in bonds.
pub fn perfect_hedge(solution: Arc<GameSolution>, initial_capital: f64) -> Result<HedgeStrategy> {
    if initial_capital.is_nan() || initial_capital < solution.value {
        return Err(Error::InsufficientCapital {
            capital: initial_capital,
            value: solution.value,
        });
    }
    let sp = solution.sp;
    Ok(HedgeStrategy::new(initial_capital, &sp, 1.0, Arc::new(DoobRule { solution })))
}

/// Widens `(L, R)` to `(L e^{−c n^{−a}}, R e^{c n^{−a}})` for exponent `a`
/// and scale `c`; an infinite upper barrier stays infinite.
pub fn widen_barrier(barrier: &BarrierSpec, n: usize, exponent: f64, scale: f64) -> BarrierSpec {
    let eps = scale * (n as f64).powf(-exponent);
    BarrierSpec {
        lower: barrier.lower * (-eps).exp(),
        upper: match barrier.upper {
            UpperBarrier::Finite(r) => UpperBarrier::Finite(r * eps.exp()),
            UpperBarrier::Infinite => UpperBarrier::Infinite,
        },
        direction: barrier.direction,
    }
}

/// Barrier widening applied to the lattice contract at step count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum WidenScheme {
    #[default]
    Off,
    /// Factor `e^{±n^{−1/3}}`.
    CubeRoot,
    /// Factor `e^{±2 n^{−1/4+β}}`.
    KnockIn { beta: f64 },
}

impl WidenScheme {
    pub fn validate(&self) -> Result<()> {
        match *self {
            WidenScheme::KnockIn { beta } if !(beta > 0.0 && beta < 0.25) => {
                Err(Error::invalid("widen.beta", format!("need 0 < beta < 1/4, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, barrier: &BarrierSpec, n: usize) -> BarrierSpec {
        match *self {
            WidenScheme::Off => *barrier,
            WidenScheme::CubeRoot => widen_barrier(barrier, n, 1.0 / 3.0, 1.0),
            WidenScheme::KnockIn { beta } => widen_barrier(barrier, n, 0.25 - beta, 2.0),
        }
    }
}
