//! Monte Carlo in the continuous market through the random-walk embedding.
//!
//! A drifted Brownian motion `B*_t` is simulated on a fine grid. The exit
//! times `θ_k` of `B*` from the band `anchor ± h` reproduce the lattice walk:
//! each exit records the sign of the move and the anchor snaps to the next
//! lattice level, so sign sequences map one-to-one onto lattice paths. Discrete
//! strategies and stopping rules are then transported to continuous time and
//! evaluated against the continuously evolving payoffs.

mod study;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynkin::{Contract, GameSolution, HedgeStrategy, Player};
use crate::lattice::{step_params, Direction, MarketModel, StepParams};
use crate::payoffs::{Convention, PathSummary, PayoffFamily};
use crate::{Error, Result};

pub use study::{convergence_study, fit_rate, ConvergenceOptions, ConvergenceRow, ConvergenceTable, Valuation};

/// Which drift `B*` carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Drift `μ/κ − κ/2`.
    #[default]
    Objective,
    /// Drift `−κ/2`: the discounted stock is a martingale.
    Martingale,
}

impl Measure {
    pub fn drift(self, model: &MarketModel) -> f64 {
        match self {
            Measure::Objective => model.objective_drift(),
            Measure::Martingale => -model.kappa / 2.0,
        }
    }
}

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub paths: usize,
    /// Grid step is `(T/n) / dt_divisor`.
    pub dt_divisor: f64,
    pub seed: u64,
    /// Catch band crossings between grid points with the Brownian-bridge
    /// crossing probability.
    pub bridge: bool,
    pub measure: Measure,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            paths: 10_000,
            dt_divisor: 400.0,
            seed: 0,
            bridge: true,
            measure: Measure::Objective,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::invalid("sim.paths", "need at least one path"));
        }
        if !(self.dt_divisor.is_finite() && self.dt_divisor > 1.0) {
            return Err(Error::invalid(
                "sim.dt_divisor",
                format!("grid step must be below T/n, got divisor {}", self.dt_divisor),
            ));
        }
        Ok(())
    }
}

/// `B*` sampled on the grid `i·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub dt: f64,
    pub values: Vec<f64>,
    pub measure: Measure,
    pub stream: u64,
}

impl BrownianPath {
    /// Last simulated time.
    pub fn end(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Grid index holding the path at time `t` (piecewise constant on the grid).
    pub fn index_at(&self, t: f64) -> usize {
        (((t / self.dt) + 1e-9).floor().max(0.0) as usize).min(self.values.len() - 1)
    }

    pub fn at(&self, t: f64) -> f64 {
        self.values[self.index_at(t)]
    }
}

/// Exit times and signs of the embedded walk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingRecord {
    /// `θ_0 = 0 < θ_1 < …`
    pub theta: Vec<f64>,
    pub signs: Vec<i8>,
}

impl EmbeddingRecord {
    pub fn exits(&self) -> usize {
        self.signs.len()
    }
}

/// When to stop simulating a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitLimit {
    /// Stop after this many exits.
    pub exits: usize,
    /// Stop once the grid reaches this time.
    pub until: f64,
}

/// Path generator for one `(model, n, measure, dt, seed)`.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: MarketModel,
    pub sp: StepParams,
    pub measure: Measure,
    pub dt: f64,
    pub bridge: bool,
    pub seed: u64,
    drift: f64,
}

impl Simulator {
    pub fn new(model: &MarketModel, n: usize, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let sp = step_params(model, n)?;
        Ok(Simulator {
            model: *model,
            sp,
            measure: cfg.measure,
            dt: sp.step_time() / cfg.dt_divisor,
            bridge: cfg.bridge,
            seed: cfg.seed,
            drift: cfg.measure.drift(model),
        })
    }

    pub fn with_dt(self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt < self.sp.step_time()) {
            return Err(Error::invalid("dt", format!("need 0 < dt < T/n = {}, got {dt}", self.sp.step_time())));
        }
        Ok(Simulator { dt, ..self })
    }

    /// Independent generator of path `index`.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// Grid index of the horizon `T`.
    pub fn horizon_index(&self) -> usize {
        (self.model.horizon / self.dt).round() as usize
    }

    /// Simulates path `index` until `limit`; returns the generator so callers
    /// can keep drawing from the same stream.
    pub fn simulate(&self, index: u64, limit: ExitLimit) -> (BrownianPath, EmbeddingRecord, ChaCha8Rng) {
        let mut rng = self.rng(index);
        let h = self.sp.h;
        let dt = self.dt;
        let sd = dt.sqrt();
        let step_drift = self.drift * dt;
        let last = if limit.until.is_finite() {
            (limit.until / dt).round() as usize
        } else {
            usize::MAX
        };
        let mut values = vec![0.0];
        let mut record = EmbeddingRecord {
            theta: vec![0.0],
            signs: Vec::new(),
        };
        let mut anchor = 0.0;
        let mut x = 0.0;
        let mut i = 0usize;
        while record.signs.len() < limit.exits && i < last {
            let z: f64 = rng.sample(StandardNormal);
            let x1 = x + step_drift + sd * z;
            let (d0, d1) = (x - anchor, x1 - anchor);
            let t0 = i as f64 * dt;
            let exit = if d1 >= h {
                Some((1i8, t0 + dt * (h - d0) / (d1 - d0)))
            } else if d1 <= -h {
                Some((-1i8, t0 + dt * (h + d0) / (d0 - d1)))
            } else if self.bridge {
                let p_up = (-2.0 * (h - d0) * (h - d1) / dt).exp();
                let p_dn = (-2.0 * (h + d0) * (h + d1) / dt).exp();
                if p_up + p_dn > 1e-15 {
                    let u: f64 = rng.gen();
                    if u < p_up {
                        Some((1, t0 + 0.5 * dt))
                    } else if u < p_up + p_dn {
                        Some((-1, t0 + 0.5 * dt))
                    } else {
                        None
                    }
                } else {
                    None
                }
            } else {
                None
            };
            if let Some((sign, theta)) = exit {
                anchor += f64::from(sign) * h;
                record.signs.push(sign);
                record.theta.push(theta);
            }
            values.push(x1);
            x = x1;
            i += 1;
        }
        let path = BrownianPath {
            dt,
            values,
            measure: self.measure,
            stream: index,
        };
        (path, record, rng)
    }

    /// `B*_T`: read off the grid when the path reaches `T`, otherwise drawn
    /// exactly from the Gaussian increment over the remaining time.
    pub fn terminal_value(&self, path: &BrownianPath, rng: &mut ChaCha8Rng) -> f64 {
        let horizon = self.horizon_index();
        if path.values.len() > horizon {
            return path.values[horizon];
        }
        let rest = self.model.horizon - path.end();
        let z: f64 = rng.sample(StandardNormal);
        path.values[path.values.len() - 1] + self.drift * rest + rest.sqrt() * z
    }

    /// Discounted stock `S̃^B_t = S_0 e^{κ B*_t}` for a value of `B*`.
    pub fn discounted_stock(&self, b: f64) -> f64 {
        self.model.s0 * (self.model.kappa * b).exp()
    }
}

/// Lazily simulated paths `0..cfg.paths`, each run until its `n`-th exit.
pub fn simulate_embedding(
    model: &MarketModel,
    n: usize,
    cfg: &SimConfig,
) -> Result<impl Iterator<Item = (BrownianPath, EmbeddingRecord)>> {
    let sim = Simulator::new(model, n, cfg)?;
    Ok((0..cfg.paths as u64).map(move |i| {
        let (path, record, _) = sim.simulate(
            i,
            ExitLimit {
                exits: n,
                until: f64::INFINITY,
            },
        );
        (path, record)
    }))
}

/// Runs `f` on every path index in parallel and returns results in index order.
pub fn simulate_map<T, F>(paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..paths as u64).into_par_iter().map(f).collect()
}

/// Sample mean and its standard error, accumulated in index order.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = neumaier(xs.iter().copied()) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = neumaier(xs.iter().map(|x| (x - mean) * (x - mean))) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn neumaier(xs: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `φ_n(σ)`: `T ∧ θ_σ`, or `T` when the rule runs to `n` or past the
/// simulated exits.
pub fn map_stopping(rule: impl Fn(&[i8]) -> bool, record: &EmbeddingRecord, n: usize, horizon: f64) -> f64 {
    (0..=record.exits().min(n))
        .find(|&k| k < n && rule(&record.signs[..k]))
        .map_or(horizon, |k| record.theta[k].min(horizon))
}

/// Continuous-time portfolio `ψ_n(π)` along one embedded path.
#[derive(Debug, Clone)]
pub struct MappedPortfolio {
    /// Lattice values at `θ_0..θ_K`.
    pub values: Vec<f64>,
    /// Stock units held on `(θ_k, θ_{k+1}]`, one per recorded value.
    pub gamma: Vec<f64>,
    /// Lattice discounted prices `S̃_k` at the snapped anchors.
    pub anchors: Vec<f64>,
    /// Index of the cancellation, if the strategy cancels within the record.
    pub cancel: Option<usize>,
    pub theta: Vec<f64>,
}

impl MappedPortfolio {
    /// `Ṽ_t` given `S̃^B_t`.
    pub fn value_at(&self, t: f64, stock: f64) -> f64 {
        let k = self.theta.partition_point(|&th| th <= t) - 1;
        if self.theta[k] == t || self.gamma[k] == 0.0 {
            return self.values[k];
        }
        self.values[k] + self.gamma[k] * (stock - self.anchors[k])
    }
}

/// Transports `strategy` onto the embedded path described by `record`.
pub fn map_strategy(strategy: &HedgeStrategy, record: &EmbeddingRecord) -> MappedPortfolio {
    let sp = *strategy.step_params();
    let n = sp.n;
    let signs = &record.signs[..record.exits().min(n)];
    let replay = strategy.replay(signs);
    let k_last = signs.len();
    let mut gamma = replay.gamma.clone();
    let mut level = 0i64;
    let mut anchors = vec![sp.discounted_price(0)];
    for &s in signs {
        level += i64::from(s);
        anchors.push(sp.discounted_price(level));
    }
    // the position after the last recorded exit, held until the next one
    let stopped = replay.cancel.is_some_and(|c| c < k_last);
    let (u, _) = strategy.decide(signs, replay.values[k_last], stopped);
    gamma.push(u / anchors[k_last]);
    MappedPortfolio {
        values: replay.values,
        gamma,
        anchors,
        cancel: replay.cancel,
        theta: record.theta[..=k_last].to_vec(),
    }
}

/// Payoff legs along one simulated path, evaluated on the grid.
pub struct BsPayoffs {
    family: PayoffFamily,
    direction: Direction,
    convention: Convention,
    r: f64,
    dt: f64,
    summaries: Vec<PathSummary>,
    /// First grid index outside the interval.
    exit: Option<usize>,
}

impl BsPayoffs {
    pub fn new(model: &MarketModel, contract: &Contract, path: &BrownianPath, last: usize) -> Self {
        let last = last.min(path.values.len() - 1);
        let price = |i: usize| model.s0 * (model.r * i as f64 * path.dt + model.kappa * path.values[i]).exp();
        let mut summaries = Vec::with_capacity(last + 1);
        let mut s = PathSummary::start(price(0));
        summaries.push(s);
        for i in 1..=last {
            s.advance(price(i), path.dt);
            summaries.push(s);
        }
        let exit = summaries.iter().position(|p| !contract.barrier.contains(p.current));
        BsPayoffs {
            family: contract.family,
            direction: contract.barrier.direction,
            convention: contract.convention,
            r: model.r,
            dt: path.dt,
            summaries,
            exit,
        }
    }

    fn index(&self, t: f64) -> usize {
        (((t / self.dt) + 1e-9).floor().max(0.0) as usize).min(self.summaries.len() - 1)
    }

    fn knocked(&self, i: usize) -> bool {
        self.exit.is_some_and(|e| i >= e)
    }

    /// Barrier exit time on the grid, if any.
    pub fn exit_time(&self) -> Option<f64> {
        self.exit.map(|e| e as f64 * self.dt)
    }

    /// Discounted buyer leg `Ỹ_t`.
    pub fn buyer(&self, t: f64) -> f64 {
        let i = self.index(t);
        let f = self.family.evaluate(&self.summaries[i]).f;
        let alive = match self.direction {
            Direction::KnockOut => !self.knocked(i),
            Direction::KnockIn => self.knocked(i),
        };
        if alive {
            (-self.r * t).exp() * f
        } else {
            0.0
        }
    }

    /// Discounted seller leg at `s`.
    pub fn seller(&self, s: f64) -> f64 {
        let i = self.index(s);
        let g = self.family.evaluate(&self.summaries[i]).g;
        let gated = self.direction == Direction::KnockOut && self.convention == Convention::PerLeg;
        if gated && self.knocked(i) {
            0.0
        } else {
            (-self.r * s).exp() * g
        }
    }

    /// `Q(s, t)`: the seller leg if the seller stops first, else the buyer leg.
    pub fn kernel(&self, s: f64, t: f64) -> f64 {
        if s < t {
            self.seller(s)
        } else {
            self.buyer(t)
        }
    }
}

/// `Q(s, t)` on one simulated path.
pub fn bs_discounted_payoff(model: &MarketModel, contract: &Contract, path: &BrownianPath, s: f64, t: f64) -> f64 {
    let last = path.index_at(s.max(t));
    BsPayoffs::new(model, contract, path, last).kernel(s, t)
}

/// Which buyer stopping times enter the shortfall estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CandidateFlags {
    /// The embedded saddle rule of the lattice game.
    pub saddle: bool,
    /// `jT/10`, `j = 0..10`.
    pub deterministic: bool,
    /// The barrier exit time capped at `T`.
    pub barrier: bool,
    /// `θ_k ∧ T` for `k = n/4, n/2, 3n/4, n`.
    pub theta: bool,
}

impl Default for CandidateFlags {
    fn default() -> Self {
        CandidateFlags {
            saddle: true,
            deterministic: true,
            barrier: true,
            theta: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Candidate {
    Saddle,
    Fixed(usize),
    Barrier,
    Theta(usize),
}

impl Candidate {
    fn name(self, n: usize) -> String {
        match self {
            Candidate::Saddle => "saddle".into(),
            Candidate::Fixed(j) => format!("t={j}/10T"),
            Candidate::Barrier => "barrier".into(),
            Candidate::Theta(k) => format!("theta[{k}/{n}]"),
        }
    }
}

/// Monte Carlo estimate for one buyer candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateEstimate {
    pub candidate: String,
    pub estimate: f64,
    pub std_err: f64,
    pub n_paths: usize,
}

/// Shortfall estimates per candidate. The maximum over candidates is a
/// statistical lower bound on the worst case over all buyer stopping times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortfallEstimate {
    pub candidates: Vec<CandidateEstimate>,
    pub max: CandidateEstimate,
}

/// Discrete strategy and contract to evaluate in the continuous market.
pub struct McTarget<'a> {
    pub model: &'a MarketModel,
    pub contract: &'a Contract,
    pub strategy: &'a HedgeStrategy,
    /// Lattice game whose buyer saddle rule is one of the candidates.
    pub game: Option<&'a GameSolution>,
}

/// `E[(Q(σ, τ) − Ṽ_{σ∧τ})^+]` for the embedded strategy and its cancellation
/// time `σ`, per buyer candidate `τ`.
pub fn estimate_shortfall_mc(target: &McTarget<'_>, sim_cfg: &SimConfig, flags: &CandidateFlags) -> Result<ShortfallEstimate> {
    let n = target.strategy.step_params().n;
    let sim = Simulator::new(target.model, n, sim_cfg)?;
    let horizon = target.model.horizon;
    let mut candidates = Vec::new();
    if flags.saddle && target.game.is_some() {
        candidates.push(Candidate::Saddle);
    }
    if flags.deterministic {
        candidates.extend((0..=10).map(Candidate::Fixed));
    }
    if flags.barrier {
        candidates.push(Candidate::Barrier);
    }
    if flags.theta {
        let mut ks: Vec<usize> = [n / 4, n / 2, 3 * n / 4, n].into_iter().filter(|&k| k > 0).collect();
        ks.dedup();
        candidates.extend(ks.into_iter().map(Candidate::Theta));
    }
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let last = sim.horizon_index();
    let per_path = simulate_map(sim_cfg.paths, |i| {
        let (path, record, _) = sim.simulate(i, ExitLimit { exits: n, until: horizon });
        let payoffs = BsPayoffs::new(target.model, target.contract, &path, last);
        let portfolio = map_strategy(target.strategy, &record);
        let sigma = portfolio.cancel.map_or(horizon, |k| record.theta[k].min(horizon));
        let theta_capped = |k: usize| record.theta.get(k).map_or(horizon, |&t| t.min(horizon));
        candidates
            .iter()
            .map(|&c| {
                let tau = match c {
                    Candidate::Saddle => {
                        let game = target.game.expect("saddle candidate needs a game");
                        map_stopping(|p| game.stops(Player::Buyer, p), &record, n, horizon)
                    }
                    Candidate::Fixed(j) => horizon * j as f64 / 10.0,
                    Candidate::Barrier => payoffs.exit_time().map_or(horizon, |t| t.min(horizon)),
                    Candidate::Theta(k) => theta_capped(k),
                };
                let stop = sigma.min(tau);
                let value = portfolio.value_at(stop, sim.discounted_stock(path.at(stop)));
                (payoffs.kernel(sigma, tau) - value).max(0.0)
            })
            .collect::<Vec<f64>>()
    });
    let estimates: Vec<CandidateEstimate> = candidates
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let xs: Vec<f64> = per_path.iter().map(|row| row[j]).collect();
            let (estimate, std_err) = mean_and_se(&xs);
            CandidateEstimate {
                candidate: c.name(n),
                estimate,
                std_err,
                n_paths: sim_cfg.paths,
            }
        })
        .collect();
    let max = estimates
        .iter()
        .fold(None::<&CandidateEstimate>, |best, e| match best {
            Some(b) if b.estimate >= e.estimate => Some(b),
            _ => Some(e),
        })
        .cloned()
        .expect("nonempty");
    Ok(ShortfallEstimate {
        candidates: estimates,
        max,
    })
}

/// Sign, first-exit and terminal statistics of the embedding.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitStatistics {
    pub n_paths: usize,
    /// Frequency of `ξ_1 = +1` and its standard error.
    pub up_frequency: (f64, f64),
    /// The lattice up-probability of the simulated measure.
    pub up_probability: f64,
    /// Sample mean of `θ_1` and its standard error.
    pub theta1_mean: (f64, f64),
    /// `h(2p − 1)/m`, or `h²` for zero drift.
    pub theta1_expected: f64,
    /// Sample mean of `S̃^B_T` and its standard error.
    pub terminal_discounted_stock: (f64, f64),
}

pub fn exit_statistics(model: &MarketModel, n: usize, cfg: &SimConfig) -> Result<ExitStatistics> {
    let sim = Simulator::new(model, n, cfg)?;
    let rows = simulate_map(cfg.paths, |i| {
        let (path, record, mut rng) = sim.simulate(
            i,
            ExitLimit {
                exits: 1,
                until: f64::INFINITY,
            },
        );
        let terminal = sim.discounted_stock(sim.terminal_value(&path, &mut rng));
        (f64::from(u8::from(record.signs[0] > 0)), record.theta[1], terminal)
    });
    let column = |f: fn(&(f64, f64, f64)) -> f64| mean_and_se(&rows.iter().map(f).collect::<Vec<_>>());
    let m = cfg.measure.drift(model);
    let p = match cfg.measure {
        Measure::Objective => sim.sp.p,
        Measure::Martingale => sim.sp.p_tilde,
    };
    let h = sim.sp.h;
    Ok(ExitStatistics {
        n_paths: cfg.paths,
        up_frequency: column(|r| r.0),
        up_probability: p,
        theta1_mean: column(|r| r.1),
        theta1_expected: if m.abs() < 1e-12 { h * h } else { h * (2.0 * p - 1.0) / m },
        terminal_discounted_stock: column(|r| r.2),
    })
}

#[cfg(test)]
mod tests;
