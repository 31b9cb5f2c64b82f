//! The n-step CRR market built from Black–Scholes parameters.
//!
//! Stock prices on the lattice are always evaluated from exponent sums,
//! `S_k = S_0 exp(k rT/n + κ√(T/n) Σξ_i)`, never by repeated multiplication,
//! so two prefixes with the same number of up-moves produce bit-identical
//! prices.

mod states;

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

pub(crate) use states::{Child, StateSpace};

/// Black–Scholes market parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketModel {
    pub s0: f64,
    /// Interest rate per unit time.
    pub r: f64,
    /// Drift parameter; the objective measure gives `B*` the drift `μ/κ − κ/2`.
    pub mu: f64,
    /// Volatility.
    pub kappa: f64,
    /// Horizon `T`.
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_b0")]
    pub b0: f64,
}

fn default_b0() -> f64 {
    1.0
}

impl MarketModel {
    pub fn new(s0: f64, r: f64, mu: f64, kappa: f64, horizon: f64) -> Self {
        MarketModel {
            s0,
            r,
            mu,
            kappa,
            horizon,
            b0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be finite and > 0, got {v}")))
            }
        };
        positive("s0", self.s0)?;
        positive("kappa", self.kappa)?;
        positive("T", self.horizon)?;
        positive("b0", self.b0)?;
        if !self.r.is_finite() {
            return Err(Error::invalid("r", "must be finite"));
        }
        if !self.mu.is_finite() {
            return Err(Error::invalid("mu", "must be finite"));
        }
        Ok(())
    }

    /// Drift of `B*_t` under the objective measure.
    pub fn objective_drift(&self) -> f64 {
        self.mu / self.kappa - 0.5 * self.kappa
    }
}

/// Per-step quantities of the n-step CRR market.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub n: usize,
    /// Step width `√(T/n)`.
    pub h: f64,
    /// Per-step bond return `e^{rT/n} − 1`.
    pub r_n: f64,
    /// Discounted up return `e^{κh} − 1`.
    pub a1: f64,
    /// Discounted down return `e^{−κh} − 1`.
    pub a2: f64,
    pub rho_up: f64,
    pub rho_dn: f64,
    /// Up-probability under the objective measure.
    pub p: f64,
    /// Up-probability under the martingale measure.
    pub p_tilde: f64,
    s0: f64,
    /// `rT/n`
    drift_exp: f64,
    /// `κh`
    vol_exp: f64,
    step_time: f64,
    r: f64,
}

/// Builds the n-step CRR market from `model`.
pub fn step_params(model: &MarketModel, n: usize) -> Result<StepParams> {
    model.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "step count must be >= 1"));
    }
    let step_time = model.horizon / n as f64;
    let h = step_time.sqrt();
    let vol_exp = model.kappa * h;
    let drift_exp = model.r * step_time;
    let p = 1.0 / (((model.kappa - 2.0 * model.mu / model.kappa) * h).exp() + 1.0);
    let p_tilde = 1.0 / (vol_exp.exp() + 1.0);
    Ok(StepParams {
        n,
        h,
        r_n: drift_exp.exp_m1(),
        a1: vol_exp.exp_m1(),
        a2: (-vol_exp).exp_m1(),
        rho_up: (drift_exp + vol_exp).exp_m1(),
        rho_dn: (drift_exp - vol_exp).exp_m1(),
        p,
        p_tilde,
        s0: model.s0,
        drift_exp,
        vol_exp,
        step_time,
        r: model.r,
    })
}

impl StepParams {
    /// Undiscounted price at step `k` with net move `level = Σξ`.
    pub fn price(&self, k: usize, level: i64) -> f64 {
        self.s0 * self.exponent(k, level).exp()
    }

    /// Discounted price with net move `level`; independent of the step.
    pub fn discounted_price(&self, level: i64) -> f64 {
        self.s0 * (self.vol_exp * level as f64).exp()
    }

    pub(crate) fn exponent(&self, k: usize, level: i64) -> f64 {
        k as f64 * self.drift_exp + level as f64 * self.vol_exp
    }

    /// `(1 + r_n)^{−k}`, evaluated as `e^{−rkT/n}`.
    pub fn discount(&self, k: usize) -> f64 {
        (-(k as f64) * self.drift_exp).exp()
    }

    /// Calendar length `T/n` of one step.
    pub fn step_time(&self) -> f64 {
        self.step_time
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    pub fn rate(&self) -> f64 {
        self.r
    }

    /// `κ√(T/n)`
    pub fn log_step(&self) -> f64 {
        self.vol_exp
    }

    /// Martingale residual `p̃·a1 + (1 − p̃)·a2`.
    pub fn martingale_residual(&self) -> f64 {
        self.p_tilde * self.a1 + (1.0 - self.p_tilde) * self.a2
    }
}

/// Values `ξ_1..ξ_k` of the random walk, each `+1` or `−1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct PathPrefix(Vec<i8>);

impl PathPrefix {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("signs", "every sign must be +1 or -1"));
        }
        Ok(PathPrefix(signs))
    }

    /// The prefix whose `i`-th sign is `+1` iff bit `i` of `bits` is set.
    pub fn from_bits(bits: u64, k: usize) -> Self {
        PathPrefix((0..k).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect())
    }

    pub fn push(&mut self, sign: i8) {
        debug_assert!(sign == 1 || sign == -1);
        self.0.push(sign);
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }
}

impl Deref for PathPrefix {
    type Target = [i8];

    fn deref(&self) -> &[i8] {
        &self.0
    }
}

/// Undiscounted and discounted prices `S_0..S_k` along `prefix`.
pub fn prices_along(sp: &StepParams, prefix: &[i8]) -> Result<(Vec<f64>, Vec<f64>)> {
    if prefix.len() > sp.n {
        return Err(Error::invalid(
            "prefix",
            format!("length {} exceeds n = {}", prefix.len(), sp.n),
        ));
    }
    let mut prices = Vec::with_capacity(prefix.len() + 1);
    let mut discounted = Vec::with_capacity(prefix.len() + 1);
    let mut level = 0i64;
    prices.push(sp.price(0, 0));
    discounted.push(sp.discounted_price(0));
    for (i, &s) in prefix.iter().enumerate() {
        level += s as i64;
        prices.push(sp.price(i + 1, level));
        discounted.push(sp.discounted_price(level));
    }
    Ok((prices, discounted))
}

/// Upper end of the barrier interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperBarrier {
    Finite(f64),
    Infinite,
}

impl UpperBarrier {
    pub fn is_above(&self, price: f64) -> bool {
        match *self {
            UpperBarrier::Finite(r) => price < r,
            UpperBarrier::Infinite => true,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            UpperBarrier::Finite(r) => r,
            UpperBarrier::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for UpperBarrier {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            UpperBarrier::Finite(r) => s.serialize_f64(r),
            UpperBarrier::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for UpperBarrier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(UpperBarrier::Finite(r)),
            Raw::Text(t) if t == "inf" => Ok(UpperBarrier::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "upper barrier must be a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    KnockOut,
    KnockIn,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::KnockOut => "knock-out",
            Direction::KnockIn => "knock-in",
        })
    }
}

/// Open interval `(L, R)` together with the barrier direction.
///
/// A price equal to `L` or `R` lies outside the interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    #[serde(rename = "L")]
    pub lower: f64,
    #[serde(rename = "R")]
    pub upper: UpperBarrier,
    pub direction: Direction,
}

impl BarrierSpec {
    pub fn new(lower: f64, upper: UpperBarrier, direction: Direction) -> Result<Self> {
        let b = BarrierSpec {
            lower,
            upper,
            direction,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn knock_out(lower: f64, upper: UpperBarrier) -> Result<Self> {
        Self::new(lower, upper, Direction::KnockOut)
    }

    pub fn knock_in(lower: f64, upper: UpperBarrier) -> Result<Self> {
        Self::new(lower, upper, Direction::KnockIn)
    }

    /// `(0, ∞)` knock-out, i.e. a regular option.
    pub fn none() -> Self {
        BarrierSpec {
            lower: 0.0,
            upper: UpperBarrier::Infinite,
            direction: Direction::KnockOut,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.lower >= 0.0) {
            return Err(Error::invalid("L", format!("must be finite and >= 0, got {}", self.lower)));
        }
        if let UpperBarrier::Finite(r) = self.upper {
            if r.is_nan() || r == f64::INFINITY {
                return Err(Error::invalid("R", "use \"inf\" for an infinite barrier"));
            }
            if self.lower >= r {
                return Err(Error::invalid("L", "L < R violated"));
            }
        }
        Ok(())
    }

    /// Open-interval membership.
    pub fn contains(&self, price: f64) -> bool {
        self.lower < price && self.upper.is_above(price)
    }

    pub fn with_direction(self, direction: Direction) -> Self {
        BarrierSpec { direction, ..self }
    }
}

/// First index with `prices[k] ∉ (L, R)`, or `None` if the prices stay inside.
pub fn barrier_exit_index(prices: &[f64], barrier: &BarrierSpec) -> Option<usize> {
    prices.iter().position(|&s| !barrier.contains(s))
}

/// How much path history a payoff family needs to be evaluated at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    /// The current price suffices (put, call).
    Level,
    /// Current price and running maximum (Russian).
    LevelMax,
    /// Running integrals; the tree does not recombine.
    PathDependent,
}

/// Recombining state enumeration at one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSet {
    /// Net moves `Σξ`, ascending.
    Levels(Vec<i64>),
    /// Pairs `(Σξ, max_{j≤k} Σ_{i≤j} ξ_i)`, sorted.
    LevelMax(Vec<(i64, i64)>),
    PathTreeOnly,
}

/// Enumerates the recombining states at step `k`.
pub fn state_space(sp: &StepParams, kind: StateKind, k: usize) -> Result<StateSet> {
    if k > sp.n {
        return Err(Error::invalid("k", format!("step {k} exceeds n = {}", sp.n)));
    }
    Ok(match kind {
        StateKind::Level => StateSet::Levels((0..=k as i64).map(|j| 2 * j - k as i64).collect()),
        StateKind::LevelMax => {
            let mut states = vec![(0i64, 0i64)];
            for _ in 0..k {
                let mut next: Vec<(i64, i64)> = states
                    .iter()
                    .flat_map(|&(s, m)| [(s + 1, m.max(s + 1)), (s - 1, m)])
                    .collect();
                next.sort_unstable();
                next.dedup();
                states = next;
            }
            StateSet::LevelMax(states)
        }
        StateKind::PathDependent => StateSet::PathTreeOnly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln11_model() -> MarketModel {
        MarketModel::new(100.0, 0.0, 0.0, 1.1f64.ln(), 1.0)
    }

    #[test]
    fn one_step_hand_values() {
        let sp = step_params(&ln11_model(), 1).unwrap();
        assert!((sp.a1 - 0.1).abs() < 1e-14);
        assert!((sp.a2 - (1.0 / 1.1 - 1.0)).abs() < 1e-14);
        assert!((sp.p_tilde - 1.0 / 2.1).abs() < 1e-14);
        assert_eq!(sp.r_n, 0.0);
    }

    #[test]
    fn four_step_hand_values() {
        let model = MarketModel::new(100.0, 0.05, 0.1, 0.2, 1.0);
        let sp = step_params(&model, 4).unwrap();
        assert!((sp.r_n - 0.012_578_451).abs() < 1e-8);
        assert!((sp.a1 - 0.105_170_918).abs() < 1e-8);
        assert!((sp.p - 0.598_687_660).abs() < 1e-8);
        assert!(sp.martingale_residual().abs() <= 1e-12);
        assert!(sp.a1 > 0.0 && sp.a2 < 0.0 && sp.rho_up > sp.rho_dn && sp.rho_dn > -1.0);
    }

    #[test]
    fn zero_drift_makes_measures_coincide() {
        for kappa in [0.1, 0.3, 1.2] {
            let sp = step_params(&MarketModel::new(50.0, 0.03, 0.0, kappa, 2.0), 7).unwrap();
            assert_eq!(sp.p, sp.p_tilde);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(step_params(&ln11_model(), 0).is_err());
        let mut m = ln11_model();
        m.kappa = 0.0;
        assert!(step_params(&m, 3).is_err());
        m = ln11_model();
        m.s0 = -1.0;
        assert!(matches!(step_params(&m, 3), Err(Error::InvalidParameter { field: "s0", .. })));
    }

    #[test]
    fn prices_along_examples() {
        let sp = step_params(&ln11_model(), 2).unwrap();
        let (s, d) = prices_along(&sp, &[]).unwrap();
        assert_eq!((s, d), (vec![100.0], vec![100.0]));
        let one = step_params(&ln11_model(), 1).unwrap();
        let (s, _) = prices_along(&one, &[1]).unwrap();
        assert!((s[1] - 110.0).abs() < 1e-12);
        let (s, _) = prices_along(&sp, &[-1, 1]).unwrap();
        assert_eq!(s[2], 100.0);
        assert!(prices_along(&sp, &[1, 1, 1]).is_err());
    }

    #[test]
    fn discounted_prices_relation() {
        let sp = step_params(&MarketModel::new(80.0, 0.07, 0.02, 0.3, 1.5), 6).unwrap();
        let (s, d) = prices_along(&sp, &[1, -1, -1, 1, 1, 1]).unwrap();
        for k in 0..s.len() {
            let grown = (1.0 + sp.r_n).powi(k as i32) * d[k];
            assert!((s[k] - grown).abs() < 1e-11 * s[k]);
        }
    }

    #[test]
    fn exit_index_examples() {
        let b = BarrierSpec::knock_out(95.0, UpperBarrier::Finite(110.0)).unwrap();
        assert_eq!(barrier_exit_index(&[100.0, 90.909], &b), Some(1));
        assert_eq!(barrier_exit_index(&[100.0, 110.0], &b), Some(1));
        assert_eq!(barrier_exit_index(&[120.0, 100.0], &b), Some(0));
        assert_eq!(barrier_exit_index(&[100.0, 105.0], &b), None);
        assert_eq!(barrier_exit_index(&[1e300], &BarrierSpec::none()), None);
    }

    #[test]
    fn barrier_validation() {
        let err = BarrierSpec::knock_out(110.0, UpperBarrier::Finite(95.0)).unwrap_err();
        assert!(err.to_string().contains("L < R violated"));
        assert!(BarrierSpec::knock_out(-1.0, UpperBarrier::Infinite).is_err());
        assert!(BarrierSpec::knock_in(0.0, UpperBarrier::Infinite).is_ok());
    }

    #[test]
    fn state_space_examples() {
        let sp = step_params(&ln11_model(), 3).unwrap();
        assert_eq!(
            state_space(&sp, StateKind::Level, 3).unwrap(),
            StateSet::Levels(vec![-3, -1, 1, 3])
        );
        assert_eq!(
            state_space(&sp, StateKind::PathDependent, 2).unwrap(),
            StateSet::PathTreeOnly
        );
    }

    #[test]
    fn level_max_states_match_path_enumeration() {
        let sp = step_params(&ln11_model(), 6).unwrap();
        for k in 0..=6usize {
            let mut brute: Vec<(i64, i64)> = (0..1u64 << k)
                .map(|bits| {
                    let p = PathPrefix::from_bits(bits, k);
                    let (mut s, mut m) = (0i64, 0i64);
                    for &x in p.iter() {
                        s += x as i64;
                        m = m.max(s);
                    }
                    (s, m)
                })
                .collect();
            brute.sort_unstable();
            brute.dedup();
            assert_eq!(state_space(&sp, StateKind::LevelMax, k).unwrap(), StateSet::LevelMax(brute));
        }
    }

    #[test]
    fn level_max_two_steps() {
        let sp = step_params(&ln11_model(), 2).unwrap();
        assert_eq!(
            state_space(&sp, StateKind::LevelMax, 2).unwrap(),
            StateSet::LevelMax(vec![(-2, 0), (0, 0), (0, 1), (2, 2)])
        );
    }

    #[test]
    fn upper_barrier_serde() {
        let b: BarrierSpec =
            serde_json::from_str(r#"{"L": 90, "R": "inf", "direction": "knock-in"}"#).unwrap();
        assert_eq!(b.upper, UpperBarrier::Infinite);
        assert_eq!(b.direction, Direction::KnockIn);
        let text = serde_json::to_string(&b).unwrap();
        assert!(text.contains("\"inf\""));
        assert!(serde_json::from_str::<BarrierSpec>(r#"{"L": 90, "R": "big", "direction": "knock-in"}"#).is_err());
    }
}
