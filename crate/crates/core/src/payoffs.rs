//! Payoff families, barrier gating and the Dynkin settlement kernel.
//!
//! Path functionals (running maximum, running integral) are evaluated on the
//! piecewise-constant path that holds `S_j` on `[jT/n, (j+1)T/n)`, so the
//! integral is the exact left-endpoint sum `Σ_{j<k} S_j · T/n`.

use serde::{Deserialize, Serialize};

use crate::lattice::{barrier_exit_index, prices_along, BarrierSpec, Direction, StateKind, StepParams};
use crate::Result;

/// Concrete members of the Lipschitz payoff class.
///
/// The integral families use the linear integrands `f_u(x) = c_f·x` and
/// `δ_u(x) = c_δ·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffFamily {
    /// `F = (K − S_t)^+`, `Δ = δ`.
    GamePut {
        #[serde(rename = "K")]
        strike: f64,
        delta: f64,
    },
    /// `F = (S_t − K)^+`, `Δ = δ`.
    GameCall {
        #[serde(rename = "K")]
        strike: f64,
        delta: f64,
    },
    /// `F = max(m, sup_{[0,t]} S)`, `Δ = δ_rate · S_t`.
    Russian { m: f64, delta_rate: f64 },
    /// `F = (K − c_f ∫S)^+`, `Δ = c_δ ∫S`.
    IntegralPut {
        #[serde(rename = "K")]
        strike: f64,
        c_f: f64,
        c_delta: f64,
    },
    /// `F = (c_f ∫S − K)^+`, `Δ = c_δ ∫S`.
    IntegralCall {
        #[serde(rename = "K")]
        strike: f64,
        c_f: f64,
        c_delta: f64,
    },
}

/// Sufficient statistic of a piecewise-constant price path on `[0, t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub current: f64,
    pub running_max: f64,
    /// `∫_0^t v_u du`
    pub integral: f64,
}

impl PathSummary {
    pub fn start(s0: f64) -> Self {
        PathSummary {
            current: s0,
            running_max: s0,
            integral: 0.0,
        }
    }

    /// Holds the current price for `dt`, then jumps to `next`.
    pub fn advance(&mut self, next: f64, dt: f64) {
        self.integral += self.current * dt;
        self.current = next;
        if next > self.running_max {
            self.running_max = next;
        }
    }
}

/// `(F_t, Δ_t, G_t)` at one date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsic {
    pub f: f64,
    pub delta: f64,
    pub g: f64,
}

impl PayoffFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PayoffFamily::GamePut { .. } => "game-put",
            PayoffFamily::GameCall { .. } => "game-call",
            PayoffFamily::Russian { .. } => "russian",
            PayoffFamily::IntegralPut { .. } => "integral-put",
            PayoffFamily::IntegralCall { .. } => "integral-call",
        }
    }

    pub fn state_kind(&self) -> StateKind {
        match self {
            PayoffFamily::GamePut { .. } | PayoffFamily::GameCall { .. } => StateKind::Level,
            PayoffFamily::Russian { .. } => StateKind::LevelMax,
            PayoffFamily::IntegralPut { .. } | PayoffFamily::IntegralCall { .. } => {
                StateKind::PathDependent
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |field: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(crate::Error::invalid(field, format!("must be finite and >= 0, got {v}")))
            }
        };
        match *self {
            PayoffFamily::GamePut { strike, delta } | PayoffFamily::GameCall { strike, delta } => {
                check("K", strike)?;
                check("delta", delta)
            }
            PayoffFamily::Russian { m, delta_rate } => {
                check("m", m)?;
                check("delta_rate", delta_rate)
            }
            PayoffFamily::IntegralPut { strike, c_f, c_delta }
            | PayoffFamily::IntegralCall { strike, c_f, c_delta } => {
                check("K", strike)?;
                check("c_f", c_f)?;
                check("c_delta", c_delta)
            }
        }
    }

    /// Lipschitz constant of the family in the sense of the payoff class:
    /// `|F_t(v) − F_t(ṽ)| + |Δ_t(v) − Δ_t(ṽ)| ≤ 𝓛 (t+1) sup|v − ṽ|`.
    pub fn lipschitz_constant(&self) -> f64 {
        match *self {
            PayoffFamily::GamePut { .. } | PayoffFamily::GameCall { .. } => 1.0,
            PayoffFamily::Russian { delta_rate, .. } => 1.0 + delta_rate,
            PayoffFamily::IntegralPut { c_f, c_delta, .. }
            | PayoffFamily::IntegralCall { c_f, c_delta, .. } => (c_f + c_delta).max(1.0),
        }
    }

    pub fn evaluate(&self, path: &PathSummary) -> Intrinsic {
        let (f, delta) = match *self {
            PayoffFamily::GamePut { strike, delta } => ((strike - path.current).max(0.0), delta),
            PayoffFamily::GameCall { strike, delta } => ((path.current - strike).max(0.0), delta),
            PayoffFamily::Russian { m, delta_rate } => {
                (m.max(path.running_max), delta_rate * path.current)
            }
            PayoffFamily::IntegralPut { strike, c_f, c_delta } => {
                ((strike - c_f * path.integral).max(0.0), c_delta * path.integral)
            }
            PayoffFamily::IntegralCall { strike, c_f, c_delta } => {
                ((c_f * path.integral - strike).max(0.0), c_delta * path.integral)
            }
        };
        Intrinsic {
            f,
            delta,
            g: f + delta,
        }
    }
}

/// `(F_k, Δ_k, G_k)` for the path `prices[0..=k]` sampled every `step_time`.
pub fn intrinsic(family: &PayoffFamily, prices: &[f64], step_time: f64) -> Intrinsic {
    let mut path = PathSummary::start(prices[0]);
    for &s in &prices[1..] {
        path.advance(s, step_time);
    }
    family.evaluate(&path)
}

/// Which amount the seller pays on cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// Each leg is gated by the barrier and discounted at its own date.
    #[default]
    PerLeg,
    /// Both legs are discounted at `s ∧ k` and the cancellation leg is not
    /// gated by the barrier.
    MinTime,
}

/// Discounted payoffs along one lattice path.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedPayoffs {
    /// Discounted buyer payoffs `Ỹ_0..Ỹ_k`.
    pub y_tilde: Vec<f64>,
    /// Discounted seller payoffs `X̃_0..X̃_k`, gated for knock-out, ungated
    /// for knock-in.
    pub x_tilde: Vec<f64>,
    /// Discounted ungated `G_0..G_k`.
    pub g_tilde: Vec<f64>,
    /// Barrier exit index, if the path leaves the interval.
    pub tau: Option<usize>,
    pub direction: Direction,
}

impl GatedPayoffs {
    /// Seller leg at index `s` under `convention`.
    pub fn seller(&self, s: usize, convention: Convention) -> f64 {
        match convention {
            Convention::PerLeg => self.x_tilde[s],
            Convention::MinTime => self.g_tilde[s],
        }
    }
}

/// Gated, discounted payoffs along `prefix` (usually a full path of length n).
pub fn gated_discounted(
    family: &PayoffFamily,
    sp: &StepParams,
    prefix: &[i8],
    barrier: &BarrierSpec,
) -> Result<GatedPayoffs> {
    let (prices, _) = prices_along(sp, prefix)?;
    let tau = barrier_exit_index(&prices, barrier);
    let knocked = |k: usize| tau.is_some_and(|t| k >= t);
    let mut out = GatedPayoffs {
        y_tilde: Vec::with_capacity(prices.len()),
        x_tilde: Vec::with_capacity(prices.len()),
        g_tilde: Vec::with_capacity(prices.len()),
        tau,
        direction: barrier.direction,
    };
    let mut path = PathSummary::start(prices[0]);
    for (k, &s) in prices.iter().enumerate() {
        if k > 0 {
            path.advance(s, sp.step_time());
        }
        let v = family.evaluate(&path);
        let disc = sp.discount(k);
        let (y, x) = match barrier.direction {
            Direction::KnockOut if knocked(k) => (0.0, 0.0),
            Direction::KnockOut => (v.f, v.g),
            Direction::KnockIn if knocked(k) => (v.f, v.g),
            Direction::KnockIn => (0.0, v.g),
        };
        out.y_tilde.push(disc * y);
        out.x_tilde.push(disc * x);
        out.g_tilde.push(disc * v.g);
    }
    Ok(out)
}

/// Discounted settlement when the seller stops at `s` and the buyer at `k`.
/// The buyer's leg pays on ties.
pub fn dynkin_kernel(g: &GatedPayoffs, s: usize, k: usize, convention: Convention) -> f64 {
    if s < k {
        g.seller(s, convention)
    } else {
        g.y_tilde[k]
    }
}

/// Discounted buyer and seller legs at a single node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NodePayoffs {
    pub buyer: f64,
    pub seller: f64,
}

/// Node payoffs from a path summary; `knocked` means the barrier has been
/// left at or before this step.
pub(crate) fn node_payoffs(
    family: &PayoffFamily,
    direction: Direction,
    convention: Convention,
    discount: f64,
    path: &PathSummary,
    knocked: bool,
) -> NodePayoffs {
    let v = family.evaluate(path);
    let (buyer, seller) = match direction {
        Direction::KnockOut if knocked => (0.0, if convention == Convention::MinTime { v.g } else { 0.0 }),
        Direction::KnockOut => (v.f, v.g),
        Direction::KnockIn => (if knocked { v.f } else { 0.0 }, v.g),
    };
    NodePayoffs {
        buyer: discount * buyer,
        seller: discount * seller,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{step_params, MarketModel, PathPrefix, UpperBarrier};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_step() -> StepParams {
        step_params(&MarketModel::new(100.0, 0.0, 0.0, 1.1f64.ln(), 1.0), 1).unwrap()
    }

    const PUT: PayoffFamily = PayoffFamily::GamePut {
        strike: 100.0,
        delta: 2.0,
    };

    #[test]
    fn intrinsic_examples() {
        let v = intrinsic(&PUT, &[100.0, 100.0 / 1.1], 1.0);
        assert!((v.f - 9.090_909_090_909).abs() < 1e-9);
        assert_eq!(v.delta, 2.0);
        assert!((v.g - 11.090_909_090_909).abs() < 1e-9);

        let russian = PayoffFamily::Russian {
            m: 120.0,
            delta_rate: 0.1,
        };
        assert_eq!(intrinsic(&russian, &[100.0], 0.5).f, 120.0);

        let ip = PayoffFamily::IntegralPut {
            strike: 50.0,
            c_f: 0.3,
            c_delta: 0.1,
        };
        assert_eq!(intrinsic(&ip, &[100.0], 0.5).f, 50.0);
    }

    #[test]
    fn integral_uses_left_endpoints() {
        let ic = PayoffFamily::IntegralCall {
            strike: 10.0,
            c_f: 1.0,
            c_delta: 0.5,
        };
        // ∫ = 0.5·(100 + 110) = 105; the final price does not contribute yet.
        let v = intrinsic(&ic, &[100.0, 110.0, 90.0], 0.5);
        assert!((v.f - 95.0).abs() < 1e-12);
        assert!((v.delta - 52.5).abs() < 1e-12);
    }

    #[test]
    fn gating_examples() {
        let sp = one_step();
        let b = BarrierSpec::knock_out(95.0, UpperBarrier::Infinite).unwrap();
        let g = gated_discounted(&PUT, &sp, &[-1], &b).unwrap();
        assert_eq!(g.tau, Some(1));
        assert_eq!(g.y_tilde, vec![0.0, 0.0]);
        assert_eq!(g.x_tilde, vec![2.0, 0.0]);

        let g = gated_discounted(&PUT, &sp, &[-1], &b.with_direction(Direction::KnockIn)).unwrap();
        assert_eq!(g.y_tilde[0], 0.0);
        assert!((g.y_tilde[1] - 100.0 / 11.0).abs() < 1e-12);
        assert_eq!(g.x_tilde[0], 2.0);
        assert!((g.x_tilde[1] - (2.0 + 100.0 / 11.0)).abs() < 1e-12);
    }

    #[test]
    fn kernel_examples() {
        let sp = one_step();
        let b = BarrierSpec::knock_out(95.0, UpperBarrier::Infinite).unwrap();
        let g = gated_discounted(&PUT, &sp, &[-1], &b).unwrap();
        // ties pay the buyer's leg
        assert_eq!(dynkin_kernel(&g, 0, 0, Convention::PerLeg), g.y_tilde[0]);
        assert_eq!(dynkin_kernel(&g, 1, 1, Convention::PerLeg), 0.0);
        // before the exit both conventions agree
        assert_eq!(
            dynkin_kernel(&g, 0, 1, Convention::PerLeg),
            dynkin_kernel(&g, 0, 1, Convention::MinTime)
        );
        assert_eq!(dynkin_kernel(&g, 0, 1, Convention::PerLeg), 2.0);
    }

    fn families() -> Vec<PayoffFamily> {
        vec![
            PUT,
            PayoffFamily::GameCall {
                strike: 95.0,
                delta: 3.0,
            },
            PayoffFamily::Russian {
                m: 105.0,
                delta_rate: 0.05,
            },
            PayoffFamily::IntegralPut {
                strike: 100.0,
                c_f: 0.8,
                c_delta: 0.1,
            },
            PayoffFamily::IntegralCall {
                strike: 60.0,
                c_f: 0.9,
                c_delta: 0.3,
            },
        ]
    }

    #[test]
    fn knock_out_and_knock_in_buyer_legs_partition_the_payoff() {
        let sp = step_params(&MarketModel::new(100.0, 0.04, 0.1, 0.3, 1.0), 8).unwrap();
        let out = BarrierSpec::knock_out(90.0, UpperBarrier::Finite(112.0)).unwrap();
        let inn = out.with_direction(Direction::KnockIn);
        let free = BarrierSpec::none();
        for fam in families() {
            for bits in 0..1u64 << 8 {
                let path = PathPrefix::from_bits(bits, 8);
                let a = gated_discounted(&fam, &sp, &path, &out).unwrap();
                let b = gated_discounted(&fam, &sp, &path, &inn).unwrap();
                let c = gated_discounted(&fam, &sp, &path, &free).unwrap();
                for k in 0..=8 {
                    assert!((a.y_tilde[k] + b.y_tilde[k] - c.y_tilde[k]).abs() <= 1e-12);
                    assert!(a.x_tilde[k] >= a.y_tilde[k] && a.y_tilde[k] >= 0.0);
                    assert!(b.x_tilde[k] >= b.y_tilde[k]);
                    assert_eq!(b.x_tilde[k], c.x_tilde[k]);
                }
            }
        }
    }

    #[test]
    fn widening_raises_knock_out_and_lowers_knock_in() {
        let sp = step_params(&MarketModel::new(100.0, 0.02, 0.0, 0.25, 1.0), 8).unwrap();
        let narrow = BarrierSpec::knock_out(92.0, UpperBarrier::Finite(108.0)).unwrap();
        let wide = BarrierSpec::knock_out(85.0, UpperBarrier::Finite(118.0)).unwrap();
        for fam in families() {
            for bits in 0..1u64 << 8 {
                let path = PathPrefix::from_bits(bits, 8);
                let n_out = gated_discounted(&fam, &sp, &path, &narrow).unwrap();
                let w_out = gated_discounted(&fam, &sp, &path, &wide).unwrap();
                let n_in = gated_discounted(&fam, &sp, &path, &narrow.with_direction(Direction::KnockIn)).unwrap();
                let w_in = gated_discounted(&fam, &sp, &path, &wide.with_direction(Direction::KnockIn)).unwrap();
                for k in 0..=8 {
                    assert!(w_out.y_tilde[k] >= n_out.y_tilde[k]);
                    assert!(w_out.x_tilde[k] >= n_out.x_tilde[k]);
                    assert!(w_in.y_tilde[k] <= n_in.y_tilde[k]);
                }
            }
        }
    }

    #[test]
    fn empirical_lipschitz_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for fam in families() {
            let lip = fam.lipschitz_constant();
            for _ in 0..10_000 {
                let len = rng.gen_range(1..12usize);
                let dt = rng.gen_range(0.01..0.3);
                let v: Vec<f64> = (0..len).map(|_| rng.gen_range(20.0..200.0)).collect();
                let w: Vec<f64> = v.iter().map(|x| x + rng.gen_range(-5.0..5.0)).collect();
                let t = dt * (len - 1) as f64;
                let a = intrinsic(&fam, &v, dt);
                let b = intrinsic(&fam, &w, dt);
                let d = v.iter().zip(&w).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let lhs = (a.f - b.f).abs() + (a.delta - b.delta).abs();
                assert!(lhs <= lip * (t + 1.0) * d + 1e-9, "{} {lhs} {d}", fam.name());

                // time regularity: stop the same path one step earlier
                if len >= 2 {
                    let s = t - dt;
                    let c = intrinsic(&fam, &v[..len - 1], dt);
                    let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    let osc = (v[len - 1] - v[len - 2]).abs();
                    let lhs = (a.f - c.f).abs() + (a.delta - c.delta).abs();
                    assert!(lhs <= lip * ((t - s) * (1.0 + sup) + osc) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn serde_families() {
        let f: PayoffFamily = serde_json::from_str(r#"{"kind": "game-put", "K": 100, "delta": 2}"#).unwrap();
        assert_eq!(f, PUT);
        assert!(serde_json::from_str::<PayoffFamily>(r#"{"kind": "game-put", "K": 1, "delta": 2, "x": 1}"#).is_err());
        let r: PayoffFamily = serde_json::from_str(r#"{"kind": "russian", "m": 1, "delta_rate": 0.1}"#).unwrap();
        assert_eq!(r.state_kind(), StateKind::LevelMax);
    }
}
