use std::fmt;
use std::sync::Arc;

use crate::lattice::{prices_along, StepParams};

/// Trading and cancellation decisions of a hedge, as functions of the sign
/// history `ξ_1..ξ_k` and the current discounted portfolio value.
pub trait HedgeRule: Send + Sync {
    /// Discounted amount `u = γ_{k+1} S̃_k` held in the stock over `(k, k+1]`.
    fn position(&self, signs: &[i8], value: f64) -> f64;

    /// Whether the seller cancels at step `k = signs.len() < n`.
    fn cancels(&self, signs: &[i8], value: f64) -> bool;
}

struct FnRule<P, C> {
    position: P,
    cancels: C,
}

impl<P, C> HedgeRule for FnRule<P, C>
where
    P: Fn(&[i8], f64) -> f64 + Send + Sync,
    C: Fn(&[i8], f64) -> bool + Send + Sync,
{
    fn position(&self, signs: &[i8], value: f64) -> f64 {
        (self.position)(signs, value)
    }

    fn cancels(&self, signs: &[i8], value: f64) -> bool {
        (self.cancels)(signs, value)
    }
}

/// A self-financing strategy with a cancellation rule in the n-step market.
///
/// Once the seller cancels, the portfolio is held entirely in bonds, so its
/// discounted value stays constant.
#[derive(Clone)]
pub struct HedgeStrategy {
    pub initial_capital: f64,
    sp: StepParams,
    b0: f64,
    rule: Arc<dyn HedgeRule>,
}

impl fmt::Debug for HedgeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HedgeStrategy")
            .field("initial_capital", &self.initial_capital)
            .field("n", &self.sp.n)
            .finish_non_exhaustive()
    }
}

/// A strategy replayed along one sign sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    /// Discounted portfolio values `Ṽ_0..Ṽ_k`.
    pub values: Vec<f64>,
    /// Stock holdings `γ_1..γ_k`.
    pub gamma: Vec<f64>,
    /// Bond holdings `β_1..β_k`.
    pub beta: Vec<f64>,
    /// Cancellation index, if the rule fired within the replayed prefix.
    pub cancel: Option<usize>,
}

impl HedgeStrategy {
    pub fn new(initial_capital: f64, sp: &StepParams, b0: f64, rule: Arc<dyn HedgeRule>) -> Self {
        HedgeStrategy {
            initial_capital,
            sp: *sp,
            b0,
            rule,
        }
    }

    pub fn from_fn<P, C>(initial_capital: f64, sp: &StepParams, position: P, cancels: C) -> Self
    where
        P: Fn(&[i8], f64) -> f64 + Send + Sync + 'static,
        C: Fn(&[i8], f64) -> bool + Send + Sync + 'static,
    {
        Self::new(initial_capital, sp, 1.0, Arc::new(FnRule { position, cancels }))
    }

    /// Holds `capital` in bonds and never cancels.
    pub fn idle(capital: f64, sp: &StepParams) -> Self {
        Self::from_fn(capital, sp, |_, _| 0.0, |_, _| false)
    }

    pub fn step_params(&self) -> &StepParams {
        &self.sp
    }

    /// Stock position at a node before the cancellation check is applied.
    pub fn position(&self, signs: &[i8], value: f64) -> f64 {
        self.rule.position(signs, value)
    }

    pub fn cancels(&self, signs: &[i8], value: f64) -> bool {
        signs.len() < self.sp.n && self.rule.cancels(signs, value)
    }

    /// One step of the replay: the position taken at the node and whether the
    /// seller cancels there. `stopped` means an earlier node cancelled.
    pub(crate) fn decide(&self, signs: &[i8], value: f64, stopped: bool) -> (f64, bool) {
        if stopped || signs.len() >= self.sp.n {
            return (0.0, false);
        }
        if self.rule.cancels(signs, value) {
            (0.0, true)
        } else {
            (self.rule.position(signs, value), false)
        }
    }

    /// Discounted value after one step from `value` holding `position`.
    pub(crate) fn advance(&self, value: f64, position: f64, up: bool) -> f64 {
        value + position * if up { self.sp.a1 } else { self.sp.a2 }
    }

    pub fn replay(&self, signs: &[i8]) -> Replay {
        let (_, disc_prices) = prices_along(&self.sp, &signs[..signs.len().min(self.sp.n)])
            .expect("prefix length checked");
        let mut out = Replay {
            values: vec![self.initial_capital],
            gamma: Vec::with_capacity(signs.len()),
            beta: Vec::with_capacity(signs.len()),
            cancel: None,
        };
        let mut stopped = false;
        for k in 0..signs.len() {
            let value = out.values[k];
            let (u, cancel_now) = self.decide(&signs[..k], value, stopped);
            if cancel_now {
                out.cancel = Some(k);
                stopped = true;
            }
            out.gamma.push(u / disc_prices[k]);
            out.beta.push((value - u) / self.b0);
            out.values.push(self.advance(value, u, signs[k] > 0));
        }
        if !stopped && signs.len() < self.sp.n && self.cancels(signs, out.values[signs.len()]) {
            out.cancel = Some(signs.len());
        }
        out
    }

    /// Cancellation index along a full path, `n` if the rule never fires.
    pub fn sigma(&self, signs: &[i8]) -> usize {
        self.replay(signs).cancel.unwrap_or(self.sp.n)
    }
}
