use serde::{Deserialize, Serialize};

use crate::lattice::StepParams;
use crate::{Error, Result};

/// Resolution of the portfolio-value grid and of the inner hedge search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Grid points on `[0, Y_max]`.
    #[serde(rename = "M")]
    pub m: usize,
    /// Equally spaced hedge candidates on the admissible interval.
    #[serde(rename = "M_u")]
    pub m_u: usize,
    /// Halving steps of the local search around the best candidate.
    pub refine: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            m: 513,
            m_u: 129,
            refine: 20,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid("grid.M", format!("need at least 2 grid points, got {}", self.m)));
        }
        if self.m_u < 2 {
            return Err(Error::invalid("grid.M_u", format!("need at least 2 candidates, got {}", self.m_u)));
        }
        Ok(())
    }
}

/// Hedge positions `u` that keep both one-step outcomes `y + u·a` nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleInterval {
    pub lo: f64,
    pub hi: f64,
}

impl AdmissibleInterval {
    pub fn contains(&self, u: f64) -> bool {
        self.lo <= u && u <= self.hi
    }
}

/// `[−y/a1, −y/a2]` for a discounted portfolio value `y ≥ 0`.
pub fn admissible_interval(y: f64, sp: &StepParams) -> Result<AdmissibleInterval> {
    if !(y.is_finite() && y >= 0.0) {
        return Err(Error::invalid("y", format!("portfolio value must be >= 0, got {y}")));
    }
    Ok(interval(y, sp))
}

pub(crate) fn interval(y: f64, sp: &StepParams) -> AdmissibleInterval {
    if y == 0.0 {
        return AdmissibleInterval { lo: 0.0, hi: 0.0 };
    }
    AdmissibleInterval {
        lo: -y / sp.a1,
        hi: -y / sp.a2,
    }
}

/// Uniform grid `y_i = i·Y_max/(M−1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Grid {
    pub m: usize,
    pub y_max: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(m: usize, y_max: f64) -> Self {
        Grid {
            m,
            y_max,
            dy: y_max / (m - 1) as f64,
        }
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.m {
            self.y_max
        } else {
            i as f64 * self.dy
        }
    }
}

/// A successor's risk function `y ↦ J_{k+1}(y)`.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Table<'a> {
    /// Identically zero (knocked out, or nothing left to cover).
    Zero,
    /// `(f − y)^+` at maturity, evaluated without interpolation.
    Terminal(f64),
    /// Grid values, linearly interpolated and zero beyond `Y_max`.
    Grid(&'a [f64], Grid),
}

impl Table<'_> {
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Table::Zero => 0.0,
            Table::Terminal(f) => (f - y).max(0.0),
            Table::Grid(values, grid) => {
                let y = y.max(0.0);
                if y >= grid.y_max {
                    return 0.0;
                }
                let t = y / grid.dy;
                let i = (t as usize).min(grid.m - 2);
                let w = t - i as f64;
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            Table::Zero => true,
            Table::Terminal(f) => f <= 0.0,
            Table::Grid(..) => false,
        }
    }
}

/// Inner minimization `inf_u p·J_up(y + u a1) + (1−p)·J_dn(y + u a2)`.
pub(crate) struct InnerProblem<'a> {
    pub up: Table<'a>,
    pub dn: Table<'a>,
    pub p: f64,
    pub a1: f64,
    pub a2: f64,
}

impl InnerProblem<'_> {
    #[inline]
    pub fn objective(&self, y: f64, u: f64) -> f64 {
        self.p * self.up.eval(y + u * self.a1) + (1.0 - self.p) * self.dn.eval(y + u * self.a2)
    }

    /// Minimum and smallest minimizer over the candidate grid, `u = 0`,
    /// `hint`, and a halving local search around the incumbent.
    pub fn solve(&self, y: f64, sp: &StepParams, cfg: &GridConfig, hint: Option<f64>) -> (f64, f64) {
        let range = interval(y, sp);
        let zero = self.objective(y, 0.0);
        if range.hi <= range.lo || (self.up.is_zero() && self.dn.is_zero()) {
            return (zero, 0.0);
        }
        let mut best = (zero, 0.0);
        let consider = |u: f64, v: f64, best: &mut (f64, f64)| {
            if v < best.0 || (v == best.0 && u < best.1) {
                *best = (v, u);
            }
        };
        if let Some(h) = hint {
            let h = h.clamp(range.lo, range.hi);
            consider(h, self.objective(y, h), &mut best);
        }
        let step = (range.hi - range.lo) / (cfg.m_u - 1) as f64;
        for j in 0..cfg.m_u {
            let u = if j + 1 == cfg.m_u { range.hi } else { range.lo + j as f64 * step };
            consider(u, self.objective(y, u), &mut best);
        }
        let mut du = step;
        for _ in 0..cfg.refine {
            du *= 0.5;
            let centre = best.1;
            for u in [centre - du, centre + du] {
                if range.contains(u) {
                    consider(u, self.objective(y, u), &mut best);
                }
            }
        }
        best
    }
}
