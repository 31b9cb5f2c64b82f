use serde::{Deserialize, Serialize};

use crate::dynkin::{european_value, game_value, Contract, Mode, WidenScheme};
use crate::lattice::MarketModel;
use crate::{Error, Result};

/// Quantity tracked across the step counts of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Valuation {
    #[default]
    Game,
    European,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConvergenceOptions {
    pub valuation: Valuation,
    /// Solver mode; the family's preferred mode when `None`.
    pub mode: Option<Mode>,
    pub widen: WidenScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub value: f64,
    /// `|V_n − V_prev|` for the previous step count in the list.
    pub abs_diff_prev: Option<f64>,
    /// Slope fitted over the differences up to this row.
    pub running_rate: Option<f64>,
    /// The difference was zero and entered the fit as machine epsilon.
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

/// Ordinary least squares of `ln error` on `ln n`; returns `(slope, intercept)`.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.len() < 2 {
        return Err(Error::RateFit(format!("need at least 2 pairs, got {}", pairs.len())));
    }
    if let Some(&(n, e)) = pairs.iter().find(|&&(n, e)| !(e.is_finite() && e > 0.0 && n.is_finite() && n > 0.0)) {
        return Err(Error::RateFit(format!("n and error must be positive, got ({n}, {e})")));
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(n, e)| (n.ln(), e.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::RateFit("all n are equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Prices the contract at every `n` in `n_list` and fits the decay of the
/// successive differences.
pub fn convergence_study(
    model: &MarketModel,
    contract: &Contract,
    n_list: &[usize],
    opts: &ConvergenceOptions,
) -> Result<ConvergenceTable> {
    if n_list.is_empty() {
        return Err(Error::invalid("n_list", "must not be empty"));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(Error::invalid("n_list", "must be positive and strictly increasing"));
    }
    opts.widen.validate()?;
    let mode = opts.mode.unwrap_or_else(|| Mode::preferred(&contract.family));
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(n_list.len());
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for &n in n_list {
        let c = contract.with_barrier(opts.widen.apply(&contract.barrier, n));
        let value = match opts.valuation {
            Valuation::Game => game_value(model, n, &c, mode)?,
            Valuation::European => european_value(model, n, &c.family, &c.barrier)?,
        };
        let mut row = ConvergenceRow {
            n,
            value,
            abs_diff_prev: None,
            running_rate: None,
            floored: false,
        };
        if let Some(prev) = rows.last() {
            let diff = (value - prev.value).abs();
            row.abs_diff_prev = Some(diff);
            row.floored = diff == 0.0;
            pairs.push((prev.n as f64, diff.max(f64::EPSILON)));
            row.running_rate = fit_rate(&pairs).ok().map(|f| f.0);
        }
        rows.push(row);
    }
    let fit = fit_rate(&pairs).ok();
    Ok(ConvergenceTable {
        rows,
        slope: fit.map(|f| f.0),
        intercept: fit.map(|f| f.1),
    })
}
