use serde::{Deserialize, Serialize};

use crate::dynkin::{Contract, Mode, WidenScheme};
use crate::embedding::{CandidateFlags, Measure, SimConfig, Valuation};
use crate::lattice::{BarrierSpec, Direction, MarketModel, UpperBarrier};
use crate::payoffs::{Convention, PayoffFamily};
use crate::shortfall::GridConfig;

use super::CliError;

/// Monte Carlo section of an experiment: the simulation settings plus the
/// buyer candidates that enter the shortfall estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub paths: usize,
    pub dt_divisor: f64,
    pub seed: u64,
    pub bridge: bool,
    pub measure: Measure,
    pub candidates: CandidateFlags,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection::from(SimConfig::default())
    }
}

impl From<SimConfig> for SimSection {
    fn from(c: SimConfig) -> Self {
        SimSection {
            paths: c.paths,
            dt_divisor: c.dt_divisor,
            seed: c.seed,
            bridge: c.bridge,
            measure: c.measure,
            candidates: CandidateFlags::default(),
        }
    }
}

impl SimSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            paths: self.paths,
            dt_divisor: self.dt_divisor,
            seed: self.seed,
            bridge: self.bridge,
            measure: self.measure,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: MarketModel,
    #[serde(default = "BarrierSpec::none")]
    pub barrier: BarrierSpec,
    pub payoff: PayoffFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Initial capital.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub convention: Convention,
    #[serde(default)]
    pub widen: WidenScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub valuation: Valuation,
}

impl ExperimentConfig {
    pub fn validate(&self) -> crate::Result<()> {
        self.model.validate()?;
        self.barrier.validate()?;
        self.payoff.validate()?;
        self.grid.validate()?;
        self.sim.sim_config().validate()?;
        self.widen.validate()?;
        if self.barrier.direction == Direction::KnockOut {
            let above = self.model.s0 > self.barrier.lower;
            let below = match self.barrier.upper {
                UpperBarrier::Finite(r) => self.model.s0 < r,
                UpperBarrier::Infinite => true,
            };
            if !(above && below) {
                return Err(crate::Error::invalid("barrier", "L < s0 < R violated for a knock-out run"));
            }
        }
        if let Some(x) = self.x {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(crate::Error::invalid("x", format!("x >= 0 violated, got {x}")));
            }
        }
        if self.n == Some(0) {
            return Err(crate::Error::invalid("n", "n >= 1 violated"));
        }
        if let Some(list) = &self.n_list {
            if list.is_empty() || list.contains(&0) {
                return Err(crate::Error::invalid("n_list", "entries must be >= 1 and the list nonempty"));
            }
        }
        Ok(())
    }

    pub fn contract(&self) -> Contract {
        Contract::new(self.payoff, self.barrier).with_convention(self.convention)
    }

    /// The configured mode, or the family's preferred one.
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or_else(|| Mode::preferred(&self.payoff))
    }

    pub fn steps(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| CliError::Config("`n` is required for this command".into()))
    }

    pub fn capital(&self) -> Result<f64, CliError> {
        self.x.ok_or_else(|| CliError::Config("`x` is required for this command".into()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates an experiment configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}
