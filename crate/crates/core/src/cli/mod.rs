//! JSON experiment configuration and command dispatch for the `gamebarrier`
//! binary.
//!
//! Every command returns a JSON document; `simulate` and `converge` also
//! produce one CSV table each. Output only depends on the configuration, so
//! identical configs and seeds give byte-identical documents for any worker
//! count.

mod config;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use crate::dynkin::{perfect_hedge, solve_game, HedgeStrategy, Player, PATH_TREE_MAX_STEPS};
use crate::embedding::{convergence_study, estimate_shortfall_mc, ConvergenceOptions, McTarget};
use crate::shortfall::{extract_optimal_hedge, portfolio_risk, solve_shortfall};
use crate::Error;

pub use config::{parse_config, ExperimentConfig, SimSection};
pub use crate::embedding::fit_rate;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for exceeded numeric budgets, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(Error::InvalidParameter { .. } | Error::NotReducible(_) | Error::NoCandidates) => 2,
            CliError::Numeric(Error::Budget { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Price,
    Shortfall,
    Hedge,
    Simulate,
    Converge,
}

/// A command's result: the JSON document and any CSV tables as `(file name, contents)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub document: Value,
    pub tables: Vec<(String, String)>,
}

impl Output {
    pub fn json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("document serializes")
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Output, CliError> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    match command {
        Command::Price => price(cfg),
        Command::Shortfall => shortfall(cfg),
        Command::Hedge => hedge(cfg),
        Command::Simulate => simulate(cfg),
        Command::Converge => converge(cfg),
    }
}

fn to_value<T: Serialize>(t: &T) -> Value {
    serde_json::to_value(t).expect("result serializes")
}

fn price(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let n = cfg.steps()?;
    let contract = cfg.contract().with_barrier(cfg.widen.apply(&cfg.barrier, n));
    let game = solve_game(&cfg.model, n, &contract, cfg.mode())?;
    let document = json!({
        "command": "price",
        "n": n,
        "mode": to_value(&game.mode),
        "barrier": to_value(&contract.barrier),
        "value": game.value,
        "sigma_star": game.expected_stopping(Player::Seller),
        "tau_star": game.expected_stopping(Player::Buyer),
        "cancel_at_start": game.stops(Player::Seller, &[]),
        "exercise_at_start": game.stops(Player::Buyer, &[]),
    });
    Ok(Output {
        document,
        tables: Vec::new(),
    })
}

fn shortfall(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let n = cfg.steps()?;
    let x = cfg.capital()?;
    let contract = cfg.contract().with_barrier(cfg.widen.apply(&cfg.barrier, n));
    let (risk, surface) = solve_shortfall(&cfg.model, n, &contract, x, &cfg.grid, cfg.mode())?;
    let document = json!({
        "command": "shortfall",
        "n": n,
        "x": x,
        "mode": to_value(&surface.mode),
        "risk": risk,
        "y_max": surface.y_max,
        "grid_resolution": surface.resolution(),
    });
    Ok(Output {
        document,
        tables: Vec::new(),
    })
}

/// Builds the perfect hedge when `x` covers the game price and the
/// risk-minimizing hedge otherwise.
fn build_hedge(
    cfg: &ExperimentConfig,
    n: usize,
    x: f64,
    contract: &crate::dynkin::Contract,
    game: Arc<crate::dynkin::GameSolution>,
) -> Result<(HedgeStrategy, &'static str, f64), CliError> {
    if x >= game.value {
        Ok((perfect_hedge(game, x)?, "perfect", 0.0))
    } else {
        let (risk, surface) = solve_shortfall(&cfg.model, n, contract, x, &cfg.grid, cfg.mode())?;
        Ok((extract_optimal_hedge(Arc::new(surface), x)?, "shortfall-optimal", risk))
    }
}

fn hedge(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let n = cfg.steps()?;
    let x = cfg.capital()?;
    let contract = cfg.contract().with_barrier(cfg.widen.apply(&cfg.barrier, n));
    let game = Arc::new(solve_game(&cfg.model, n, &contract, cfg.mode())?);
    let value = game.value;
    let (strategy, kind, risk) = build_hedge(cfg, n, x, &contract, game)?;
    let audit = if n <= PATH_TREE_MAX_STEPS {
        Some(portfolio_risk(&strategy, &contract)?)
    } else {
        None
    };
    let document = json!({
        "command": "hedge",
        "n": n,
        "x": x,
        "value": value,
        "strategy": kind,
        "risk": risk,
        "stock_position_at_start": strategy.position(&[], x),
        "cancel_at_start": strategy.cancels(&[], x),
        "audited_risk": audit.as_ref().map(|a| a.w0),
        "audited_risk_own_rule": audit.as_ref().map(|a| a.own_rule),
    });
    Ok(Output {
        document,
        tables: Vec::new(),
    })
}

fn simulate(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let n = cfg.steps()?;
    let original = cfg.contract();
    let lattice_contract = original.with_barrier(cfg.widen.apply(&cfg.barrier, n));
    let game = Arc::new(solve_game(&cfg.model, n, &lattice_contract, cfg.mode())?);
    let value = game.value;
    let x = cfg.x.unwrap_or(value);
    let (strategy, kind, risk) = build_hedge(cfg, n, x, &lattice_contract, game.clone())?;
    let target = McTarget {
        model: &cfg.model,
        contract: &original,
        strategy: &strategy,
        game: Some(&game),
    };
    let est = estimate_shortfall_mc(&target, &cfg.sim.sim_config(), &cfg.sim.candidates)?;
    let mut csv = String::from("candidate,estimate,std_err,n_paths\n");
    for c in &est.candidates {
        writeln!(csv, "{},{:.16e},{:.16e},{}", c.candidate, c.estimate, c.std_err, c.n_paths).unwrap();
    }
    let document = json!({
        "command": "simulate",
        "n": n,
        "x": x,
        "value": value,
        "strategy": kind,
        "lattice_risk": risk,
        "lattice_barrier": to_value(&lattice_contract.barrier),
        "seed": cfg.sim.seed,
        "estimates": to_value(&est.candidates),
        "max": to_value(&est.max),
    });
    Ok(Output {
        document,
        tables: vec![("simulate.csv".into(), csv)],
    })
}

fn converge(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let n_list = cfg
        .n_list
        .as_deref()
        .ok_or_else(|| CliError::Config("`n_list` is required for converge".into()))?;
    let opts = ConvergenceOptions {
        valuation: cfg.valuation,
        mode: cfg.mode,
        widen: cfg.widen,
    };
    let table = convergence_study(&cfg.model, &cfg.contract(), n_list, &opts)?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let mut csv = String::from("n,value,abs_diff_prev,running_rate\n");
    for r in &table.rows {
        writeln!(csv, "{},{:.16e},{},{}", r.n, r.value, opt(r.abs_diff_prev), opt(r.running_rate)).unwrap();
    }
    let document = json!({
        "command": "converge",
        "valuation": to_value(&cfg.valuation),
        "rows": to_value(&table.rows),
        "slope": table.slope,
        "intercept": table.intercept,
    });
    Ok(Output {
        document,
        tables: vec![("converge.csv".into(), csv)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            r#"{{
                "model": {{"s0": 100, "r": 0, "mu": 0, "kappa": 0.09531017980432493, "T": 1}},
                "payoff": {{"kind": "game-put", "K": 100, "delta": 2}},
                "n": 1 {extra}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn price_example() {
        let out = run(Command::Price, &base("")).unwrap();
        assert!((out.document["value"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(out.document["sigma_star"].as_f64(), Some(0.0));
        assert!(out.tables.is_empty());
    }

    #[test]
    fn shortfall_example() {
        let out = run(Command::Shortfall, &base(r#", "x": 1"#)).unwrap();
        let y_max = out.document["y_max"].as_f64().unwrap();
        let risk = out.document["risk"].as_f64().unwrap();
        assert!((risk - 1.0).abs() <= 2.0 * y_max / 513.0, "{risk}");
        assert!(matches!(run(Command::Shortfall, &base("")), Err(CliError::Config(_))));
    }

    #[test]
    fn hedge_reports_both_kinds() {
        let out = run(Command::Hedge, &base(r#", "x": 2.5"#)).unwrap();
        assert_eq!(out.document["strategy"], "perfect");
        assert!(out.document["audited_risk"].as_f64().unwrap().abs() < 1e-12);
        let out = run(Command::Hedge, &base(r#", "x": 1"#)).unwrap();
        assert_eq!(out.document["strategy"], "shortfall-optimal");
        let risk = out.document["risk"].as_f64().unwrap();
        let audited = out.document["audited_risk"].as_f64().unwrap();
        assert!((risk - audited).abs() < 0.1, "{risk} vs {audited}");
    }

    #[test]
    fn converge_shape() {
        let cfg = parse_config(
            r#"{
                "model": {"s0": 100, "r": 0.02, "mu": 0.05, "kappa": 0.25, "T": 1},
                "payoff": {"kind": "game-put", "K": 100, "delta": 5},
                "barrier": {"L": 85, "R": 125, "direction": "knock-out"},
                "n_list": [64, 256, 1024]
            }"#,
        )
        .unwrap();
        let out = run(Command::Converge, &cfg).unwrap();
        let (name, csv) = &out.tables[0];
        assert_eq!(name, "converge.csv");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "n,value,abs_diff_prev,running_rate");
        assert_eq!(lines.len(), 4);
        assert!(out.document["slope"].as_f64().is_some());
        assert!(matches!(run(Command::Converge, &base("")), Err(CliError::Config(_))));
    }

    #[test]
    fn budget_errors_exit_with_three() {
        let cfg = base(r#", "mode": "path-tree""#);
        let cfg = ExperimentConfig { n: Some(PATH_TREE_MAX_STEPS + 1), ..cfg };
        let err = run(Command::Price, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        let cfg = parse_config(
            r#"{
                "model": {"s0": 100, "r": 0, "mu": 0, "kappa": 0.1, "T": 1},
                "payoff": {"kind": "integral-put", "K": 100, "c_f": 1, "c_delta": 1},
                "mode": "recombining", "n": 3
            }"#,
        )
        .unwrap();
        assert_eq!(run(Command::Price, &cfg).unwrap_err().exit_code(), 2);
    }
}
