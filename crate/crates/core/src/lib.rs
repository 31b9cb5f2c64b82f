//! Pricing, perfect hedging and shortfall risk for game (Israeli) barrier
//! options in Cox–Ross–Rubinstein binomial markets, plus a Monte Carlo
//! harness that embeds the binomial hedges into the Black–Scholes market.
//!
//! The crate is organized bottom-up:
//!
//! * [`lattice`]: market parameters, per-step quantities, barrier bookkeeping
//!   and recombining state spaces.
//! * [`payoffs`]: the payoff families, knock-out/knock-in gating and the
//!   Dynkin settlement kernel.
//! * [`dynkin`]: game prices, saddle stopping rules and the Doob-decomposition
//!   perfect hedge.
//! * [`shortfall`]: capital-constrained shortfall risk on a portfolio-value grid
//!   and the risk-minimizing hedge.
//! * [`embedding`]: Brownian exit-time embedding, transfer of discrete hedges
//!   and Monte Carlo shortfall estimates, convergence studies.
//! * [`cli`]: JSON experiment configuration and command dispatch.

pub mod cli;
pub mod dynkin;
pub mod embedding;
mod error;
pub mod lattice;
pub mod payoffs;
pub mod shortfall;

pub use error::{Error, Result};
