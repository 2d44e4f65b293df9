//! Task prefetching over a two-queue tandem: a central server feeds a mobile
//! terminal across a fading link, and each slot the terminal decides whether
//! to pull another task.
//!
//! The crate holds the Markov model, an exact value-iteration solver, closed
//! forms for the two extreme policies, the online heuristics, and a slotted
//! Monte Carlo simulator that sweeps the backlog-versus-delay tradeoff.

pub mod cli;
pub mod closed_form;
pub mod error;
pub mod model;
pub mod plot;
pub mod policy;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Action, CostParams, Fsmc, SystemState, TandemModel};
pub use policy::{FetchPolicy, Observables, PolicyKind};
pub use sim::{run_batch, run_episode, scenario_preset, sweep_c, ScenarioConfig, TradeoffPoint};
pub use solver::{solve_full, solve_reduced, Grid, PolicyTable, SolveOptions, ValueFunction};
