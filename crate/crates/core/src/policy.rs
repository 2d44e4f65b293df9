//! Fetch policies behind one decision interface: the full-model lookup table,
//! the quasi-static FON and RFON heuristics, and the two extreme benchmarks.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::closed_form::{
    always_fetch_line, never_fetch_line, switchover_boundary, FluidBranch,
};
use crate::error::{Error, Result};
use crate::model::{Action, CostParams, SystemState};
use crate::solver::{solve_reduced, Grid, PolicyTable, SolveOptions};

/// What a policy may look at in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub b1: u32,
    pub b2: u32,
    /// Instantaneous transmission success probability.
    pub s_hat: f64,
    /// Instantaneous service rate.
    pub mu_hat: f64,
    pub c_hat: f64,
    /// True channel state; only the lookup-table policy reads it.
    pub channel_state: usize,
    /// True processor state; only the lookup-table policy reads it.
    pub processor_state: usize,
}

impl Observables {
    pub fn reduced(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> Self {
        Self {
            b1,
            b2,
            s_hat: s,
            mu_hat: mu,
            c_hat: c,
            channel_state: 0,
            processor_state: 0,
        }
    }
}

pub trait FetchPolicy: Send + Sync {
    fn name(&self) -> &str;

    /// Chooses an action. `u` is a uniform draw in `[0, 1)` reserved for
    /// randomised policies; deterministic policies ignore it.
    fn decide(&self, obs: &Observables, u: f64) -> Result<Action>;
}

/// Stable policy identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Opt,
    Fon,
    Rfon,
    Always,
    Never,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Opt,
        PolicyKind::Fon,
        PolicyKind::Rfon,
        PolicyKind::Always,
        PolicyKind::Never,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Opt => "opt",
            PolicyKind::Fon => "fon",
            PolicyKind::Rfon => "rfon",
            PolicyKind::Always => "always",
            PolicyKind::Never => "never",
        }
    }

    /// Whether the policy's decisions depend on `c`.
    pub fn uses_cost(self) -> bool {
        matches!(self, PolicyKind::Opt | PolicyKind::Fon | PolicyKind::Rfon)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}

/// Optimal full-model policy read from a solved lookup table.
pub struct OptPolicy {
    lut: Arc<PolicyTable>,
}

impl OptPolicy {
    pub fn new(lut: Arc<PolicyTable>) -> Self {
        Self { lut }
    }
}

impl FetchPolicy for OptPolicy {
    fn name(&self) -> &str {
        "opt"
    }

    fn decide(&self, obs: &Observables, _u: f64) -> Result<Action> {
        if obs.b1 == 0 {
            return Ok(Action::NoFetch);
        }
        self.lut.get(&SystemState::new(
            obs.b1,
            obs.b2,
            obs.channel_state,
            obs.processor_state,
        ))
    }
}

pub struct AlwaysFetch;

impl FetchPolicy for AlwaysFetch {
    fn name(&self) -> &str {
        "always"
    }

    fn decide(&self, obs: &Observables, _u: f64) -> Result<Action> {
        Ok(if obs.b1 > 0 {
            Action::Fetch
        } else {
            Action::NoFetch
        })
    }
}

pub struct NeverFetch;

impl FetchPolicy for NeverFetch {
    fn name(&self) -> &str {
        "never"
    }

    fn decide(&self, obs: &Observables, _u: f64) -> Result<Action> {
        Ok(if obs.b1 > 0 && obs.b2 == 0 {
            Action::Fetch
        } else {
            Action::NoFetch
        })
    }
}

const FON_QUANTUM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FonKey {
    s: i64,
    mu: i64,
    c: i64,
    grid: Grid,
}

impl FonKey {
    fn new(s: f64, mu: f64, c: f64, grid: Grid) -> Self {
        let q = |x: f64| (x / FON_QUANTUM).round() as i64;
        Self {
            s: q(s),
            mu: q(mu),
            c: q(c),
            grid,
        }
    }

    fn value(q: i64) -> f64 {
        q as f64 * FON_QUANTUM
    }
}

type FonSlot = Arc<OnceLock<Result<Arc<PolicyTable>>>>;

/// Reduced-model solutions keyed by quantised `(s, mu, c)` and grid size.
/// Each key is solved at most once, even under concurrent lookups.
#[derive(Default)]
pub struct FonCache {
    entries: Mutex<HashMap<FonKey, FonSlot>>,
    solves: AtomicUsize,
    opts: SolveOptions,
}

impl FonCache {
    pub fn new(opts: SolveOptions) -> Self {
        Self {
            entries: Mutex::default(),
            solves: AtomicUsize::new(0),
            opts,
        }
    }

    /// Number of dynamic-programming solves performed so far.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn policy(&self, s: f64, mu: f64, c: f64, grid: Grid) -> Result<Arc<PolicyTable>> {
        let key = FonKey::new(s, mu, c, grid);
        let slot = {
            let mut map = self.entries.lock().unwrap_or_else(|e| e.into_inner());
            Arc::clone(map.entry(key).or_default())
        };
        slot.get_or_init(|| {
            self.solves.fetch_add(1, Ordering::Relaxed);
            let params = CostParams::new(FonKey::value(key.c))?;
            solve_reduced(
                FonKey::value(key.s),
                FonKey::value(key.mu),
                params,
                key.grid,
                self.opts,
            )
            .map(|(_, policy)| Arc::new(policy))
        })
        .clone()
    }
}

/// Fetch-or-not: act as the optimal reduced-model policy at the current
/// operating point `(s_hat, mu_hat, c_hat)`.
pub struct FonPolicy {
    cache: Arc<FonCache>,
    grid: Grid,
}

impl FonPolicy {
    /// `grid` should cover every backlog the policy will see; larger backlogs
    /// fall back to a grid sized to the current state.
    pub fn new(cache: Arc<FonCache>, grid: Grid) -> Self {
        Self { cache, grid }
    }

    pub fn cache(&self) -> &FonCache {
        &self.cache
    }
}

impl FetchPolicy for FonPolicy {
    fn name(&self) -> &str {
        "fon"
    }

    fn decide(&self, obs: &Observables, _u: f64) -> Result<Action> {
        if obs.b1 == 0 {
            return Ok(Action::NoFetch);
        }
        let grid = if self.grid.contains(obs.b1, obs.b2) {
            self.grid
        } else {
            Grid::covering(obs.b1, obs.b2)
        };
        self.cache
            .policy(obs.s_hat, obs.mu_hat, obs.c_hat, grid)?
            .reduced(obs.b1, obs.b2)
    }
}

/// Outcome of the randomised cone rule at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandDecision {
    /// Probability of choosing `NoFetch`.
    pub hold_probability: f64,
    /// Lower and upper cone edges after ordering (fetch below, hold above).
    pub lower: f64,
    pub upper: f64,
    /// The never-fetch edge lay above the always-fetch edge and was swapped.
    pub inverted: bool,
}

/// Real-valued edge of the always-fetch improvement's fetch region in column
/// `b1`, with each state using the fluid branch active at that state.
pub fn always_fetch_edge(b1: u32, s: f64, mu: f64, c: f64) -> f64 {
    let x = f64::from(b1);
    let server_first = switchover_boundary(&always_fetch_line(s, mu, c, FluidBranch::ServerEmptiesFirst), x);
    if s >= mu {
        return server_first;
    }
    // Terminal-first piece applies for b2 <= (mu/s - 1) b1.
    let kink = (mu / s - 1.0) * x;
    if server_first > kink {
        return server_first;
    }
    let terminal_first = switchover_boundary(&always_fetch_line(s, mu, c, FluidBranch::TerminalEmptiesFirst), x);
    terminal_first.min(kink)
}

/// Randomised interpolation between the two one-step-improvement curves.
///
/// Edges below zero are clipped to zero. Below the lower edge the rule
/// fetches, at or above the upper edge it holds, and in between it holds with
/// probability `(b2 - lower) / (upper - lower)`, which tends to zero as the
/// upper edge grows without bound. With an empty terminal queue the rule
/// always fetches, since holding there is a self-loop of the reduced model.
pub fn rand_decision(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> RandDecision {
    let never = switchover_boundary(&never_fetch_line(s, mu, c), f64::from(b1)).max(0.0);
    let always = always_fetch_edge(b1, s, mu, c).max(0.0);
    let inverted = never > always;
    let (lower, upper) = if inverted { (always, never) } else { (never, always) };
    let hold_probability = if b1 == 0 {
        1.0
    } else if b2 == 0 {
        0.0
    } else {
        let y = f64::from(b2);
        if y >= upper {
            1.0
        } else if y <= lower || upper.is_infinite() {
            0.0
        } else {
            (y - lower) / (upper - lower)
        }
    };
    RandDecision {
        hold_probability,
        lower,
        upper,
        inverted,
    }
}

/// Randomised fetch-or-not: the cone rule at the current operating point.
#[derive(Default)]
pub struct RfonPolicy {
    inversions: AtomicU64,
}

impl RfonPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Decisions taken with the cone edges swapped.
    pub fn inversions(&self) -> u64 {
        self.inversions.load(Ordering::Relaxed)
    }
}

impl FetchPolicy for RfonPolicy {
    fn name(&self) -> &str {
        "rfon"
    }

    fn decide(&self, obs: &Observables, u: f64) -> Result<Action> {
        let d = rand_decision(obs.b1, obs.b2, obs.s_hat, obs.mu_hat, obs.c_hat);
        if d.inverted {
            self.inversions.fetch_add(1, Ordering::Relaxed);
        }
        Ok(if u < d.hold_probability {
            Action::NoFetch
        } else {
            Action::Fetch
        })
    }
}
