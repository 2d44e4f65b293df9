//! Stochastic-shortest-path value iteration over the truncated backlog grid.
//!
//! The draining dynamics never increase `b1` or `b1 + b2`, so the triangular
//! grid `{b1 <= b1_max, b1 + b2 <= b1_max + b2_max}` is closed under every
//! transition and the truncated problem is exact on it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{queue_cost, queue_moves, Action, CostParams, SystemState, TandemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub b1_max: u32,
    pub b2_max: u32,
}

impl Grid {
    pub fn new(b1_max: u32, b2_max: u32) -> Self {
        Self { b1_max, b2_max }
    }

    /// Smallest grid holding every state reachable from `(b1, b2)`.
    pub fn covering(b1: u32, b2: u32) -> Self {
        Self::new(b1, b2)
    }

    pub fn total_max(&self) -> u32 {
        self.b1_max + self.b2_max
    }

    /// Largest `b2` in column `b1`.
    pub fn column_top(&self, b1: u32) -> u32 {
        self.total_max() - b1
    }

    pub fn contains(&self, b1: u32, b2: u32) -> bool {
        b1 <= self.b1_max && b1 + b2 <= self.total_max()
    }

    fn column_offset(&self, b1: u32) -> usize {
        let (b1, t) = (b1 as usize, self.total_max() as usize);
        b1 * (t + 1) - b1 * b1.saturating_sub(1) / 2
    }

    pub fn index(&self, b1: u32, b2: u32) -> Option<usize> {
        self.contains(b1, b2)
            .then(|| self.column_offset(b1) + b2 as usize)
    }

    pub fn len(&self) -> usize {
        self.column_offset(self.b1_max + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid states ordered by increasing `b1 + b2`, then increasing `b1`.
    /// Every transition except a self-loop leads to an earlier state.
    pub fn sweep_order(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.len());
        for total in 0..=self.total_max() {
            for b1 in 0..=total.min(self.b1_max) {
                out.push((b1, total - b1));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub tol: f64,
}

/// Relative gap below which two action costs are treated as a tie.
pub const TIE_TOL: f64 = 1e-9;

/// Expected cost-to-go on a grid, one entry per `(b1, b2, j, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    grid: Grid,
    model: TandemModel,
    params: CostParams,
    values: Vec<f64>,
}

impl ValueFunction {
    fn zeros(grid: Grid, model: TandemModel, params: CostParams) -> Self {
        let n = grid.len() * model.num_env_states();
        Self {
            grid,
            model,
            params,
            values: vec![0.0; n],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn model(&self) -> &TandemModel {
        &self.model
    }

    pub fn params(&self) -> CostParams {
        self.params
    }

    fn slot(&self, b1: u32, b2: u32, j: usize, m: usize) -> Option<usize> {
        let nm = self.model.processor.num_states();
        if j >= self.model.channel.num_states() || m >= nm {
            return None;
        }
        self.grid
            .index(b1, b2)
            .map(|i| i * self.model.num_env_states() + j * nm + m)
    }

    pub fn get(&self, state: &SystemState) -> Option<f64> {
        self.slot(state.b1, state.b2, state.j, state.m)
            .map(|i| self.values[i])
    }

    pub fn value(&self, b1: u32, b2: u32, j: usize, m: usize) -> Result<f64> {
        self.slot(b1, b2, j, m)
            .map(|i| self.values[i])
            .ok_or(Error::OutOfGrid { b1, b2, j, m })
    }

    /// Value in the single-environment (reduced) model.
    pub fn reduced(&self, b1: u32, b2: u32) -> Result<f64> {
        self.value(b1, b2, 0, 0)
    }

    /// Value averaged over the stationary laws of the two chains.
    pub fn stationary_value(&self, b1: u32, b2: u32) -> Result<f64> {
        let pj = self.model.channel.stationary_distribution();
        let pm = self.model.processor.stationary_distribution();
        let mut acc = 0.0;
        for (j, wj) in pj.iter().enumerate() {
            for (m, wm) in pm.iter().enumerate() {
                acc += wj * wm * self.value(b1, b2, j, m)?;
            }
        }
        Ok(acc)
    }

    /// Expected cost of `action` in `state` followed by this value function.
    pub fn q_value(&self, state: &SystemState, action: Action) -> f64 {
        let (rest, self_prob) = self.q_split(state, action);
        queue_cost(state.b1, state.b2, self.params.c) + rest + self_prob * self.values[self.slot(state.b1, state.b2, state.j, state.m).expect("state in grid")]
    }

    /// Splits the one-step expectation into the part leading elsewhere and
    /// the self-loop probability.
    fn q_split(&self, x: &SystemState, action: Action) -> (f64, f64) {
        let s = self.model.channel.attribute(x.j);
        let mu = self.model.processor.attribute(x.m);
        let nm = self.model.processor.num_states();
        let ne = self.model.num_env_states();
        let crow = self.model.channel.row(x.j);
        let prow = self.model.processor.row(x.m);
        let mut rest = 0.0;
        let mut self_prob = 0.0;
        for mv in queue_moves(x.b1, x.b2, action, s, mu).as_slice() {
            if mv.prob == 0.0 {
                continue;
            }
            let base = self.grid.index(mv.b1, mv.b2).expect("grid is closed") * ne;
            for (jn, &pj) in crow.iter().enumerate() {
                if pj == 0.0 {
                    continue;
                }
                for (mn, &pm) in prow.iter().enumerate() {
                    let p = mv.prob * pj * pm;
                    if mv.b1 == x.b1 && mv.b2 == x.b2 && jn == x.j && mn == x.m {
                        self_prob += p;
                    } else {
                        rest += p * self.values[base + jn * nm + mn];
                    }
                }
            }
        }
        (rest, self_prob)
    }

    /// Greedy action; equal costs resolve to `NoFetch`. Costs closer than
    /// [`TIE_TOL`] (relative) are below the solver's resolution and count as
    /// equal.
    pub fn greedy_action(&self, state: &SystemState) -> Action {
        if state.b1 == 0 {
            return Action::NoFetch;
        }
        let fe = self.q_value(state, Action::Fetch);
        let hold = self.q_value(state, Action::NoFetch);
        if fe < hold - TIE_TOL * hold.abs().max(1.0) {
            Action::Fetch
        } else {
            Action::NoFetch
        }
    }

    /// Sup-norm Bellman residual over non-terminal grid states.
    pub fn bellman_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for_each_state(&self.grid, &self.model, |x, i| {
            if x.is_terminal() {
                return;
            }
            let best = self
                .q_value(&x, Action::NoFetch)
                .min(self.q_value(&x, Action::Fetch));
            worst = worst.max((best - self.values[i]).abs());
        });
        worst
    }

    /// Residual of the fixed-policy equations for `policy`.
    pub fn policy_residual(&self, policy: &PolicyTable) -> f64 {
        let mut worst: f64 = 0.0;
        for_each_state(&self.grid, &self.model, |x, i| {
            if x.is_terminal() {
                return;
            }
            let q = self.q_value(&x, policy.actions[i]);
            worst = worst.max((q - self.values[i]).abs());
        });
        worst
    }
}

fn for_each_state(grid: &Grid, model: &TandemModel, mut f: impl FnMut(SystemState, usize)) {
    let nj = model.channel.num_states();
    let nm = model.processor.num_states();
    for (b1, b2) in grid.sweep_order() {
        let base = grid.index(b1, b2).expect("in grid") * nj * nm;
        for j in 0..nj {
            for m in 0..nm {
                f(SystemState::new(b1, b2, j, m), base + j * nm + m);
            }
        }
    }
}

/// State-to-action lookup table on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    grid: Grid,
    model: TandemModel,
    params: CostParams,
    actions: Vec<Action>,
    stats: Option<SolveStats>,
}

impl PolicyTable {
    /// Tabulates an arbitrary decision rule on the grid.
    pub fn from_fn(
        grid: Grid,
        model: TandemModel,
        params: CostParams,
        mut rule: impl FnMut(&SystemState) -> Action,
    ) -> Self {
        let mut actions = vec![Action::NoFetch; grid.len() * model.num_env_states()];
        for_each_state(&grid, &model, |x, i| {
            actions[i] = if x.is_terminal() {
                Action::NoFetch
            } else {
                rule(&x)
            };
        });
        Self {
            grid,
            model,
            params,
            actions,
            stats: None,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn model(&self) -> &TandemModel {
        &self.model
    }

    pub fn params(&self) -> CostParams {
        self.params
    }

    pub fn stats(&self) -> Option<SolveStats> {
        self.stats
    }

    pub fn get(&self, state: &SystemState) -> Result<Action> {
        let nm = self.model.processor.num_states();
        let ok = state.j < self.model.channel.num_states() && state.m < nm;
        ok.then(|| self.grid.index(state.b1, state.b2))
            .flatten()
            .map(|i| self.actions[i * self.model.num_env_states() + state.j * nm + state.m])
            .ok_or(Error::OutOfGrid {
                b1: state.b1,
                b2: state.b2,
                j: state.j,
                m: state.m,
            })
    }

    pub fn reduced(&self, b1: u32, b2: u32) -> Result<Action> {
        self.get(&SystemState::new(b1, b2, 0, 0))
    }

    /// Set of `(b1, b2)` where the `(j, m)` slice selects `Fetch`.
    pub fn fetch_region(&self, j: usize, m: usize) -> Vec<(u32, u32)> {
        self.grid
            .sweep_order()
            .into_iter()
            .filter(|&(b1, b2)| {
                self.get(&SystemState::new(b1, b2, j, m)) == Ok(Action::Fetch)
            })
            .collect()
    }
}

/// Solves the Bellman equations for the full four-dimensional model.
///
/// Gauss–Seidel sweeps run in [`Grid::sweep_order`]; each update solves out
/// the state's own self-loop, which leaves the fixed point unchanged. The
/// returned value function has a standard Bellman residual of at most
/// `opts.tol`.
pub fn solve_full(
    model: &TandemModel,
    params: CostParams,
    grid: Grid,
    opts: SolveOptions,
) -> Result<(ValueFunction, PolicyTable)> {
    model.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let mut vf = ValueFunction::zeros(grid, model.clone(), params);
    let order = grid.sweep_order();
    let nj = model.channel.num_states();
    let nm = model.processor.num_states();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        for &(b1, b2) in &order {
            if b1 == 0 && b2 == 0 {
                continue;
            }
            let base = grid.index(b1, b2).expect("in grid") * nj * nm;
            for j in 0..nj {
                for m in 0..nm {
                    let x = SystemState::new(b1, b2, j, m);
                    let g = queue_cost(b1, b2, params.c);
                    let eliminated = |a| {
                        let (rest, p_self) = vf.q_split(&x, a);
                        if p_self < 1.0 {
                            (g + rest) / (1.0 - p_self)
                        } else {
                            f64::INFINITY
                        }
                    };
                    let hold = eliminated(Action::NoFetch);
                    let v = if b1 > 0 {
                        hold.min(eliminated(Action::Fetch))
                    } else {
                        hold
                    };
                    vf.values[base + j * nm + m] = v;
                }
            }
        }
        residual = vf.bellman_residual();
        if residual <= opts.tol {
            break;
        }
    }
    if !(residual <= opts.tol) {
        return Err(Error::NotConverged {
            iterations,
            residual,
        });
    }
    let mut policy = PolicyTable::from_fn(grid, model.clone(), params, |x| vf.greedy_action(x));
    policy.stats = Some(SolveStats {
        iterations,
        residual,
        tol: opts.tol,
    });
    Ok((vf, policy))
}

/// The reduced model: fixed success probability `s` and service rate `mu`.
pub fn solve_reduced(
    s: f64,
    mu: f64,
    params: CostParams,
    grid: Grid,
    opts: SolveOptions,
) -> Result<(ValueFunction, PolicyTable)> {
    let model = TandemModel::reduced(s, mu)?;
    solve_full(&model, params, grid, opts)
}

/// Expected cost-to-go of a fixed policy, by the same sweeps with the action
/// pinned. Policies that never reach the terminal state from some grid state
/// produce infinite values there.
pub fn evaluate_policy(
    policy: &PolicyTable,
    opts: SolveOptions,
) -> Result<ValueFunction> {
    let grid = policy.grid;
    let model = &policy.model;
    let params = policy.params;
    let mut vf = ValueFunction::zeros(grid, model.clone(), params);
    let order = grid.sweep_order();
    let nj = model.channel.num_states();
    let nm = model.processor.num_states();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < opts.max_iters {
        iterations += 1;
        for &(b1, b2) in &order {
            if b1 == 0 && b2 == 0 {
                continue;
            }
            let base = grid.index(b1, b2).expect("in grid") * nj * nm;
            for j in 0..nj {
                for m in 0..nm {
                    let i = base + j * nm + m;
                    let x = SystemState::new(b1, b2, j, m);
                    let (rest, p_self) = vf.q_split(&x, policy.actions[i]);
                    vf.values[i] = if p_self < 1.0 {
                        (queue_cost(b1, b2, params.c) + rest) / (1.0 - p_self)
                    } else {
                        f64::INFINITY
                    };
                }
            }
        }
        if vf.values.iter().any(|v| v.is_infinite()) {
            return Ok(vf);
        }
        residual = vf.policy_residual(policy);
        if residual <= opts.tol {
            return Ok(vf);
        }
    }
    Err(Error::NotConverged {
        iterations,
        residual,
    })
}

/// Boundary of a policy's fetch region in the `(b1, b2)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchoverCurve {
    /// `psi[b1]`: largest `b2` with `Fetch` in column `b1`, or -1 if none.
    pub psi: Vec<i64>,
    /// Each column's fetch set is a prefix `{b2 <= psi}` and `psi` is
    /// non-decreasing (columns fetching everywhere are treated as unbounded).
    pub is_switchover: bool,
    /// Columns whose fetch set is not a prefix.
    pub non_prefix_columns: Vec<u32>,
    /// Columns where `psi` drops below an earlier column's value.
    pub decreasing_at: Vec<u32>,
}

/// Extracts the switchover curve of the reduced policy (or of one `(j, m)`
/// slice of a full policy via [`extract_switchover_slice`]).
pub fn extract_switchover_curve(policy: &PolicyTable) -> SwitchoverCurve {
    extract_switchover_slice(policy, 0, 0)
}

pub fn extract_switchover_slice(policy: &PolicyTable, j: usize, m: usize) -> SwitchoverCurve {
    let grid = policy.grid;
    let mut psi = Vec::with_capacity(grid.b1_max as usize + 1);
    let mut non_prefix = Vec::new();
    let mut decreasing = Vec::new();
    // Running lower bound on psi implied by earlier columns.
    let mut floor: i64 = -1;
    for b1 in 0..=grid.b1_max {
        let top = grid.column_top(b1);
        let fe: Vec<bool> = (0..=top)
            .map(|b2| policy.get(&SystemState::new(b1, b2, j, m)) == Ok(Action::Fetch))
            .collect();
        let last = fe.iter().rposition(|&f| f).map_or(-1, |p| p as i64);
        if fe.iter().take((last + 1) as usize).any(|&f| !f) {
            non_prefix.push(b1);
        }
        let full = last == i64::from(top);
        if full {
            floor = floor.max(last);
        } else {
            if last < floor {
                decreasing.push(b1);
            }
            floor = floor.max(last);
        }
        psi.push(last);
    }
    SwitchoverCurve {
        is_switchover: non_prefix.is_empty() && decreasing.is_empty(),
        psi,
        non_prefix_columns: non_prefix,
        decreasing_at: decreasing,
    }
}

/// Decision statistic of the reduced model at an interior state:
/// `s mu [V(b-e2) - V(b-e1)] + s (1-mu) [V(b) - V(b-e1+e2)]`.
/// `omega <= 0` selects `NoFetch`.
pub fn omega(vf: &ValueFunction, b1: u32, b2: u32) -> Result<f64> {
    if !vf.model.is_reduced() {
        return Err(Error::ModelMismatch(
            "omega is defined on reduced-model value functions".into(),
        ));
    }
    if b1 == 0 || b2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "omega needs b1, b2 >= 1, got ({b1}, {b2})"
        )));
    }
    let s = vf.model.channel.attribute(0);
    let mu = vf.model.processor.attribute(0);
    let v = |x: u32, y: u32| vf.reduced(x, y);
    Ok(s * mu * (v(b1, b2 - 1)? - v(b1 - 1, b2)?)
        + s * (1.0 - mu) * (v(b1, b2)? - v(b1 - 1, b2 + 1)?))
}

/// Writes `b1,b2,j,m,value,action` rows for every grid state.
pub fn write_table_csv<W: Write>(
    out: W,
    vf: &ValueFunction,
    policy: &PolicyTable,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["b1", "b2", "j", "m", "value", "action"])?;
    let mut rows = Vec::new();
    for_each_state(&vf.grid, &vf.model, |x, i| rows.push((x, i)));
    rows.sort_by_key(|(x, _)| *x);
    for (x, i) in rows {
        w.write_record([
            x.b1.to_string(),
            x.b2.to_string(),
            x.j.to_string(),
            x.m.to_string(),
            vf.values[i].to_string(),
            policy.actions[i].label().to_string(),
        ])?;
    }
    w.flush()
}
