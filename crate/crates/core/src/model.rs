//! The controlled two-queue tandem: a central server queue feeding a mobile
//! terminal over a Markov-modulated wireless link, with a Markov-modulated
//! processor draining the terminal queue.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// A finite-state Markov chain with one scalar attribute per state.
///
/// For the channel the attribute is the per-slot transmission success
/// probability; for the processor it is the per-slot service completion rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fsmc {
    transition: Vec<Vec<f64>>,
    attribute: Vec<f64>,
}

impl Fsmc {
    /// Builds a chain, rejecting it if any invariant is violated.
    pub fn new(transition: Vec<Vec<f64>>, attribute: Vec<f64>) -> Result<Self> {
        let chain = Self::unchecked(transition, attribute);
        let diags = chain.diagnostics("chain");
        if diags.is_empty() {
            Ok(chain)
        } else {
            Err(Error::InvalidModel(diags))
        }
    }

    /// Builds a chain without validation. Pair with [`validate_model`].
    pub fn unchecked(transition: Vec<Vec<f64>>, attribute: Vec<f64>) -> Self {
        Self {
            transition,
            attribute,
        }
    }

    /// Single-state chain with a fixed attribute (the i.i.d. special case).
    pub fn constant(attribute: f64) -> Result<Self> {
        Self::new(vec![vec![1.0]], vec![attribute])
    }

    /// Two-state chain with stay probabilities `p11`, `p22`.
    pub fn two_state(p11: f64, p22: f64, attr1: f64, attr2: f64) -> Result<Self> {
        Self::new(
            vec![vec![p11, 1.0 - p11], vec![1.0 - p22, p22]],
            vec![attr1, attr2],
        )
    }

    pub fn num_states(&self) -> usize {
        self.attribute.len()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from][to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.transition[from]
    }

    pub fn attribute(&self, state: usize) -> f64 {
        self.attribute[state]
    }

    pub fn attributes(&self) -> &[f64] {
        &self.attribute
    }

    pub fn transition_matrix(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Expected number of slots spent in `state` per visit.
    pub fn mean_sojourn(&self, state: usize) -> f64 {
        1.0 / (1.0 - self.transition[state][state])
    }

    /// Stationary distribution, solved from `pi (P - I) = 0`, `sum(pi) = 1`.
    pub fn stationary_distribution(&self) -> Vec<f64> {
        let n = self.num_states();
        if n == 1 {
            return vec![1.0];
        }
        // Transposed system with the last balance equation replaced by normalisation.
        let mut a = vec![vec![0.0; n + 1]; n];
        for (i, row) in a.iter_mut().enumerate().take(n - 1) {
            for (k, cell) in row.iter_mut().enumerate().take(n) {
                *cell = self.transition[k][i] - if i == k { 1.0 } else { 0.0 };
            }
        }
        for k in 0..n {
            a[n - 1][k] = 1.0;
        }
        a[n - 1][n] = 1.0;
        let mut pi = gauss_solve(a);
        for p in &mut pi {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = pi.iter().sum();
        pi.iter().map(|p| p / total).collect()
    }

    fn diagnostics(&self, label: &str) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.attribute.len();
        if n == 0 {
            out.push(format!("{label}: chain must have at least one state"));
            return out;
        }
        if self.transition.len() != n {
            out.push(format!(
                "{label}: transition matrix has {} rows but {n} attributes",
                self.transition.len()
            ));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.len() != n {
                out.push(format!(
                    "{label}: row {i} has {} entries, expected {n}",
                    row.len()
                ));
                continue;
            }
            if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                out.push(format!("{label}: row {i} has entry {bad} outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                out.push(format!("{label}: row {i} sums to {sum} (row sum ≠ 1)"));
            }
        }
        for (i, &a) in self.attribute.iter().enumerate() {
            if !(a > 0.0) {
                out.push(format!(
                    "{label}: attribute[{i}] = {a}, rate must be > 0"
                ));
            } else if a > 1.0 {
                out.push(format!("{label}: attribute[{i}] = {a} exceeds 1"));
            }
        }
        out
    }
}

fn gauss_solve(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap_or(col);
        a.swap(col, pivot);
        let p = a[col][col];
        if p == 0.0 {
            continue;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col] / p;
                if f != 0.0 {
                    for k in col..=n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

/// Checks both chains and collects one diagnostic per violated invariant.
pub fn validate_model(channel: &Fsmc, processor: &Fsmc) -> Result<()> {
    let mut diags = channel.diagnostics("channel");
    diags.extend(processor.diagnostics("processor"));
    if diags.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(diags))
    }
}

/// Channel and processor chains of one tandem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TandemModel {
    pub channel: Fsmc,
    pub processor: Fsmc,
}

impl TandemModel {
    pub fn new(channel: Fsmc, processor: Fsmc) -> Result<Self> {
        validate_model(&channel, &processor)?;
        Ok(Self { channel, processor })
    }

    /// The reduced model: i.i.d. channel with success probability `s` and
    /// geometric service with rate `mu`.
    pub fn reduced(s: f64, mu: f64) -> Result<Self> {
        let channel = Fsmc::unchecked(vec![vec![1.0]], vec![s]);
        let processor = Fsmc::unchecked(vec![vec![1.0]], vec![mu]);
        Self::new(channel, processor)
    }

    pub fn validate(&self) -> Result<()> {
        validate_model(&self.channel, &self.processor)
    }

    pub fn is_reduced(&self) -> bool {
        self.channel.num_states() == 1 && self.processor.num_states() == 1
    }

    pub fn num_env_states(&self) -> usize {
        self.channel.num_states() * self.processor.num_states()
    }
}

/// Backlogs at the server (`b1`) and terminal (`b2`), plus the channel and
/// processor state indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState {
    pub b1: u32,
    pub b2: u32,
    pub j: usize,
    pub m: usize,
}

impl SystemState {
    pub fn new(b1: u32, b2: u32, j: usize, m: usize) -> Self {
        Self { b1, b2, j, m }
    }

    pub fn is_terminal(&self) -> bool {
        self.b1 == 0 && self.b2 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    /// FE: attempt to fetch one task over the link this slot.
    Fetch,
    /// FEbar: do not fetch.
    NoFetch,
}

impl Action {
    pub fn label(self) -> &'static str {
        match self {
            Action::Fetch => "FE",
            Action::NoFetch => "FEbar",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "FE" => Some(Action::Fetch),
            "FEbar" => Some(Action::NoFetch),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-slot holding cost per task at the terminal; the server side costs 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c: f64,
}

impl CostParams {
    pub fn new(c: f64) -> Result<Self> {
        if c >= 1.0 && c.is_finite() {
            Ok(Self { c })
        } else {
            Err(Error::InvalidParameter(format!("c must be >= 1, got {c}")))
        }
    }
}

/// `b1 + c * b2`, charged once per slot in the slot's starting state.
pub fn stage_cost(state: &SystemState, params: CostParams) -> f64 {
    queue_cost(state.b1, state.b2, params.c)
}

#[inline]
pub(crate) fn queue_cost(b1: u32, b2: u32, c: f64) -> f64 {
    f64::from(b1) + c * f64::from(b2)
}

/// One queue-level outcome of a slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueMove {
    pub b1: u32,
    pub b2: u32,
    pub prob: f64,
    /// A task crossed the link this slot.
    pub fetched: bool,
    /// A task finished service at the terminal this slot.
    pub served: bool,
}

/// Up to four queue outcomes of a slot.
#[derive(Debug, Clone, Copy)]
pub struct QueueMoves {
    items: [QueueMove; 4],
    len: usize,
}

impl QueueMoves {
    fn new() -> Self {
        let empty = QueueMove {
            b1: 0,
            b2: 0,
            prob: 0.0,
            fetched: false,
            served: false,
        };
        Self {
            items: [empty; 4],
            len: 0,
        }
    }

    fn push(&mut self, b1: u32, b2: u32, prob: f64, fetched: bool, served: bool) {
        self.items[self.len] = QueueMove {
            b1,
            b2,
            prob,
            fetched,
            served,
        };
        self.len += 1;
    }

    pub fn as_slice(&self) -> &[QueueMove] {
        &self.items[..self.len]
    }
}

/// Fetching from an empty server is the same as not fetching.
#[inline]
pub fn effective_action(b1: u32, action: Action) -> Action {
    if b1 == 0 {
        Action::NoFetch
    } else {
        action
    }
}

/// Queue-level kernel for one slot with success probability `s` and service
/// rate `mu`. Entries may carry zero probability when `s` or `mu` equals 1.
pub fn queue_moves(b1: u32, b2: u32, action: Action, s: f64, mu: f64) -> QueueMoves {
    let mut out = QueueMoves::new();
    match (effective_action(b1, action), b2 > 0) {
        (Action::NoFetch, true) => {
            out.push(b1, b2 - 1, mu, false, true);
            out.push(b1, b2, 1.0 - mu, false, false);
        }
        (Action::NoFetch, false) => {
            out.push(b1, b2, 1.0, false, false);
        }
        (Action::Fetch, true) => {
            out.push(b1 - 1, b2, s * mu, true, true);
            out.push(b1, b2 - 1, (1.0 - s) * mu, false, true);
            out.push(b1 - 1, b2 + 1, s * (1.0 - mu), true, false);
            out.push(b1, b2, (1.0 - s) * (1.0 - mu), false, false);
        }
        (Action::Fetch, false) => {
            // The fetched task may complete in the slot it arrives.
            out.push(b1 - 1, 0, s * mu, true, true);
            out.push(b1 - 1, 1, s * (1.0 - mu), true, false);
            out.push(b1, 0, 1.0 - s, false, false);
        }
    }
    out
}

/// Deterministic queue update given the slot's link and service outcomes.
///
/// `link_ok` is consulted only for an effective fetch; `service_ok` only when
/// a task is present at the terminal after the fetch.
pub fn queue_step(b1: u32, b2: u32, action: Action, link_ok: bool, service_ok: bool) -> QueueMove {
    let fetched = effective_action(b1, action) == Action::Fetch && link_ok;
    let (b1, b2) = if fetched { (b1 - 1, b2 + 1) } else { (b1, b2) };
    let served = b2 > 0 && service_ok;
    QueueMove {
        b1,
        b2: if served { b2 - 1 } else { b2 },
        prob: 1.0,
        fetched,
        served,
    }
}

/// Exact next-state distribution for one slot. Zero-probability entries are
/// dropped.
pub fn transition_distribution(
    state: &SystemState,
    action: Action,
    model: &TandemModel,
) -> Result<Vec<(SystemState, f64)>> {
    if state.is_terminal() {
        return Err(Error::TerminalState {
            b1: state.b1,
            b2: state.b2,
        });
    }
    let s = model.channel.attribute(state.j);
    let mu = model.processor.attribute(state.m);
    let mut out = Vec::new();
    for mv in queue_moves(state.b1, state.b2, action, s, mu).as_slice() {
        for (jn, &pj) in model.channel.row(state.j).iter().enumerate() {
            for (mn, &pm) in model.processor.row(state.m).iter().enumerate() {
                let p = mv.prob * pj * pm;
                if p > 0.0 {
                    out.push((SystemState::new(mv.b1, mv.b2, jn, mn), p));
                }
            }
        }
    }
    Ok(out)
}
