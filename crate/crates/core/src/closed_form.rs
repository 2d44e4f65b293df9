//! Closed-form costs of the never-fetch and always-fetch policies in the
//! reduced model, their exact recursive counterparts, and the one-step policy
//! improvement of a quadratic cost.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::CostParams;
use crate::solver::{extract_switchover_curve, solve_reduced, Grid, SolveOptions};

/// `V(b) = alpha1 b1^2 + alpha2 b2^2 + gamma b1 b2 + beta1 b1 + beta2 b2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl QuadraticCost {
    pub fn zero() -> Self {
        Self {
            alpha1: 0.0,
            alpha2: 0.0,
            gamma: 0.0,
            beta1: 0.0,
            beta2: 0.0,
        }
    }

    pub fn eval(&self, b1: f64, b2: f64) -> f64 {
        self.alpha1 * b1 * b1
            + self.alpha2 * b2 * b2
            + self.gamma * b1 * b2
            + self.beta1 * b1
            + self.beta2 * b2
    }
}

/// `l(b) = a1 b1 + a2 b2 + a3`; fetch iff `l(b) < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearDecision {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl LinearDecision {
    pub fn eval(&self, b1: f64, b2: f64) -> f64 {
        self.a1 * b1 + self.a2 * b2 + self.a3
    }

    pub fn fetches(&self, b1: f64, b2: f64) -> bool {
        self.eval(b1, b2) < 0.0
    }

    /// All three coefficients vanish: the improvement is indifferent everywhere.
    pub fn is_degenerate(&self) -> bool {
        self.a1.abs() <= DEGENERATE_EPS && self.a2.abs() <= DEGENERATE_EPS && self.a3.abs() <= DEGENERATE_EPS
    }
}

/// Threshold below which a coefficient counts as zero.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Expected cost of never fetching while the terminal holds work.
pub fn cost_never_fetch(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> f64 {
    quadratic_of_never_fetch(s, mu, c).eval(f64::from(b1), f64::from(b2))
}

pub fn quadratic_of_never_fetch(s: f64, mu: f64, c: f64) -> QuadraticCost {
    let a = (1.0 - mu) / mu + 1.0 / s;
    QuadraticCost {
        alpha1: a / 2.0,
        alpha2: c / (2.0 * mu),
        gamma: 1.0 / mu,
        beta1: a / 2.0 + (c - 1.0) * (1.0 - mu) / mu,
        beta2: c / (2.0 * mu),
    }
}

/// Never-fetch cost by its first-step recursion, memoised per call:
/// `C(b) = C(b - e2) + <c, b> / mu` for `b2 > 0`, and
/// `C(b1, 0) = C(b1 - 1, 0) + ((1 - mu)/mu + 1/s) b1 + (c - 1)(1 - mu)/mu`.
pub fn cost_never_fetch_recursive(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> f64 {
    fn go(b1: u32, b2: u32, s: f64, mu: f64, c: f64, memo: &mut HashMap<(u32, u32), f64>) -> f64 {
        if b1 == 0 && b2 == 0 {
            return 0.0;
        }
        if let Some(&v) = memo.get(&(b1, b2)) {
            return v;
        }
        let v = if b2 > 0 {
            go(b1, b2 - 1, s, mu, c, memo) + (f64::from(b1) + c * f64::from(b2)) / mu
        } else {
            go(b1 - 1, 0, s, mu, c, memo)
                + ((1.0 - mu) / mu + 1.0 / s) * f64::from(b1)
                + (c - 1.0) * (1.0 - mu) / mu
        };
        memo.insert((b1, b2), v);
        v
    }
    go(b1, b2, s, mu, c, &mut HashMap::new())
}

/// Which piece of the fluid always-fetch cost applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FluidBranch {
    /// The server queue empties first (`s >= mu`, or `T1 > T0`).
    ServerEmptiesFirst,
    /// The terminal queue empties first and stays empty (`s < mu`, `T1 <= T0`).
    TerminalEmptiesFirst,
}

/// Branch active at `b`, with `T0 = b1/s` and `T1 = b2/(mu - s)`.
pub fn fluid_branch(b1: u32, b2: u32, s: f64, mu: f64) -> FluidBranch {
    if s >= mu {
        return FluidBranch::ServerEmptiesFirst;
    }
    let t0 = f64::from(b1) / s;
    let t1 = f64::from(b2) / (mu - s);
    if t1 > t0 {
        FluidBranch::ServerEmptiesFirst
    } else {
        FluidBranch::TerminalEmptiesFirst
    }
}

pub fn quadratic_of_always_fetch_fluid(s: f64, mu: f64, c: f64, branch: FluidBranch) -> QuadraticCost {
    match branch {
        FluidBranch::ServerEmptiesFirst => QuadraticCost {
            alpha1: (c / mu - (c - 1.0) / s) / 2.0,
            alpha2: c / (2.0 * mu),
            gamma: c / mu,
            beta1: 0.0,
            beta2: 0.0,
        },
        FluidBranch::TerminalEmptiesFirst => QuadraticCost {
            alpha1: 1.0 / (2.0 * s),
            alpha2: c / (2.0 * (mu - s)),
            gamma: 0.0,
            beta1: 0.0,
            beta2: 0.0,
        },
    }
}

/// Fluid approximation of the always-fetch cost: constant-rate flow `s` from
/// the server and `mu` out of the terminal.
pub fn cost_always_fetch_fluid(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> f64 {
    let branch = fluid_branch(b1, b2, s, mu);
    quadratic_of_always_fetch_fluid(s, mu, c, branch).eval(f64::from(b1), f64::from(b2))
}

/// Exact always-fetch cost, tabulated by the first-step equations over every
/// state the recursion touches.
pub fn cost_always_fetch_exact(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> f64 {
    always_fetch_table(b1, b2, s, mu, c).get(b1, b2)
}

/// Always-fetch costs on the triangle `{x <= b1, x + y <= b1 + b2}`.
pub fn always_fetch_table(b1: u32, b2: u32, s: f64, mu: f64, c: f64) -> CostTable {
    let total = b1 + b2;
    let mut table = CostTable {
        total,
        cols: Vec::with_capacity(b1 as usize + 1),
    };
    for x in 0..=b1 {
        let mut col = Vec::with_capacity((total - x) as usize + 1);
        for y in 0..=(total - x) {
            let g = f64::from(x) + c * f64::from(y);
            let v = match (x, y) {
                (0, 0) => 0.0,
                (0, _) => (g + mu * col[y as usize - 1]) / mu,
                (_, 0) => {
                    let prev = &table.cols[x as usize - 1];
                    (g + s * mu * prev[0] + s * (1.0 - mu) * prev[1]) / s
                }
                _ => {
                    let prev = &table.cols[x as usize - 1];
                    (g + s * mu * prev[y as usize]
                        + (1.0 - s) * mu * col[y as usize - 1]
                        + s * (1.0 - mu) * prev[y as usize + 1])
                        / (1.0 - (1.0 - s) * (1.0 - mu))
                }
            };
            col.push(v);
        }
        table.cols.push(col);
    }
    table
}

#[derive(Debug, Clone)]
pub struct CostTable {
    total: u32,
    cols: Vec<Vec<f64>>,
}

impl CostTable {
    pub fn get(&self, b1: u32, b2: u32) -> f64 {
        assert!(b1 + b2 <= self.total, "({b1}, {b2}) outside table");
        self.cols[b1 as usize][b2 as usize]
    }
}

/// One-step improvement of a policy whose cost is `q`, as a linear decision
/// rule. The positive factor `s` of the raw action-cost difference is dropped.
pub fn one_step_improvement_line(q: &QuadraticCost, mu: f64) -> LinearDecision {
    LinearDecision {
        a1: q.gamma - 2.0 * q.alpha1,
        a2: 2.0 * q.alpha2 - q.gamma,
        a3: q.alpha1 + (1.0 - 2.0 * mu) * q.alpha2 - q.beta1 + q.beta2 - (1.0 - mu) * q.gamma,
    }
}

/// The `b2` where `l(b1, b2) = 0`; fetching happens strictly below it.
///
/// With `a2` numerically zero the column is all-fetch (`+inf`) when
/// `a1 b1 + a3 < 0` and all-hold (`-inf`) otherwise.
pub fn switchover_boundary(line: &LinearDecision, b1: f64) -> f64 {
    let offset = line.a1 * b1 + line.a3;
    if line.a2.abs() <= DEGENERATE_EPS {
        if offset < 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        -offset / line.a2
    }
}

/// Largest integer strictly below a real threshold, clipped to `[-1, top]`.
pub fn integer_threshold(threshold: f64, top: u32) -> i64 {
    if threshold == f64::INFINITY {
        return i64::from(top);
    }
    if threshold == f64::NEG_INFINITY {
        return -1;
    }
    let k = threshold.ceil() as i64 - 1;
    k.clamp(-1, i64::from(top))
}

/// Improvement line of never-fetch.
pub fn never_fetch_line(s: f64, mu: f64, c: f64) -> LinearDecision {
    one_step_improvement_line(&quadratic_of_never_fetch(s, mu, c), mu)
}

/// Improvement line of the fluid always-fetch cost on one branch.
pub fn always_fetch_line(s: f64, mu: f64, c: f64, branch: FluidBranch) -> LinearDecision {
    one_step_improvement_line(&quadratic_of_always_fetch_fluid(s, mu, c, branch), mu)
}

/// How the always-fetch bounding curve picks its fluid branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlwaysCurveConstruction {
    /// Server-empties-first quadratic everywhere.
    ServerFirst,
    /// Terminal-empties-first quadratic everywhere (only meaningful for `s < mu`).
    TerminalFirst,
    /// Each state uses the branch active at that state.
    StateDependent,
}

/// Integer always-fetch curve in column `b1` under one construction.
pub fn always_fetch_curve(
    s: f64,
    mu: f64,
    c: f64,
    b1: u32,
    top: u32,
    construction: AlwaysCurveConstruction,
) -> i64 {
    let column = |branch| {
        let line = always_fetch_line(s, mu, c, branch);
        integer_threshold(switchover_boundary(&line, f64::from(b1)), top)
    };
    match construction {
        AlwaysCurveConstruction::ServerFirst => column(FluidBranch::ServerEmptiesFirst),
        AlwaysCurveConstruction::TerminalFirst => column(FluidBranch::TerminalEmptiesFirst),
        AlwaysCurveConstruction::StateDependent => (0..=top)
            .filter(|&b2| {
                let line = always_fetch_line(s, mu, c, fluid_branch(b1, b2, s, mu));
                line.fetches(f64::from(b1), f64::from(b2))
            })
            .map(i64::from)
            .max()
            .unwrap_or(-1),
    }
}

/// Comparison of one always-fetch construction against the optimal curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlwaysCurveCheck {
    pub construction: AlwaysCurveConstruction,
    pub psi_always: Vec<i64>,
    /// `psi* <= psi_A` in every column.
    pub optimal_below: bool,
    /// `psi_A <= psi*` in every column.
    pub optimal_above: bool,
}

/// Never-fetch and always-fetch bounding curves next to the optimal curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub s: f64,
    pub mu: f64,
    pub c: f64,
    pub psi_optimal: Vec<i64>,
    pub psi_never: Vec<i64>,
    /// `psi_N <= psi*` in every column.
    pub never_below_optimal: bool,
    /// `psi* <= psi_N` in every column.
    pub never_above_optimal: bool,
    /// Columns where `psi_N > psi*`.
    pub never_violations: Vec<u32>,
    pub always: Vec<AlwaysCurveCheck>,
}

/// Solves the reduced model on a `b1_max x b2_max` grid and lays the
/// bounding curves next to the optimal one, column by column.
pub fn cone_report(s: f64, mu: f64, c: f64, b1_max: u32, b2_max: u32) -> Result<ConeReport> {
    let grid = Grid::new(b1_max, b2_max);
    let (_, policy) = solve_reduced(s, mu, CostParams::new(c)?, grid, SolveOptions::default())?;
    let psi_optimal = extract_switchover_curve(&policy).psi;
    let n_line = never_fetch_line(s, mu, c);
    let psi_never: Vec<i64> = (0..=b1_max)
        .map(|b1| {
            if b1 == 0 {
                -1
            } else {
                integer_threshold(switchover_boundary(&n_line, f64::from(b1)), grid.column_top(b1))
            }
        })
        .collect();
    let never_violations: Vec<u32> = (0..=b1_max)
        .filter(|&b1| psi_never[b1 as usize] > psi_optimal[b1 as usize])
        .collect();
    let never_above_optimal = psi_never.iter().zip(&psi_optimal).all(|(n, o)| n >= o);
    let mut constructions = vec![AlwaysCurveConstruction::ServerFirst, AlwaysCurveConstruction::StateDependent];
    if s < mu {
        constructions.insert(1, AlwaysCurveConstruction::TerminalFirst);
    }
    let always = constructions
        .into_iter()
        .map(|construction| {
            let psi_always: Vec<i64> = (0..=b1_max)
                .map(|b1| {
                    if b1 == 0 {
                        -1
                    } else {
                        always_fetch_curve(s, mu, c, b1, grid.column_top(b1), construction)
                    }
                })
                .collect();
            AlwaysCurveCheck {
                construction,
                optimal_below: psi_optimal.iter().zip(&psi_always).all(|(o, a)| o <= a),
                optimal_above: psi_optimal.iter().zip(&psi_always).all(|(o, a)| a <= o),
                psi_always,
            }
        })
        .collect();
    Ok(ConeReport {
        s,
        mu,
        c,
        never_below_optimal: never_violations.is_empty(),
        never_above_optimal,
        never_violations,
        psi_optimal,
        psi_never,
        always,
    })
}
