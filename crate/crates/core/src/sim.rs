//! Slot-by-slot Monte Carlo episodes, batch statistics and cost sweeps.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{queue_step, validate_model, CostParams, Fsmc, TandemModel};
use crate::policy::{
    AlwaysFetch, FetchPolicy, FonCache, FonPolicy, NeverFetch, Observables, OptPolicy, PolicyKind,
    RfonPolicy,
};
use crate::solver::{solve_full, Grid, SolveOptions};

/// Hard limit on episode length.
pub const SLOT_CAP: u64 = 10_000_000;

/// How the environment chains start an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialEnv {
    /// Drawn from the stationary laws of both chains.
    Stationary,
    Fixed { j: usize, m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub channel: Fsmc,
    pub processor: Fsmc,
    pub initial_b1: u32,
    #[serde(default)]
    pub initial_b2: u32,
    pub c_values: Vec<f64>,
    pub episodes: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "stationary")]
    pub initial_env: InitialEnv,
}

fn stationary() -> InitialEnv {
    InitialEnv::Stationary
}

impl ScenarioConfig {
    /// Reduced-model scenario with constant `s` and `mu`.
    pub fn reduced(s: f64, mu: f64, b1: u32, b2: u32) -> Result<Self> {
        Ok(Self {
            name: None,
            channel: Fsmc::constant(s)?,
            processor: Fsmc::constant(mu)?,
            initial_b1: b1,
            initial_b2: b2,
            c_values: vec![1.0],
            episodes: 1,
            base_seed: 0,
            initial_env: InitialEnv::Fixed { j: 0, m: 0 },
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_model(&self.channel, &self.processor)?;
        let mut problems = Vec::new();
        if self.initial_b1 < 1 {
            problems.push("initial_b1 must be at least 1".to_string());
        }
        if self.episodes < 1 {
            problems.push("episodes must be at least 1".to_string());
        }
        if self.c_values.is_empty() {
            problems.push("c_values is empty".to_string());
        }
        for c in &self.c_values {
            if !(c.is_finite() && *c >= 1.0) {
                problems.push(format!("c value {c} must be >= 1"));
            }
        }
        if let InitialEnv::Fixed { j, m } = self.initial_env {
            if j >= self.channel.num_states() || m >= self.processor.num_states() {
                problems.push(format!("initial environment state ({j}, {m}) does not exist"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(problems))
        }
    }

    pub fn model(&self) -> Result<TandemModel> {
        TandemModel::new(self.channel.clone(), self.processor.clone())
    }

    /// Smallest solver grid covering every backlog an episode can visit.
    pub fn grid(&self) -> Grid {
        Grid::covering(self.initial_b1, self.initial_b2)
    }

    /// `s2 - s1` for two-state channels.
    pub fn delta_s(&self) -> Option<f64> {
        match self.channel.attributes() {
            [s1, s2] => Some(s2 - s1),
            _ => None,
        }
    }

    /// `1/mu2 - 1/mu1` for two-state processors.
    pub fn delta_mu(&self) -> Option<f64> {
        match self.processor.attributes() {
            [m1, m2] => Some(1.0 / m2 - 1.0 / m1),
            _ => None,
        }
    }
}

/// `n` points from `lo` to `hi`, evenly spaced in log scale. The end points
/// are exact.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub const PRESET_NAMES: [&str; 8] = [
    "slow_ds08_dmu889",
    "slow_ds01_dmu167",
    "slow_ds01_dmu889",
    "slow_ds08_dmu167",
    "fast_ds08_dmu889",
    "fast_ds01_dmu167",
    "fast_ds01_dmu889",
    "fast_ds08_dmu167",
];

/// The eight fading regimes: slow or fast channel memory crossed with two
/// channel spreads and two processor spreads.
pub fn scenario_preset(name: &str) -> Result<ScenarioConfig> {
    let unknown = || Error::UnknownPreset(name.to_string());
    let mut parts = name.split('_');
    let p = match parts.next() {
        Some("slow") => 0.9,
        Some("fast") => 0.1,
        _ => return Err(unknown()),
    };
    let (s1, s2) = match parts.next() {
        Some("ds08") => (0.1, 0.9),
        Some("ds01") => (0.4, 0.5),
        _ => return Err(unknown()),
    };
    let (mu1, mu2) = match parts.next() {
        Some("dmu889") => (0.9, 0.1),
        Some("dmu167") => (0.6, 0.3),
        _ => return Err(unknown()),
    };
    if parts.next().is_some() {
        return Err(unknown());
    }
    Ok(ScenarioConfig {
        name: Some(name.to_string()),
        channel: Fsmc::two_state(p, p, s1, s2)?,
        processor: Fsmc::two_state(0.5, 0.3, mu1, mu2)?,
        initial_b1: 20,
        initial_b2: 0,
        c_values: log_grid(1.0, 100.0, 20),
        episodes: 5000,
        base_seed: 1,
        initial_env: InitialEnv::Stationary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub total_cost: f64,
    pub slots: u64,
    /// Slots each task spent in the system, in task order.
    pub per_task_delay: Vec<u64>,
    pub time_avg_b2: f64,
}

impl EpisodeResult {
    pub fn mean_delay(&self) -> f64 {
        if self.per_task_delay.is_empty() {
            0.0
        } else {
            self.per_task_delay.iter().sum::<u64>() as f64 / self.per_task_delay.len() as f64
        }
    }
}

fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Runs one episode until both queues are empty.
pub fn run_episode(
    scenario: &ScenarioConfig,
    policy: &dyn FetchPolicy,
    c: f64,
    seed: u64,
) -> Result<EpisodeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (channel, processor) = (&scenario.channel, &scenario.processor);
    let (mut j, mut m) = match scenario.initial_env {
        InitialEnv::Fixed { j, m } => (j, m),
        InitialEnv::Stationary => {
            let j = sample_index(&channel.stationary_distribution(), rng.gen());
            let m = sample_index(&processor.stationary_distribution(), rng.gen());
            (j, m)
        }
    };
    let (mut b1, mut b2) = (scenario.initial_b1, scenario.initial_b2);
    let tasks = (b1 + b2) as usize;
    let mut per_task_delay = Vec::with_capacity(tasks);
    let mut total_cost = 0.0;
    let mut b2_area = 0u64;
    let mut slot = 0u64;
    while b1 + b2 > 0 {
        if slot >= SLOT_CAP {
            return Err(Error::SlotCapExceeded(SLOT_CAP));
        }
        total_cost += f64::from(b1) + c * f64::from(b2);
        b2_area += u64::from(b2);
        let (s, mu) = (channel.attribute(j), processor.attribute(m));
        let draws: [f64; 5] = rng.gen();
        let obs = Observables {
            b1,
            b2,
            s_hat: s,
            mu_hat: mu,
            c_hat: c,
            channel_state: j,
            processor_state: m,
        };
        let action = policy.decide(&obs, draws[0])?;
        let step = queue_step(b1, b2, action, draws[1] < s, draws[2] < mu);
        // Service is FIFO across the tandem, so the k-th completion is task k.
        if step.served {
            per_task_delay.push(slot + 1);
        }
        b1 = step.b1;
        b2 = step.b2;
        j = sample_index(channel.row(j), draws[3]);
        m = sample_index(processor.row(m), draws[4]);
        slot += 1;
    }
    Ok(EpisodeResult {
        total_cost,
        slots: slot,
        per_task_delay,
        time_avg_b2: if slot == 0 { 0.0 } else { b2_area as f64 / slot as f64 },
    })
}

/// Sample mean with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Standard error of the mean; absent for a single sample.
    pub std_err: Option<f64>,
}

impl Estimate {
    pub fn from_samples(xs: impl ExactSizeIterator<Item = f64> + Clone) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, std_err: None };
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let std_err = (n > 1).then(|| {
            let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self { mean, std_err }
    }

    pub fn ci95(&self) -> Option<f64> {
        self.std_err.map(|se| 1.96 * se)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub c: f64,
    pub cost: Estimate,
    pub b2: Estimate,
    pub delay: Estimate,
    pub episodes: Vec<EpisodeResult>,
}

/// Runs `episodes` episodes in parallel; episode `i` uses seed
/// `scenario.base_seed + i`.
pub fn run_batch(
    scenario: &ScenarioConfig,
    policy: &dyn FetchPolicy,
    c: f64,
    episodes: usize,
) -> Result<BatchResult> {
    let results = (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(scenario, policy, c, scenario.base_seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchResult {
        c,
        cost: Estimate::from_samples(results.iter().map(|r| r.total_cost)),
        b2: Estimate::from_samples(results.iter().map(|r| r.time_avg_b2)),
        delay: Estimate::from_samples(results.iter().map(EpisodeResult::mean_delay)),
        episodes: results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub c: f64,
    pub b2_ave: f64,
    pub ci_b2: Option<f64>,
    pub d_ave: f64,
    pub ci_d: Option<f64>,
    pub mean_cost: f64,
    pub ci_cost: Option<f64>,
    pub episodes: usize,
}

impl From<&BatchResult> for TradeoffPoint {
    fn from(b: &BatchResult) -> Self {
        Self {
            c: b.c,
            b2_ave: b.b2.mean,
            ci_b2: b.b2.ci95(),
            d_ave: b.delay.mean,
            ci_d: b.delay.ci95(),
            mean_cost: b.cost.mean,
            ci_cost: b.cost.ci95(),
            episodes: b.episodes.len(),
        }
    }
}

/// Builds a policy for `scenario` at cost weight `c`.
///
/// `fon_cache` lets FON share solved reduced models across calls.
pub fn build_policy(
    kind: PolicyKind,
    scenario: &ScenarioConfig,
    c: f64,
    opts: SolveOptions,
    fon_cache: &Arc<FonCache>,
) -> Result<Box<dyn FetchPolicy>> {
    Ok(match kind {
        PolicyKind::Opt => {
            let (_, table) = solve_full(&scenario.model()?, CostParams::new(c)?, scenario.grid(), opts)?;
            Box::new(OptPolicy::new(Arc::new(table)))
        }
        PolicyKind::Fon => Box::new(FonPolicy::new(Arc::clone(fon_cache), scenario.grid())),
        PolicyKind::Rfon => Box::new(RfonPolicy::new()),
        PolicyKind::Always => Box::new(AlwaysFetch),
        PolicyKind::Never => Box::new(NeverFetch),
    })
}

/// One tradeoff point per configured `c`, each from a fresh batch.
pub fn sweep_c(scenario: &ScenarioConfig, kind: PolicyKind) -> Result<Vec<TradeoffPoint>> {
    scenario.validate()?;
    let opts = SolveOptions::default();
    let cache = Arc::new(FonCache::new(opts));
    let mut points = Vec::with_capacity(scenario.c_values.len());
    for &c in &scenario.c_values {
        let policy = build_policy(kind, scenario, c, opts, &cache)?;
        let batch = run_batch(scenario, policy.as_ref(), c, scenario.episodes)?;
        points.push(TradeoffPoint::from(&batch));
    }
    Ok(points)
}

pub const TRADEOFF_HEADER: &str = "c,b2_ave,ci_b2,d_ave,ci_d,mean_cost,episodes";

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn write_tradeoff_csv<W: Write>(out: W, points: &[TradeoffPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidParameter(format!("csv write failed: {e}"));
    w.write_record(TRADEOFF_HEADER.split(',')).map_err(io)?;
    for p in points {
        w.write_record([
            p.c.to_string(),
            p.b2_ave.to_string(),
            fmt_opt(p.ci_b2),
            p.d_ave.to_string(),
            fmt_opt(p.ci_d),
            p.mean_cost.to_string(),
            p.episodes.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidParameter(format!("csv write failed: {e}")))
}

/// Parses a tradeoff CSV. Missing intervals read as `None`; the cost
/// interval is not stored and always reads as `None`.
pub fn read_tradeoff_csv<R: std::io::Read>(input: R) -> Result<Vec<TradeoffPoint>> {
    let bad = |msg: String| Error::InvalidParameter(msg);
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(format!("cannot read csv header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != TRADEOFF_HEADER {
        return Err(bad(format!("unexpected header {:?}", header.join(","))));
    }
    let num = |field: &str, row: usize| -> Result<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("row {row}: cannot parse {field:?}")))
    };
    let opt = |field: &str, row: usize| -> Result<Option<f64>> {
        if field.trim() == "NA" {
            Ok(None)
        } else {
            num(field, row).map(Some)
        }
    };
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        if rec.len() != 7 {
            return Err(bad(format!("row {}: expected 7 fields, got {}", i + 1, rec.len())));
        }
        points.push(TradeoffPoint {
            c: num(&rec[0], i + 1)?,
            b2_ave: num(&rec[1], i + 1)?,
            ci_b2: opt(&rec[2], i + 1)?,
            d_ave: num(&rec[3], i + 1)?,
            ci_d: opt(&rec[4], i + 1)?,
            mean_cost: num(&rec[5], i + 1)?,
            ci_cost: None,
            episodes: rec[6]
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: bad episode count", i + 1)))?,
        });
    }
    Ok(points)
}

/// Piecewise-linear `b2_ave` of a frontier at delay `d`, with the larger CI
/// half-width of the bracketing points. Outside the frontier's delay range
/// the nearest end point is used.
pub fn frontier_b2(frontier: &[TradeoffPoint], d: f64) -> Option<(f64, f64)> {
    let mut pts: Vec<&TradeoffPoint> = frontier.iter().collect();
    pts.sort_by(|a, b| a.d_ave.total_cmp(&b.d_ave));
    let ci = |p: &TradeoffPoint| p.ci_b2.unwrap_or(0.0);
    let (first, last) = (*pts.first()?, *pts.last()?);
    if d <= first.d_ave {
        return Some((first.b2_ave, ci(first)));
    }
    if d >= last.d_ave {
        return Some((last.b2_ave, ci(last)));
    }
    pts.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        (a.d_ave <= d && d <= b.d_ave).then(|| {
            let t = if b.d_ave > a.d_ave { (d - a.d_ave) / (b.d_ave - a.d_ave) } else { 0.0 };
            (a.b2_ave + t * (b.b2_ave - a.b2_ave), ci(a).max(ci(b)))
        })
    })
}

/// Whether a reference curve weakly dominates another point at one `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub c: f64,
    /// Reference mean cost minus the other policy's; positive when the
    /// reference is more expensive.
    pub cost_gap: f64,
    pub cost_tol: f64,
    /// Reference frontier `b2_ave` at the other point's delay minus the
    /// other point's `b2_ave`; positive when the point lies below the frontier.
    pub frontier_gap: f64,
    pub frontier_tol: f64,
    pub dominated: bool,
}

/// Checks each point of `other` against `reference` at the same `c`: the
/// reference must be no more expensive and the point must not lie below the
/// reference frontier, both up to the combined 95% half-widths.
pub fn dominance(reference: &[TradeoffPoint], other: &[TradeoffPoint]) -> Result<Vec<DominanceCheck>> {
    if reference.len() != other.len() {
        return Err(Error::InvalidParameter("curves have different c grids".into()));
    }
    reference
        .iter()
        .zip(other)
        .map(|(r, o)| {
            if (r.c - o.c).abs() > 1e-9 * r.c.abs().max(1.0) {
                return Err(Error::InvalidParameter(format!("c mismatch: {} vs {}", r.c, o.c)));
            }
            let cost_gap = r.mean_cost - o.mean_cost;
            let cost_tol = r.ci_cost.unwrap_or(0.0) + o.ci_cost.unwrap_or(0.0);
            let (fb2, fci) = frontier_b2(reference, o.d_ave).expect("non-empty reference");
            let frontier_gap = fb2 - o.b2_ave;
            let frontier_tol = fci + o.ci_b2.unwrap_or(0.0);
            Ok(DominanceCheck {
                c: r.c,
                cost_gap,
                cost_tol,
                frontier_gap,
                frontier_tol,
                dominated: cost_gap <= cost_tol && frontier_gap <= frontier_tol,
            })
        })
        .collect()
}
