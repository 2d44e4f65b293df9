//! Command-line front end: `solve`, `sweep` and `compare`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::closed_form::cone_report;
use crate::error::Error;
use crate::model::CostParams;
use crate::plot::{tradeoff_svg, Series};
use crate::policy::PolicyKind;
use crate::sim::{
    dominance, log_grid, read_tradeoff_csv, scenario_preset, sweep_c, write_tradeoff_csv, ScenarioConfig,
    TradeoffPoint,
};
use crate::solver::{
    extract_switchover_slice, solve_full, write_table_csv, Grid, SolveOptions, SwitchoverCurve,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_COMPARE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "taskfetch", version, about = "Task prefetching solver and simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the DP for one cost weight and dump the table and switchover curve.
    Solve(SolveArgs),
    /// Simulate tradeoff curves over a grid of cost weights.
    Sweep(SweepArgs),
    /// Compare two tradeoff CSVs column by column.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ScenarioArgs {
    /// Scenario JSON, or a manifest written by an earlier run.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Named preset, e.g. slow_ds01_dmu167.
    #[arg(long, value_name = "NAME", conflicts_with = "config")]
    pub preset: Option<String>,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Constant-parameter model instead of a scenario: `S,MU`.
    #[arg(long, value_name = "S,MU", conflicts_with_all = ["config", "preset"])]
    pub reduced: Option<String>,
    /// Cost weight of the terminal queue (defaults to the scenario's first).
    #[arg(long)]
    pub c: Option<f64>,
    /// Grid size `B1,B2` (defaults to the scenario's initial backlog, or 30,30).
    #[arg(long, value_name = "B1,B2")]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated subset of opt,fon,rfon,always,never.
    #[arg(long, value_name = "LIST")]
    pub policies: Option<String>,
    #[arg(long, value_name = "N")]
    pub episodes: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// `LO:HI:log:N`, `LO:HI:lin:N` or a comma-separated list.
    #[arg(long, value_name = "SPEC")]
    pub c_grid: Option<String>,
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    pub baseline: PathBuf,
    pub candidate: PathBuf,
    /// Relative tolerance.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Columns to compare: b2_ave, d_ave, mean_cost, ci_b2, ci_d.
    #[arg(long, value_delimiter = ',', default_value = "b2_ave,d_ave")]
    pub columns: Vec<String>,
}

/// Everything needed to regenerate an output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_ref: String,
    pub scenario: ScenarioConfig,
    pub policies: Vec<PolicyKind>,
    pub c_grid: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
    pub out_dir: String,
    pub tool_version: String,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NotConverged { .. } | Error::SlotCapExceeded(_) => EXIT_SOLVER,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses the process arguments and runs; returns the exit code.
pub fn main() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Parses a cost-weight grid.
pub fn parse_c_grid(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::InvalidParameter(format!("bad c grid `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [lo, hi, kind, n] => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            match *kind {
                "log" => {
                    if lo <= 0.0 || hi <= 0.0 {
                        return Err(bad());
                    }
                    log_grid(lo, hi, n)
                }
                "lin" => match n {
                    0 => Vec::new(),
                    1 => vec![lo],
                    _ => (0..n)
                        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                        .collect(),
                },
                _ => return Err(bad()),
            }
        }
        [list] => list.split(',').map(num).collect::<Result<_, _>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

fn parse_pair<T: std::str::FromStr>(s: &str, what: &str) -> Result<(T, T), Failure> {
    let bad = || Failure::config(format!("{what}: expected two comma-separated values, got `{s}`"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn parse_policies(list: &str) -> Result<Vec<PolicyKind>, Error> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse())
        .collect()
}

/// Scenario plus, when read from a manifest, the policies it used.
struct LoadedScenario {
    reference: String,
    scenario: ScenarioConfig,
    policies: Option<Vec<PolicyKind>>,
}

fn load_scenario(args: &ScenarioArgs) -> Result<LoadedScenario, Failure> {
    if let Some(name) = &args.preset {
        return Ok(LoadedScenario {
            reference: format!("preset:{name}"),
            scenario: scenario_preset(name)?,
            policies: None,
        });
    }
    let Some(path) = &args.config else {
        return Err(Failure::config("one of --config or --preset is required"));
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let parse_err = |e: serde_json::Error| Failure::config(format!("{}: {e}", path.display()));
    if value.get("tool_version").is_some() {
        let m: RunManifest = serde_json::from_value(value).map_err(parse_err)?;
        return Ok(LoadedScenario {
            reference: m.scenario_ref,
            scenario: m.scenario,
            policies: Some(m.policies),
        });
    }
    Ok(LoadedScenario {
        reference: format!("config:{}", path.display()),
        scenario: serde_json::from_value(value).map_err(parse_err)?,
        policies: None,
    })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::config(format!("cannot serialise {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, text)
}

#[derive(Serialize)]
struct SliceReport {
    j: usize,
    m: usize,
    #[serde(flatten)]
    curve: SwitchoverCurve,
}

#[derive(Serialize)]
struct SwitchoverReport {
    c: f64,
    grid: Grid,
    iterations: usize,
    residual: f64,
    switchover: bool,
    slices: Vec<SliceReport>,
}

fn cmd_solve(a: &SolveArgs) -> CmdResult {
    let (reference, scenario, default_grid) = match &a.reduced {
        Some(spec) => {
            let (s, mu) = parse_pair::<f64>(spec, "--reduced")?;
            let mut sc = ScenarioConfig::reduced(s, mu, 30, 30)?;
            sc.c_values = vec![a.c.unwrap_or(1.0)];
            (format!("reduced:{s},{mu}"), sc, Grid::new(30, 30))
        }
        None => {
            let loaded = load_scenario(&a.scenario)?;
            let grid = loaded.scenario.grid();
            (loaded.reference, loaded.scenario, grid)
        }
    };
    scenario.validate()?;
    let c = a.c.unwrap_or(scenario.c_values[0]);
    let params = CostParams::new(c)?;
    let grid = match &a.grid {
        Some(g) => {
            let (b1, b2) = parse_pair::<u32>(g, "--grid")?;
            Grid::new(b1, b2)
        }
        None => default_grid,
    };
    let model = scenario.model()?;
    let opts = SolveOptions {
        tol: a.tol,
        max_iters: a.max_iters,
    };
    let (vf, policy) = solve_full(&model, params, grid, opts)?;

    create_dir(&a.out)?;
    let table = a.out.join("table.csv");
    let file = fs::File::create(&table)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", table.display())))?;
    write_table_csv(std::io::BufWriter::new(file), &vf, &policy)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", table.display())))?;

    let mut slices = Vec::new();
    for j in 0..model.channel.num_states() {
        for m in 0..model.processor.num_states() {
            slices.push(SliceReport {
                j,
                m,
                curve: extract_switchover_slice(&policy, j, m),
            });
        }
    }
    let stats = policy.stats().expect("solved tables carry stats");
    let report = SwitchoverReport {
        c,
        grid,
        iterations: stats.iterations,
        residual: stats.residual,
        switchover: slices.iter().all(|s| s.curve.is_switchover),
        slices,
    };
    write_json(&a.out.join("switchover.json"), &report)?;
    if model.is_reduced() {
        let cone = cone_report(
            model.channel.attribute(0),
            model.processor.attribute(0),
            c,
            grid.b1_max,
            grid.b2_max,
        )?;
        write_json(&a.out.join("cone.json"), &cone)?;
    }
    let manifest = RunManifest {
        command: "solve".into(),
        scenario_ref: reference,
        scenario: ScenarioConfig {
            c_values: vec![c],
            ..scenario
        },
        policies: vec![PolicyKind::Opt],
        c_grid: vec![c],
        episodes: 0,
        seed: 0,
        out_dir: a.out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;
    println!(
        "solved c = {c} on {}x{} grid in {} sweeps; switchover = {}",
        grid.b1_max, grid.b2_max, stats.iterations, report.switchover
    );
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> CmdResult {
    let loaded = load_scenario(&a.scenario)?;
    let mut scenario = loaded.scenario;
    if let Some(n) = a.episodes {
        scenario.episodes = n;
    }
    if let Some(seed) = a.seed {
        scenario.base_seed = seed;
    }
    if let Some(spec) = &a.c_grid {
        scenario.c_values = parse_c_grid(spec)?;
    }
    scenario.validate()?;
    let policies = match (&a.policies, loaded.policies) {
        (Some(list), _) => parse_policies(list)?,
        (None, Some(from_manifest)) => from_manifest,
        (None, None) => PolicyKind::ALL.to_vec(),
    };
    if policies.is_empty() {
        return Err(Failure::config("no policies requested"));
    }
    create_dir(&a.out)?;
    let manifest = RunManifest {
        command: "sweep".into(),
        scenario_ref: loaded.reference,
        scenario: scenario.clone(),
        policies: policies.clone(),
        c_grid: scenario.c_values.clone(),
        episodes: scenario.episodes,
        seed: scenario.base_seed,
        out_dir: a.out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&a.out.join("manifest.json"), &manifest)?;

    let mut curves: Vec<(PolicyKind, Vec<TradeoffPoint>)> = Vec::new();
    for &kind in &policies {
        let points = sweep_c(&scenario, kind)?;
        let mut buf = Vec::new();
        write_tradeoff_csv(&mut buf, &points)?;
        write_file(&a.out.join(format!("{kind}.csv")), buf)?;
        let (first, last) = (&points[0], &points[points.len() - 1]);
        println!(
            "{kind:>6}: c {} -> {}: b2_ave {:.3} -> {:.3}, d_ave {:.3} -> {:.3}",
            first.c, last.c, first.b2_ave, last.b2_ave, first.d_ave, last.d_ave
        );
        curves.push((kind, points));
    }
    if let Some((_, opt)) = curves.iter().find(|(k, _)| *k == PolicyKind::Opt) {
        let mut report = serde_json::Map::new();
        for (kind, points) in curves.iter().filter(|(k, _)| *k != PolicyKind::Opt) {
            let checks = dominance(opt, points)?;
            let held = checks.iter().filter(|d| d.dominated).count();
            println!("{kind:>6}: dominated by opt at {held}/{} c values", checks.len());
            report.insert(
                kind.name().to_string(),
                serde_json::to_value(&checks).expect("plain data serialises"),
            );
        }
        write_json(&a.out.join("dominance.json"), &report)?;
    }
    let series: Vec<Series> = curves
        .iter()
        .map(|(k, p)| Series {
            label: k.name(),
            points: p,
        })
        .collect();
    let title = scenario
        .name
        .clone()
        .unwrap_or_else(|| "tradeoff".to_string());
    write_file(&a.out.join("tradeoff.svg"), tradeoff_svg(&title, &series))?;
    Ok(())
}

/// One out-of-tolerance cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub row: usize,
    pub c: f64,
    pub column: String,
    pub baseline: f64,
    pub candidate: f64,
    pub rel_diff: f64,
}

/// Relative difference `|b - a| / |a|`, falling back to the absolute
/// difference when the baseline is zero.
pub fn relative_diff(baseline: f64, candidate: f64) -> f64 {
    let d = (candidate - baseline).abs();
    if baseline == 0.0 {
        d
    } else {
        d / baseline.abs()
    }
}

/// Cells of `candidate` whose relative difference from `baseline` exceeds
/// `tol`. Fails if the two files do not share a c grid.
pub fn compare_points(
    baseline: &[TradeoffPoint],
    candidate: &[TradeoffPoint],
    columns: &[String],
    tol: f64,
) -> Result<Vec<Mismatch>, Error> {
    let same_grid = baseline.len() == candidate.len()
        && baseline
            .iter()
            .zip(candidate)
            .all(|(a, b)| relative_diff(a.c, b.c) <= 1e-9);
    if !same_grid {
        return Err(Error::InvalidParameter("c grids differ".into()));
    }
    let mut out = Vec::new();
    for (row, (a, b)) in baseline.iter().zip(candidate).enumerate() {
        for col in columns {
            let (x, y) = match col.as_str() {
                "b2_ave" => (a.b2_ave, b.b2_ave),
                "d_ave" => (a.d_ave, b.d_ave),
                "mean_cost" => (a.mean_cost, b.mean_cost),
                // A missing interval compares as zero width.
                "ci_b2" => (a.ci_b2.unwrap_or(0.0), b.ci_b2.unwrap_or(0.0)),
                "ci_d" => (a.ci_d.unwrap_or(0.0), b.ci_d.unwrap_or(0.0)),
                other => {
                    return Err(Error::InvalidParameter(format!("unknown column `{other}`")))
                }
            };
            let rel_diff = relative_diff(x, y);
            if rel_diff > tol {
                out.push(Mismatch {
                    row: row + 1,
                    c: a.c,
                    column: col.clone(),
                    baseline: x,
                    candidate: y,
                    rel_diff,
                });
            }
        }
    }
    Ok(out)
}

fn read_points(path: &Path) -> Result<Vec<TradeoffPoint>, Failure> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    read_tradeoff_csv(file).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn cmd_compare(a: &CompareArgs) -> CmdResult {
    let base = read_points(&a.baseline)?;
    let cand = read_points(&a.candidate)?;
    let mismatches = compare_points(&base, &cand, &a.columns, a.tol)?;
    if mismatches.is_empty() {
        println!("pass: {} rows within relative tolerance {}", base.len(), a.tol);
        return Ok(());
    }
    for m in &mismatches {
        println!(
            "row {} (c = {}): {} baseline {} candidate {} rel diff {:.4}",
            m.row, m.c, m.column, m.baseline, m.candidate, m.rel_diff
        );
    }
    Err(Failure {
        code: EXIT_COMPARE,
        message: format!("{} values outside relative tolerance {}", mismatches.len(), a.tol),
    })
}
