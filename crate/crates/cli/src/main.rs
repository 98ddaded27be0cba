mod bench;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use dblsh::dataset::{self, Distribution, DEFAULT_NN_TARGET};
use dblsh::lsh::{derive_params, CollisionProfile, DEFAULT_FANOUT};
use dblsh::{
    Bucketing, BudgetMode, Dataset, DbLshIndex, IndexParams, Neighbor, ParamMode, QueryOutcome,
    Termination,
};

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments; exit code 2.
    Usage(String),
    /// Anything that went wrong while doing the work; exit code 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<dblsh::Error> for CliError {
    fn from(e: dblsh::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

#[derive(Parser)]
#[command(
    name = "dblsh",
    version,
    about = "Approximate nearest-neighbor search with dynamic LSH buckets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in fvecs format.
    Gen(GenArgs),
    /// Print collision probabilities and the derived table shape as JSON.
    Params(ParamsArgs),
    /// Build an index over an fvecs dataset and save it.
    Build(BuildArgs),
    /// Run k-nearest-neighbor queries against a saved index.
    Query(QueryArgs),
    /// Run a benchmark grid and write CSV/JSON reports.
    Bench(Box<bench::BenchArgs>),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    /// `uniform` or `clusters:<count>,<spread>`.
    #[arg(long, default_value = "uniform")]
    dist: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
    /// Generate this many extra points from the same distribution as queries.
    #[arg(long, default_value_t = 0, requires = "queries_out")]
    holdout: usize,
    #[arg(long, requires = "holdout")]
    queries_out: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArgs {
    /// Dataset size; with --t also derives K and L.
    #[arg(long, requires = "t")]
    n: Option<usize>,
    #[arg(long, requires = "n")]
    t: Option<usize>,
    #[arg(long)]
    c: f64,
    #[arg(long, conflicts_with = "gamma")]
    w0: Option<f64>,
    /// Sets w0 = 2 * gamma * c^2.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value = "practical")]
    mode: String,
    /// Hash functions per table (practical mode).
    #[arg(long = "K", default_value_t = 10)]
    k_funcs: usize,
    /// Number of tables (practical mode).
    #[arg(long = "L", default_value_t = 5)]
    l: usize,
    /// Candidate multiplier; queries verify at most 2tL + k points.
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 1.5)]
    c: f64,
    #[arg(long, default_value_t = 9.0)]
    w0: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FANOUT)]
    fanout: usize,
    /// `cumulative` or `per-round`.
    #[arg(long, default_value = "cumulative")]
    budget: String,
    /// Rescale so the mean nearest-neighbor distance equals this value
    /// (the default, with target 4).
    #[arg(long, num_args = 0..=1, default_missing_value = "4", conflicts_with = "scale")]
    rescale_nn: Option<f64>,
    /// Fixed coordinate scale applied before hashing; 1 disables rescaling.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// The dataset the index was built from.
    #[arg(long)]
    data: PathBuf,
    /// fvecs file of query points.
    #[arg(long, conflicts_with = "point", required_unless_present = "point")]
    queries: Option<PathBuf>,
    /// A single comma-separated query vector.
    #[arg(long, allow_hyphen_values = true)]
    point: Option<String>,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Include per-round window widths and per-table candidate counts.
    #[arg(long)]
    explain: bool,
    /// Use fixed buckets instead of query-centric windows.
    #[arg(long)]
    fixed: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Params(a) => cmd_params(a),
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => bench::cmd_bench(*a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn parse_distribution(s: &str) -> CliResult<Distribution> {
    s.parse().map_err(|e| usage(format!("--dist: {e}")))
}

fn cmd_gen(a: GenArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if a.d == 0 {
        return Err(usage("--d must be at least 1"));
    }
    let dist = parse_distribution(&a.dist)?;
    let all = dataset::generate_synthetic(a.n + a.holdout, a.d, dist, a.seed)?;
    let (data, queries) = if a.holdout > 0 {
        let (d, q) = all.split_tail(a.holdout)?;
        (d, Some(q))
    } else {
        (all, None)
    };
    dataset::write_fvecs(&data, &a.out)?;
    if let (Some(q), Some(path)) = (queries, &a.queries_out) {
        dataset::write_fvecs(&q, path)?;
    }
    println!("n={} d={} seed={} dist={}", a.n, a.d, a.seed, dist);
    Ok(())
}

#[derive(Serialize)]
struct ParamsReport {
    c: f64,
    w0: f64,
    gamma: f64,
    p1: f64,
    p2: f64,
    rho_star: f64,
    alpha: f64,
    rho_bound: f64,
    bound_holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    l: Option<usize>,
}

fn cmd_params(a: ParamsArgs) -> CliResult<()> {
    let w0 = match (a.w0, a.gamma) {
        (Some(w0), None) => w0,
        (None, Some(g)) => 2.0 * g * a.c * a.c,
        _ => return Err(usage("give exactly one of --w0 or --gamma")),
    };
    let profile = CollisionProfile::new(a.c, w0).map_err(usage)?;
    let shape = match (a.n, a.t) {
        (Some(n), Some(t)) => Some(derive_params(n, t, a.c, w0).map_err(usage)?),
        _ => None,
    };
    let rho_bound = profile.rho_bound(a.c);
    let report = ParamsReport {
        c: a.c,
        w0,
        gamma: profile.gamma,
        p1: profile.p1,
        p2: profile.p2,
        rho_star: profile.rho_star,
        alpha: profile.alpha,
        rho_bound,
        bound_holds: profile.rho_star <= rho_bound,
        n: a.n,
        t: a.t,
        k: shape.map(|s| s.k),
        l: shape.map(|s| s.l),
    };
    print_json(&report)
}

pub fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value).context("serializing output")?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{s}") {
        // a closed pipe (`| head`) is not an error worth reporting
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r.context("writing to stdout")?),
    }
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(dataset::load_fvecs(path)?)
}

/// Resolves the coordinate scale from `--rescale-nn` or `--scale`; with
/// neither, rescales to the default nearest-neighbor target.
pub fn resolve_scale(
    ds: &Dataset,
    rescale_nn: Option<f64>,
    scale: Option<f64>,
    seed: u64,
) -> CliResult<f64> {
    match (rescale_nn, scale) {
        (Some(target), _) => {
            if !(target > 0.0 && target.is_finite()) {
                return Err(usage(format!(
                    "--rescale-nn must be positive, got {target}"
                )));
            }
            Ok(ds.nn_scale_factor(target, 200, seed)?)
        }
        (None, Some(s)) if s > 0.0 && s.is_finite() => Ok(s),
        (None, Some(s)) => Err(usage(format!("--scale must be positive, got {s}"))),
        (None, None) => Ok(ds.nn_scale_factor(DEFAULT_NN_TARGET, 200, seed)?),
    }
}

fn cmd_build(a: BuildArgs) -> CliResult<()> {
    let mode: ParamMode = a.mode.parse().map_err(|e| usage(format!("--mode: {e}")))?;
    let budget: BudgetMode = a
        .budget
        .parse()
        .map_err(|e| usage(format!("--budget: {e}")))?;
    if a.t == 0 {
        return Err(usage("--t must be at least 1"));
    }
    if a.fanout < 3 {
        return Err(usage("--fanout must be at least 3"));
    }
    let data = load_dataset(&a.data)?;
    let scale = resolve_scale(&data, a.rescale_nn, a.scale, a.seed)?;
    let params = match mode {
        ParamMode::Practical => IndexParams::practical(a.c, a.w0, a.t, a.k_funcs, a.l, a.seed),
        ParamMode::Theoretical => IndexParams::theoretical(data.len(), a.t, a.c, a.w0, a.seed),
    }
    .map_err(usage)?
    .with_fanout(a.fanout)
    .with_budget(budget)
    .with_scale(scale);
    params.validate().map_err(usage)?;

    let start = Instant::now();
    let idx = DbLshIndex::build(Arc::new(data), params)?;
    dblsh::save_index(&idx, &a.out)?;
    println!(
        "built {} points in {:.3}s: mode={} K={} L={} t={} c={} w0={} scale={} seed={}",
        idx.len(),
        start.elapsed().as_secs_f64(),
        params.mode,
        params.k,
        params.l,
        params.t,
        params.c,
        params.w0,
        params.scale,
        params.seed
    );
    Ok(())
}

#[derive(Serialize)]
struct QueryReport<'a> {
    bucketing: Bucketing,
    k: usize,
    results: Vec<QueryRecord<'a>>,
}

#[derive(Serialize)]
struct QueryRecord<'a> {
    query: usize,
    neighbors: &'a [Neighbor],
    terminating_radius: f64,
    termination: Termination,
    candidates_verified: usize,
    rounds: usize,
    query_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a [dblsh::query::RoundTrace]>,
}

fn parse_point(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| usage(format!("--point: bad coordinate {v:?}")))
        })
        .collect()
}

fn cmd_query(a: QueryArgs) -> CliResult<()> {
    let data = Arc::new(load_dataset(&a.data)?);
    let idx = dblsh::load_index(&a.index, data)?;
    let queries: Vec<Vec<f64>> = match (&a.queries, &a.point) {
        (Some(path), _) => {
            let q = load_dataset(path)?;
            q.points().map(|p| p.coords.to_vec()).collect()
        }
        (None, Some(p)) => vec![parse_point(p)?],
        (None, None) => unreachable!("clap requires one of --queries or --point"),
    };
    for (i, q) in queries.iter().enumerate() {
        if q.len() != idx.dim() {
            return Err(usage(format!(
                "query {i} has dimension {}, index has {}",
                q.len(),
                idx.dim()
            )));
        }
    }
    if a.k == 0 || a.k > idx.len() {
        return Err(usage(format!("--k must be between 1 and {}", idx.len())));
    }
    let bucketing = if a.fixed {
        Bucketing::Fixed
    } else {
        Bucketing::Dynamic
    };
    let outcomes: Vec<QueryOutcome> = queries
        .iter()
        .map(|q| idx.search(q, a.k, bucketing))
        .collect::<Result<_, _>>()?;
    let records: Vec<QueryRecord> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| QueryRecord {
            query: i,
            neighbors: &o.neighbors,
            terminating_radius: o.terminating_radius,
            termination: o.termination,
            candidates_verified: o.candidates_verified,
            rounds: o.rounds,
            query_ms: o.timings.total_secs * 1e3,
            trace: a.explain.then_some(o.trace.as_slice()),
        })
        .collect();
    print_json(&QueryReport {
        bucketing,
        k: a.k,
        results: records,
    })
}
