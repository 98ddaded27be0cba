use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

use dblsh::dataset;
use dblsh::eval::{run_benchmark, Algorithm, BenchConfig, BenchGrid, GroundTruth};
use dblsh::{BudgetMode, Dataset, ParamMode};

use crate::{load_dataset, parse_distribution, resolve_scale, usage, CliResult};

#[derive(Args)]
pub struct BenchArgs {
    /// TOML file with grid and data settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for report.csv, report.json and curve.csv.
    #[arg(short, long, default_value = "bench-out")]
    out_dir: PathBuf,
    /// Dataset; synthetic data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Query file; without it the last `num_queries` points of the data are held out.
    #[arg(long, requires = "data")]
    queries: Option<PathBuf>,
    /// Comma-separated list of db-lsh, fb-lsh, exact.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    c: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    w0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    t: Option<Vec<usize>>,
    #[arg(long = "K", value_delimiter = ',')]
    k_funcs: Option<Vec<usize>>,
    #[arg(long = "L", value_delimiter = ',')]
    l: Option<Vec<usize>>,
    /// Index seeds; defaults to --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    fanout: Option<usize>,
    /// Neighbors per query.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Query worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Seed for synthetic data, scale sampling and (by default) the index.
    #[arg(long)]
    seed: Option<u64>,
    /// Nearest-neighbor distance to rescale to (default 4).
    #[arg(long, num_args = 0..=1, default_missing_value = "4", conflicts_with = "scale")]
    rescale_nn: Option<f64>,
    /// Fixed coordinate scale; 1 disables rescaling.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    dist: Option<String>,
    #[arg(long)]
    num_queries: Option<usize>,
    /// Directory for cached ground truth.
    #[arg(long)]
    truth_cache: Option<PathBuf>,
}

/// A list that may be written as a single value.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    queries: Option<PathBuf>,
    algorithms: Option<OneOrMany<String>>,
    c: Option<OneOrMany<f64>>,
    w0: Option<OneOrMany<f64>>,
    t: Option<OneOrMany<usize>>,
    #[serde(rename = "K")]
    k_funcs: Option<OneOrMany<usize>>,
    #[serde(rename = "L")]
    l: Option<OneOrMany<usize>>,
    seeds: Option<OneOrMany<u64>>,
    mode: Option<String>,
    budget: Option<String>,
    fanout: Option<usize>,
    k: Option<usize>,
    repetitions: Option<usize>,
    threads: Option<usize>,
    seed: Option<u64>,
    rescale_nn: Option<f64>,
    scale: Option<f64>,
    n: Option<usize>,
    d: Option<usize>,
    dist: Option<String>,
    num_queries: Option<usize>,
    truth_cache: Option<PathBuf>,
}

fn read_config(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_list<T>(flag: Option<Vec<T>>, file: Option<OneOrMany<T>>, default: Vec<T>) -> Vec<T> {
    flag.or(file.map(OneOrMany::into_vec)).unwrap_or(default)
}

fn non_empty<T>(name: &str, v: Vec<T>) -> CliResult<Vec<T>> {
    if v.is_empty() {
        return Err(usage(format!("{name} must list at least one value")));
    }
    Ok(v)
}

pub fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let file = match &a.config {
        Some(p) => read_config(p)?,
        None => FileConfig::default(),
    };
    let defaults = BenchConfig::default();
    let seed = pick(a.seed, file.seed, 1);

    let algorithms = pick_list(
        a.algorithms,
        file.algorithms,
        defaults.algorithms.iter().map(|a| a.to_string()).collect(),
    )
    .iter()
    .map(|s| s.parse::<Algorithm>().map_err(usage))
    .collect::<CliResult<Vec<_>>>()?;
    let mode: ParamMode = pick(a.mode, file.mode, "practical".into())
        .parse()
        .map_err(|e| usage(format!("mode: {e}")))?;
    let budget: BudgetMode = pick(a.budget, file.budget, "cumulative".into())
        .parse()
        .map_err(|e| usage(format!("budget: {e}")))?;
    let k = pick(a.k, file.k, defaults.k);
    let repetitions = pick(a.repetitions, file.repetitions, defaults.repetitions);
    if k == 0 || repetitions == 0 {
        return Err(usage("k and repetitions must be at least 1"));
    }
    let threads = a.threads.or(file.threads);
    if threads == Some(0) {
        return Err(usage("threads must be at least 1"));
    }

    let (data, queries) = load_inputs(
        a.data.or(file.data),
        a.queries.or(file.queries),
        pick(a.n, file.n, 10_000),
        pick(a.d, file.d, 32),
        &pick(a.dist, file.dist, "clusters:10,0.05".into()),
        pick(a.num_queries, file.num_queries, 100),
        seed,
    )?;
    if data.dim() != queries.dim() {
        return Err(usage(format!(
            "queries have dimension {}, data has {}",
            queries.dim(),
            data.dim()
        )));
    }
    if k > data.len() {
        return Err(usage(format!(
            "k = {k} exceeds the dataset size {}",
            data.len()
        )));
    }

    // a scale flag replaces both scale settings from the file
    let (rescale, fixed) = if a.rescale_nn.is_some() || a.scale.is_some() {
        (a.rescale_nn, a.scale)
    } else {
        (file.rescale_nn, file.scale)
    };
    if rescale.is_some() && fixed.is_some() {
        return Err(usage("give at most one of rescale_nn and scale"));
    }
    let scale = resolve_scale(&data, rescale, fixed, seed)?;
    let grid = BenchGrid {
        c: non_empty("c", pick_list(a.c, file.c, vec![1.5]))?,
        w0: non_empty("w0", pick_list(a.w0, file.w0, vec![9.0]))?,
        t: non_empty("t", pick_list(a.t, file.t, vec![50]))?,
        k_funcs: non_empty("K", pick_list(a.k_funcs, file.k_funcs, vec![10]))?,
        l: non_empty("L", pick_list(a.l, file.l, vec![5]))?,
        seeds: non_empty("seeds", pick_list(a.seeds, file.seeds, vec![seed]))?,
        mode,
        fanout: pick(a.fanout, file.fanout, defaults.grid.fanout),
        budget,
        scale,
    };
    let config = BenchConfig {
        algorithms: non_empty("algorithms", algorithms)?,
        grid,
        k,
        repetitions,
        threads,
    };

    let truth = match a.truth_cache.or(file.truth_cache) {
        Some(dir) => {
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            GroundTruth::load_or_compute(&dir, &data, &queries, k)?
        }
        None => GroundTruth::compute(&data, &queries, k)?,
    };
    let report = run_benchmark(Arc::new(data), &queries, &truth, &config)?;

    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))?;
    report.write_csv(a.out_dir.join("report.csv"))?;
    report.write_json(a.out_dir.join("report.json"))?;
    report.write_curve_csv(a.out_dir.join("curve.csv"))?;

    for row in &report.rows {
        let label = format!(
            "{} c={} w0={} t={} K={} L={} seed={}",
            row.algorithm,
            fmt_opt(row.c),
            fmt_opt(row.w0),
            fmt_opt(row.t),
            fmt_opt(row.k_funcs),
            fmt_opt(row.l),
            fmt_opt(row.seed)
        );
        match &row.error {
            Some(e) => println!("{label}: failed: {e}"),
            None => println!(
                "{label}: recall={:.4} ratio={:.4} {:.3} ms/query",
                row.recall, row.overall_ratio, row.mean_query_ms
            ),
        }
    }
    println!(
        "{} cells, {} failed; reports in {} (scale {scale})",
        report.rows.len(),
        report.failed_cells(),
        a.out_dir.display()
    );
    if report.all_failed() {
        return Err(crate::CliError::Runtime(anyhow::anyhow!(
            "every benchmark cell failed"
        )));
    }
    Ok(())
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |v| v.to_string())
}

fn load_inputs(
    data: Option<PathBuf>,
    queries: Option<PathBuf>,
    n: usize,
    d: usize,
    dist: &str,
    num_queries: usize,
    seed: u64,
) -> CliResult<(Dataset, Dataset)> {
    if num_queries == 0 {
        return Err(usage("num_queries must be at least 1"));
    }
    match (data, queries) {
        (Some(data), Some(queries)) => Ok((load_dataset(&data)?, load_dataset(&queries)?)),
        (Some(data), None) => {
            let all = load_dataset(&data)?;
            if all.len() <= num_queries {
                return Err(usage(format!(
                    "cannot hold out {num_queries} queries from {} points",
                    all.len()
                )));
            }
            Ok(all.split_tail(num_queries)?)
        }
        (None, Some(_)) => Err(usage("queries given without data")),
        (None, None) => {
            if n == 0 || d == 0 {
                return Err(usage("n and d must be at least 1"));
            }
            let dist = parse_distribution(dist)?;
            let all = dataset::generate_synthetic(n + num_queries, d, dist, seed)?;
            Ok(all.split_tail(num_queries)?)
        }
    }
}
