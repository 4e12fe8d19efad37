use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crhd::depth::{DepthMethod, DepthRequest};
use crhd::dgp::{gen_true_curves, sparsify, ErrorDist, MeanSpec, ScoreDist, SparseDesign, TrueModel, TrueModelParams};
use crhd::directions::Regularization;
use crhd::harness::{run_experiment, run_single_depth, ExperimentConfig, ExperimentKind, SingleDepthParams};
use crhd::inference::{depth_kw_test, KwTestParams};
use crhd::io::{read_long_csv, read_model, write_depth_csv, write_long_csv, write_model};
use crhd::numerics::RngStream;
use crhd::smoothing::{fit_model, Bandwidths, FitOptions, DEFAULT_GRID_SIZE};
use crhd::Grid;

#[derive(Parser)]
#[command(name = "crhd", version, about = "Depth and rank tests for sparse, noisy functional data")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for tables and manifests.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate sparse curves; writes `<prefix>.csv` and `<prefix>.truth.json`.
    Simulate(SimulateArgs),
    /// Fit mean, covariance, noise and eigenstructure to a long-format CSV.
    Fit(FitArgs),
    /// Depth of evaluation curves relative to a sample.
    Depth(DepthArgs),
    /// Depth-based two-sample rank test.
    RankTest(RankTestArgs),
    /// Rank-recovery Monte Carlo study (needs --config).
    RankRecovery,
    /// Size/power Monte Carlo study (needs --config).
    SizePower,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    decay: f64,
    #[arg(long, default_value_t = 15)]
    k_star: usize,
    #[arg(long, default_value = "gaussian")]
    scores: ScoreDist,
    #[arg(long, default_value = "normal")]
    errors: ErrorDist,
    #[arg(long, default_value_t = 0.1)]
    noise_var: f64,
    /// Mean slope `c` in `μ(t) = c·t`.
    #[arg(long, default_value_t = 0.0)]
    slope: f64,
    #[arg(long, default_value_t = 2)]
    min_obs: usize,
    #[arg(long, default_value_t = 9)]
    max_obs: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Output file stem, relative to --out-dir.
    #[arg(long, default_value = "sample")]
    prefix: String,
}

#[derive(Args)]
struct FitArgs {
    /// Long-format CSV (`subject_id,time,value`).
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Fixed mean bandwidth; cross-validated when absent.
    #[arg(long)]
    h_mu: Option<f64>,
    /// Output model JSON, relative to --out-dir.
    #[arg(long, default_value = "model.json")]
    output: PathBuf,
}

#[derive(Args)]
struct DepthArgs {
    /// Reference sample CSV.
    sample: PathBuf,
    /// Model JSON produced by `fit`.
    model: PathBuf,
    /// Curves to evaluate; defaults to the reference sample.
    #[arg(long)]
    eval: Option<PathBuf>,
    #[arg(long, default_value = "acrhd")]
    method: DepthMethod,
    #[arg(long = "K", default_value_t = 4)]
    k: usize,
    /// Quantile level of the pool's RKHS norms.
    #[arg(long, conflicts_with = "lambda")]
    u: Option<f64>,
    /// Explicit regularization radius.
    #[arg(long)]
    lambda: Option<f64>,
    /// Accepted directions (defaults to 1000·K).
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long, default_value = "depth.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct RankTestArgs {
    group0: PathBuf,
    group1: PathBuf,
    #[arg(long, default_value = "acrhd")]
    method: DepthMethod,
    #[arg(long = "K", default_value_t = 6)]
    k: usize,
    #[arg(long, default_value_t = 0.95)]
    u: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    grid_size: usize,
    #[arg(long)]
    h_mu: Option<f64>,
    #[arg(long, default_value = "rank_test.json")]
    output: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(dir: &Path, name: &Path) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_sample(path: &Path) -> Result<crhd::dgp::SparseSample> {
    read_long_csv(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_config(cli: &Cli, expected: ExperimentKind) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("this subcommand needs --config")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if cfg.experiment != expected {
        bail!("{} describes a {:?} experiment", path.display(), cfg.experiment);
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let grid = Arc::new(Grid::uniform(a.grid_size)?);
    let params = TrueModelParams {
        mean: if a.slope == 0.0 { MeanSpec::Zero } else { MeanSpec::LinearSlope(a.slope) },
        decay_a: a.decay,
        k_star: a.k_star,
        score_dist: a.scores,
        error_dist: a.errors,
        noise_var: a.noise_var,
        grid_size: a.grid_size,
    };
    let truth = TrueModel::new(params.clone(), grid)?;
    let stream = RngStream::new(cli.seed.unwrap_or(0)).labeled("simulate");
    let (curves, _) = gen_true_curves(a.n, &truth, stream.labeled("curves"))?;
    let mut design = SparseDesign::new(a.errors, a.noise_var);
    design.n_obs = (a.min_obs, a.max_obs);
    let sample = sparsify(&curves, &design, stream.labeled("sparsify"), "s")?;
    write_long_csv(create(&cli.out_dir, Path::new(&format!("{}.csv", a.prefix)))?, &sample)?;
    serde_json::to_writer_pretty(create(&cli.out_dir, Path::new(&format!("{}.truth.json", a.prefix)))?, &params)?;
    log::info!("simulated {} curves with {} observations", sample.len(), sample.n_observations());
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let sample = read_sample(&a.input)?;
    let mut opts = FitOptions::new(Arc::new(Grid::uniform(a.grid_size)?), RngStream::new(cli.seed.unwrap_or(0)).labeled("fit"));
    opts.bandwidths = a.h_mu.map(Bandwidths::from_mean_bandwidth);
    let model = fit_model(&sample, &opts)?;
    log::info!(
        "fitted {} components, sigma2 = {:.4}",
        model.n_components(),
        model.sigma2()
    );
    write_model(create(&cli.out_dir, &a.output)?, &model)?;
    Ok(())
}

fn depth(cli: &Cli, a: &DepthArgs) -> Result<()> {
    let sample = read_sample(&a.sample)?;
    let model = read_model(open(&a.model)?).with_context(|| format!("reading {}", a.model.display()))?;
    let eval = match &a.eval {
        Some(p) => read_sample(p)?,
        None => sample.clone(),
    };
    let regularization = match (a.u, a.lambda) {
        (_, Some(l)) => Regularization::Lambda(l),
        (u, None) => Regularization::Quantile(u.unwrap_or(0.95)),
    };
    let params = SingleDepthParams {
        method: a.method,
        k: a.k,
        regularization,
        l: a.l,
        pool_size: a.pool_size,
        seed: cli.seed.unwrap_or(0),
    };
    let rows = run_single_depth(&sample, &model, &eval, &params)?;
    write_depth_csv(create(&cli.out_dir, &a.output)?, &rows)?;
    Ok(())
}

fn rank_test(cli: &Cli, a: &RankTestArgs) -> Result<()> {
    let g0 = read_sample(&a.group0)?;
    let g1 = read_sample(&a.group1)?;
    let mut params = KwTestParams::new(
        Arc::new(Grid::uniform(a.grid_size)?),
        RngStream::new(cli.seed.unwrap_or(0)).labeled("rank-test"),
    );
    params.bandwidths = a.h_mu.map(Bandwidths::from_mean_bandwidth);
    let request = DepthRequest::new(a.method, a.k, Regularization::Quantile(a.u));
    let result = depth_kw_test(&g0, &g1, request, &params, a.alpha)?;
    serde_json::to_writer_pretty(create(&cli.out_dir, &a.output)?, &result)?;
    println!(
        "H = {:.4}, p = {:.4}, {}",
        result.statistic,
        result.p_value,
        if result.reject { "reject" } else { "do not reject" }
    );
    Ok(())
}

fn experiment(cli: &Cli, kind: ExperimentKind) -> Result<()> {
    let cfg = load_config(cli, kind)?;
    let start = Instant::now();
    let table = run_experiment(&cfg, &cli.out_dir)?;
    for row in &table.rows {
        println!(
            "{:<14} u={:<5} K={:<2} noise_var={:<5} {}{} mean={:.4} se={:.4} n={} dropped={}",
            row.key.method,
            row.key.u,
            row.key.k,
            row.key.noise_var,
            row.key.alternative.map(|a| format!("{a} ")).unwrap_or_default(),
            row.key.c.map(|c| format!("c={c} ")).unwrap_or_default(),
            row.mean,
            row.se,
            row.count,
            row.dropped
        );
    }
    log::info!("finished in {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Fit(a) => fit(&cli, a),
        Command::Depth(a) => depth(&cli, a),
        Command::RankTest(a) => rank_test(&cli, a),
        Command::RankRecovery => experiment(&cli, ExperimentKind::RankRecovery),
        Command::SizePower => experiment(&cli, ExperimentKind::SizePower),
    }
}
