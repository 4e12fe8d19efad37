//! Monte Carlo drivers for rank-recovery and size/power experiments.
//!
//! A run expands its configuration into a full factorial of cells. Replicates
//! are independent work units, each seeded from its own labeled substream, and
//! results are reduced in replicate order so the output does not depend on
//! how rayon schedules the work.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::depth::{
    dense_rhd_all, depth_batch, BatchOptions, DepthMethod, DepthRequest,
};
use crate::dgp::{gen_true_curves, sparsify, ErrorDist, MeanSpec, ScoreDist, SparseDesign, SparseSample, TrueModel, TrueModelParams};
use crate::directions::{default_accept_target, default_pool_size, filter_pool, sample_direction_pool, Regularization};
use crate::error::{Error, Result};
use crate::inference::{kw_from_depths, spearman, two_reference_depths, KwTestParams};
use crate::io::DepthRecord;
use crate::numerics::RngStream;
use crate::smoothing::{fit_model, Bandwidths, FitOptions, FittedModel, DEFAULT_GRID_SIZE, MAX_COMPONENTS};
use crate::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RankRecovery,
    SizePower,
    SingleDepth,
}

/// How the second group departs from the first in a size/power run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Mean `c·t`, same decay rate.
    MeanDiff,
    /// Decay rate `a − c`, same mean.
    CovDiff,
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::MeanDiff => "mean_diff",
            Alternative::CovDiff => "cov_diff",
        })
    }
}

/// Simulated process and observation scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessConfig {
    pub decay_a: f64,
    pub k_star: usize,
    pub score_dist: ScoreDist,
    pub error_dist: ErrorDist,
    pub noise_var: Vec<f64>,
    /// Slope of the (first-group) mean `c·t`.
    pub mean_slope: f64,
    pub grid_size: usize,
    /// Inclusive range of observations per curve.
    pub n_obs: [usize; 2],
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            decay_a: 5.0,
            k_star: 15,
            score_dist: ScoreDist::Gaussian,
            error_dist: ErrorDist::Normal,
            noise_var: vec![0.1],
            mean_slope: 0.0,
            grid_size: DEFAULT_GRID_SIZE,
            n_obs: [2, 9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthConfig {
    pub methods: Vec<DepthMethod>,
    pub u: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    /// `L = accept_per_component · K`.
    pub accept_per_component: usize,
    /// Overrides `L0 = 10 L`.
    pub pool_size: Option<usize>,
    /// Fixed bandwidths instead of cross-validation.
    pub h_mu: Option<f64>,
}

impl Default for DepthConfig {
    fn default() -> Self {
        Self {
            methods: vec![DepthMethod::Acrhd, DepthMethod::Pcrhd, DepthMethod::TwoStageRhd],
            u: vec![0.95],
            k: vec![4],
            accept_per_component: default_accept_target(1),
            pool_size: None,
            h_mu: None,
        }
    }
}

impl DepthConfig {
    fn bandwidths(&self) -> Option<Bandwidths> {
        self.h_mu.map(Bandwidths::from_mean_bandwidth)
    }

    fn requests(&self) -> Vec<DepthRequest> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &u in &self.u {
                for &method in &self.methods {
                    if method == DepthMethod::TwoStageThd && u != self.u[0] {
                        continue;
                    }
                    out.push(DepthRequest {
                        method,
                        k,
                        regularization: Regularization::Quantile(u),
                        l: self.accept_per_component * k,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlternativeConfig {
    pub kinds: Vec<Alternative>,
    pub c: Vec<f64>,
}

impl Default for AlternativeConfig {
    fn default() -> Self {
        Self {
            kinds: vec![Alternative::MeanDiff],
            c: vec![0.0],
        }
    }
}

/// Full experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Total sample size (split evenly between groups in size/power runs).
    pub n: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub process: ProcessConfig,
    #[serde(default)]
    pub depth: DepthConfig,
    #[serde(default)]
    pub alternative: AlternativeConfig,
}

fn default_replicates() -> usize {
    500
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.replicates == 0 {
            return fail("replicates must be at least 1");
        }
        if self.n < 2 {
            return fail("n must be at least 2");
        }
        if self.experiment == ExperimentKind::SizePower && (self.n % 2 != 0 || self.n < 4) {
            return fail("size/power runs need an even n of at least 4");
        }
        let p = &self.process;
        if p.noise_var.is_empty() || self.depth.u.is_empty() || self.depth.k.is_empty() || self.depth.methods.is_empty() {
            return fail("noise_var, u, K and methods must be non-empty");
        }
        if self.alternative.kinds.is_empty() || self.alternative.c.is_empty() {
            return fail("alternative kinds and c must be non-empty");
        }
        if p.noise_var.iter().any(|&s| !(s >= 0.0)) {
            return fail("noise variances must be non-negative");
        }
        if self.depth.u.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
            return fail("quantile levels must lie in (0, 1)");
        }
        if self.depth.k.contains(&0) || self.depth.accept_per_component == 0 {
            return fail("K and accept_per_component must be positive");
        }
        if p.n_obs[0] == 0 || p.n_obs[0] > p.n_obs[1] {
            return fail("n_obs must be a non-empty range of positive counts");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0, 1)");
        }
        if p.grid_size < 3 {
            return fail("grid_size must be at least 3");
        }
        Ok(())
    }

    fn grid(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::uniform(self.process.grid_size)?))
    }

    fn truth(&self, grid: &Arc<Grid>, mean: MeanSpec, decay_a: f64, noise_var: f64) -> Result<TrueModel> {
        let p = &self.process;
        let params = TrueModelParams {
            mean,
            decay_a,
            k_star: p.k_star,
            score_dist: p.score_dist,
            error_dist: p.error_dist,
            noise_var,
            grid_size: p.grid_size,
        };
        TrueModel::new(params, grid.clone())
    }

    fn design(&self, noise_var: f64) -> SparseDesign {
        let mut d = SparseDesign::new(self.process.error_dist, noise_var);
        d.n_obs = (self.process.n_obs[0], self.process.n_obs[1]);
        d
    }

    fn base_mean(&self) -> MeanSpec {
        if self.process.mean_slope == 0.0 {
            MeanSpec::Zero
        } else {
            MeanSpec::LinearSlope(self.process.mean_slope)
        }
    }
}

/// Key of one result cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub method: DepthMethod,
    pub u: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub noise_var: f64,
    pub alternative: Option<Alternative>,
    pub c: Option<f64>,
}

/// Aggregated criterion for one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub key: CellKey,
    /// Mean Spearman correlation or rejection rate.
    pub mean: f64,
    pub sd: f64,
    /// Monte Carlo standard error of `mean`.
    pub se: f64,
    pub count: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: ExperimentKind,
    pub replicates: usize,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn find(&self, method: DepthMethod, u: f64, k: usize, noise_var: f64, alt: Option<(Alternative, f64)>) -> Option<&ResultRow> {
        self.rows.iter().find(|r| {
            r.key.method == method
                && r.key.u == u
                && r.key.k == k
                && r.key.noise_var == noise_var
                && match alt {
                    Some((a, c)) => r.key.alternative == Some(a) && r.key.c == Some(c),
                    None => true,
                }
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "u", "K", "noise_var", "alternative", "c", "mean", "sd", "se", "count", "dropped"])
            .map_err(|e| Error::Config(e.to_string()))?;
        for r in &self.rows {
            let opt = |v: Option<String>| v.unwrap_or_default();
            w.write_record([
                r.key.method.to_string(),
                r.key.u.to_string(),
                r.key.k.to_string(),
                r.key.noise_var.to_string(),
                opt(r.key.alternative.map(|a| a.to_string())),
                opt(r.key.c.map(|c| c.to_string())),
                r.mean.to_string(),
                r.sd.to_string(),
                r.se.to_string(),
                r.count.to_string(),
                r.dropped.to_string(),
            ])
            .map_err(|e| Error::Config(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Smallest completion fraction over all cells.
    pub fn completion(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.count as f64 / (r.count + r.dropped).max(1) as f64)
            .fold(1.0, f64::min)
    }
}

fn summarize(key: CellKey, values: &[Option<f64>], binary: bool) -> ResultRow {
    let done: Vec<f64> = values.iter().flatten().copied().collect();
    let count = done.len();
    let mean = if count > 0 { done.iter().sum::<f64>() / count as f64 } else { f64::NAN };
    let sd = if count > 1 {
        (done.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    let se = if count == 0 {
        f64::NAN
    } else if binary {
        (mean * (1.0 - mean) / count as f64).sqrt()
    } else {
        sd / (count as f64).sqrt()
    };
    ResultRow {
        key,
        mean,
        sd,
        se,
        count,
        dropped: values.len() - count,
    }
}

/// Timing and provenance written next to a result table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub crate_version: String,
    pub seed: u64,
    pub replicates: usize,
    pub threads: usize,
    pub elapsed_seconds: f64,
    pub min_completion: f64,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, table: &ResultTable, elapsed_seconds: f64) -> Self {
        Self {
            config_hash: config.hash(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            replicates: config.replicates,
            threads: rayon::current_num_threads(),
            elapsed_seconds,
            min_completion: table.completion(),
            config: config.clone(),
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, config: &ExperimentConfig, table: &ResultTable, elapsed_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    table.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
    let manifest = RunManifest::new(config, table, elapsed_seconds);
    serde_json::to_writer_pretty(std::fs::File::create(dir.join(format!("{stem}.manifest.json")))?, &manifest)?;
    Ok(())
}

fn fit(sample: &SparseSample, grid: &Arc<Grid>, cfg: &ExperimentConfig, stream: RngStream) -> Result<FittedModel> {
    let mut opts = FitOptions::new(grid.clone(), stream);
    opts.bandwidths = cfg.depth.bandwidths();
    fit_model(sample, &opts)
}

/// Dense depths of the true curves, Spearman-compared with each sparse depth.
fn rank_recovery_replicate(cfg: &ExperimentConfig, grid: &Arc<Grid>, noise_var: f64, stream: RngStream) -> Result<Vec<Option<f64>>> {
    let truth = cfg.truth(grid, cfg.base_mean(), cfg.process.decay_a, noise_var)?;
    let (curves, _) = gen_true_curves(cfg.n, &truth, stream.labeled("curves"))?;
    let k_max = cfg.n.min(MAX_COMPONENTS).min(grid.len() - 1);
    let dense_model = FittedModel::from_dense_curves(&curves, k_max)?;
    let sample = sparsify(&curves, &cfg.design(noise_var), stream.labeled("sparsify"), "s")?;
    let model = fit(&sample, grid, cfg, stream.labeled("fit"))?;

    let requests = cfg.depth.requests();
    let mut batch = BatchOptions::new(stream.labeled("depth"));
    batch.pool_size = cfg.depth.pool_size;
    let columns = depth_batch(&sample, &model, sample.curves(), &requests, &batch)?;

    let mut truth_depths: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    for &k in &cfg.depth.k {
        let l = cfg.depth.accept_per_component * k;
        let l0 = cfg.depth.pool_size.unwrap_or_else(|| default_pool_size(l));
        let pool = sample_direction_pool(&dense_model, k, l0, stream.labeled(&format!("truth-pool/K={k}")))?;
        for &u in &cfg.depth.u {
            let lambda = Regularization::Quantile(u).resolve(&pool)?;
            let accepted = filter_pool(&pool, lambda, l)?;
            let d = dense_rhd_all(&curves, &dense_model, &pool, &accepted.indices, k)?;
            truth_depths.insert((k, u.to_bits()), d.iter().map(|r| r.value).collect());
        }
    }
    Ok(columns
        .iter()
        .map(|col| {
            let u = col.request.regularization.quantile().unwrap_or(cfg.depth.u[0]);
            let target = &truth_depths[&(col.request.k, u.to_bits())];
            let sparse: Vec<f64> = col.results.iter().map(|r| r.value).collect();
            spearman(target, &sparse).ok()
        })
        .collect())
}

fn cell_keys_rank(cfg: &ExperimentConfig, noise_var: f64) -> Vec<CellKey> {
    cfg.depth
        .requests()
        .iter()
        .map(|r| CellKey {
            method: r.method,
            u: r.regularization.quantile().unwrap_or(cfg.depth.u[0]),
            k: r.k,
            noise_var,
            alternative: None,
            c: None,
        })
        .collect()
}

/// Mean Spearman correlation between dense depths of the true curves and
/// sparse depths of their noisy observations.
pub fn run_rank_recovery(cfg: &ExperimentConfig) -> Result<ResultTable> {
    if cfg.experiment != ExperimentKind::RankRecovery {
        return Err(Error::Config("configuration is not a rank_recovery experiment".into()));
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let root = RngStream::new(cfg.seed).labeled("rank_recovery");
    let mut rows = Vec::new();
    for &noise_var in &cfg.process.noise_var {
        let cell_stream = root.labeled(&format!("noise_var={noise_var}"));
        let keys = cell_keys_rank(cfg, noise_var);
        let reps: Vec<Vec<Option<f64>>> = (0..cfg.replicates as u64)
            .into_par_iter()
            .map(|m| match rank_recovery_replicate(cfg, &grid, noise_var, cell_stream.substream(m)) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("replicate {m} at noise_var {noise_var} dropped: {e}");
                    vec![None; keys.len()]
                }
            })
            .collect();
        for (j, key) in keys.into_iter().enumerate() {
            let values: Vec<Option<f64>> = reps.iter().map(|r| r[j]).collect();
            rows.push(summarize(key, &values, false));
        }
    }
    Ok(ResultTable {
        experiment: cfg.experiment,
        replicates: cfg.replicates,
        rows,
    })
}

/// The two groups of one size/power replicate.
pub fn generate_groups(
    cfg: &ExperimentConfig,
    grid: &Arc<Grid>,
    noise_var: f64,
    alternative: Alternative,
    c: f64,
    stream: RngStream,
) -> Result<(SparseSample, SparseSample)> {
    let half = cfg.n / 2;
    let base = cfg.truth(grid, cfg.base_mean(), cfg.process.decay_a, noise_var)?;
    let alt = match alternative {
        Alternative::MeanDiff => cfg.truth(grid, MeanSpec::LinearSlope(cfg.process.mean_slope + c), cfg.process.decay_a, noise_var)?,
        Alternative::CovDiff => cfg.truth(grid, cfg.base_mean(), cfg.process.decay_a - c, noise_var)?,
    };
    let design = cfg.design(noise_var);
    let (c0, _) = gen_true_curves(half, &base, stream.labeled("curves/0"))?;
    let (c1, _) = gen_true_curves(half, &alt, stream.labeled("curves/1"))?;
    Ok((
        sparsify(&c0, &design, stream.labeled("sparsify/0"), "g0_")?,
        sparsify(&c1, &design, stream.labeled("sparsify/1"), "g1_")?,
    ))
}

fn size_power_replicate(
    cfg: &ExperimentConfig,
    grid: &Arc<Grid>,
    noise_var: f64,
    alternative: Alternative,
    c: f64,
    stream: RngStream,
) -> Result<Vec<Option<f64>>> {
    let (g0, g1) = generate_groups(cfg, grid, noise_var, alternative, c, stream.labeled("groups"))?;
    let mut params = KwTestParams::new(grid.clone(), stream.labeled("test"));
    params.bandwidths = cfg.depth.bandwidths();
    params.pool_size = cfg.depth.pool_size;
    let depths = two_reference_depths(&g0, &g1, &cfg.depth.requests(), &params)?;
    depths
        .iter()
        .map(|d| Ok(Some(if kw_from_depths(d, g0.len(), cfg.alpha)?.reject { 1.0 } else { 0.0 })))
        .collect()
}

/// Empirical rejection rates of the depth-based Kruskal–Wallis test.
pub fn run_size_power(cfg: &ExperimentConfig) -> Result<ResultTable> {
    if cfg.experiment != ExperimentKind::SizePower {
        return Err(Error::Config("configuration is not a size_power experiment".into()));
    }
    cfg.validate()?;
    let grid = cfg.grid()?;
    let root = RngStream::new(cfg.seed).labeled("size_power");
    let requests = cfg.depth.requests();
    let mut rows = Vec::new();
    for &noise_var in &cfg.process.noise_var {
        for &alternative in &cfg.alternative.kinds {
            for &c in &cfg.alternative.c {
                let cell_stream = root.labeled(&format!("noise_var={noise_var}/{alternative}/c={c}"));
                let reps: Vec<Vec<Option<f64>>> = (0..cfg.replicates as u64)
                    .into_par_iter()
                    .map(|m| match size_power_replicate(cfg, &grid, noise_var, alternative, c, cell_stream.substream(m)) {
                        Ok(v) => v,
                        Err(e) => {
                            log::warn!("replicate {m} ({alternative}, c = {c}) dropped: {e}");
                            vec![None; requests.len()]
                        }
                    })
                    .collect();
                for (j, r) in requests.iter().enumerate() {
                    let key = CellKey {
                        method: r.method,
                        u: r.regularization.quantile().unwrap_or(cfg.depth.u[0]),
                        k: r.k,
                        noise_var,
                        alternative: Some(alternative),
                        c: Some(c),
                    };
                    let values: Vec<Option<f64>> = reps.iter().map(|v| v[j]).collect();
                    rows.push(summarize(key, &values, true));
                }
            }
        }
    }
    Ok(ResultTable {
        experiment: cfg.experiment,
        replicates: cfg.replicates,
        rows,
    })
}

/// Parameters of an ad-hoc depth evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SingleDepthParams {
    pub method: DepthMethod,
    pub k: usize,
    pub regularization: Regularization,
    /// Defaults to `1000 K`.
    pub l: Option<usize>,
    pub pool_size: Option<usize>,
    pub seed: u64,
}

/// Depths of `eval` curves relative to `sample` under `model`.
pub fn run_single_depth(
    sample: &SparseSample,
    model: &FittedModel,
    eval: &SparseSample,
    params: &SingleDepthParams,
) -> Result<Vec<DepthRecord>> {
    let mut request = DepthRequest::new(params.method, params.k, params.regularization);
    if let Some(l) = params.l {
        request.l = l;
    }
    let mut batch = BatchOptions::new(RngStream::new(params.seed).labeled("depth"));
    batch.pool_size = params.pool_size;
    let column = depth_batch(sample, model, eval.curves(), &[request], &batch)?.remove(0);
    Ok(eval
        .curves()
        .iter()
        .zip(&column.results)
        .map(|(c, r)| DepthRecord {
            subject_id: c.subject_id().to_string(),
            method: params.method,
            lambda: column.lambda,
            k: params.k,
            depth: r.value,
        })
        .collect())
}

/// Runs a configured experiment and writes its outputs; returns the table.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ResultTable> {
    let start = Instant::now();
    let (table, stem) = match cfg.experiment {
        ExperimentKind::RankRecovery => (run_rank_recovery(cfg)?, "rank_recovery"),
        ExperimentKind::SizePower => (run_size_power(cfg)?, "size_power"),
        ExperimentKind::SingleDepth => {
            return Err(Error::Config("single_depth runs take input files, not a replicate loop".into()))
        }
    };
    write_outputs(out_dir, stem, cfg, &table, start.elapsed().as_secs_f64())?;
    Ok(table)
}
