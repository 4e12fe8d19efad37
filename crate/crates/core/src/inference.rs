//! Depth-induced ranks, rank correlation and the two-reference
//! Kruskal–Wallis test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::depth::{depth_batch, BatchOptions, DepthRequest};
use crate::dgp::{SparseCurve, SparseSample};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::smoothing::{fit_model, Bandwidths, FitOptions};
use crate::Grid;
use std::sync::Arc;

/// Ranks with the minimum convention: `1 + #{values strictly smaller}`.
pub fn rank_min_ties(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        for &i in &order[start..end] {
            ranks[i] = start + 1;
        }
        start = end;
    }
    ranks
}

/// Ranks with tied values sharing the average of their positions, plus the
/// tie-group sizes.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Spearman correlation: Pearson correlation of average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two pairs".into()));
    }
    let (rx, _) = average_ranks(x);
    let (ry, _) = average_ranks(y);
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one argument is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Kruskal–Wallis statistic for two groups, with the tie correction.
/// Values are re-ranked jointly with average ties, so passing raw values or
/// any increasing transform of them (such as min-tie ranks) gives the same
/// result. Returns 0 when every value is tied.
pub fn kw_statistic(group0: &[f64], group1: &[f64]) -> Result<f64> {
    if group0.is_empty() || group1.is_empty() {
        return Err(Error::Config("both groups must be non-empty".into()));
    }
    let pooled: Vec<f64> = group0.iter().chain(group1).copied().collect();
    let (ranks, ties) = average_ranks(&pooled);
    let n = pooled.len() as f64;
    let correction = 1.0 - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * n * n - n);
    if correction <= 0.0 {
        return Ok(0.0);
    }
    let center = (n + 1.0) / 2.0;
    let (r0, r1) = ranks.split_at(group0.len());
    let term = |r: &[f64]| {
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.len() as f64 * (m - center).powi(2)
    };
    let h = 12.0 / (n * (n + 1.0)) * (term(r0) + term(r1));
    Ok((h / correction).max(0.0))
}

/// `χ²_1` quantile at probability `p`.
pub fn chi2_quantile(p: f64) -> f64 {
    ChiSquared::new(1.0).expect("valid degrees of freedom").inverse_cdf(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Average of the two reference statistics.
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    /// Statistics computed under the first and second group as reference.
    pub components: (f64, f64),
}

impl TestResult {
    /// Averages the two reference statistics and compares with `χ²_{1−α}(1)`.
    pub fn from_components(h0: f64, h1: f64, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let statistic = 0.5 * (h0 + h1);
        let dist = ChiSquared::new(1.0).expect("valid degrees of freedom");
        Ok(Self {
            statistic,
            p_value: dist.sf(statistic),
            reject: statistic > dist.inverse_cdf(1.0 - alpha),
            alpha,
            components: (h0, h1),
        })
    }
}

/// Reference-fitting and pool parameters for [`depth_kw_test`].
#[derive(Debug, Clone)]
pub struct KwTestParams {
    pub grid: Arc<Grid>,
    /// Chosen by cross-validation per group when absent.
    pub bandwidths: Option<Bandwidths>,
    pub pool_size: Option<usize>,
    pub stream: RngStream,
}

impl KwTestParams {
    pub fn new(grid: Arc<Grid>, stream: RngStream) -> Self {
        Self {
            grid,
            bandwidths: None,
            pool_size: None,
            stream,
        }
    }
}

/// Depths of every curve in both groups, with each group in turn as the reference.
/// Returns one `(under group 0, under group 1)` pair of depth vectors per request.
pub fn two_reference_depths(
    group0: &SparseSample,
    group1: &SparseSample,
    requests: &[DepthRequest],
    params: &KwTestParams,
) -> Result<Vec<[Vec<f64>; 2]>> {
    let pooled: Vec<SparseCurve> = group0.curves().iter().chain(group1.curves()).cloned().collect();
    let mut out: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()]; requests.len()];
    for (g, reference) in [group0, group1].into_iter().enumerate() {
        let stream = params.stream.labeled(&format!("reference/{g}"));
        let tag = |source: Error| Error::GroupFit {
            group: g,
            source: Box::new(source),
        };
        let mut opts = FitOptions::new(params.grid.clone(), stream.labeled("fit"));
        opts.bandwidths = params.bandwidths;
        let model = fit_model(reference, &opts).map_err(tag)?;
        let mut batch = BatchOptions::new(stream.labeled("depth"));
        batch.pool_size = params.pool_size;
        let columns = depth_batch(reference, &model, &pooled, requests, &batch).map_err(tag)?;
        for (slot, col) in out.iter_mut().zip(columns) {
            slot[g] = col.results.iter().map(|r| r.value).collect();
        }
    }
    Ok(out)
}

/// Two-reference test statistic from pooled depths (first `n0` entries from group 0).
pub fn kw_from_depths(depths: &[Vec<f64>; 2], n0: usize, alpha: f64) -> Result<TestResult> {
    let h = |d: &[f64]| {
        let ranks: Vec<f64> = rank_min_ties(d).into_iter().map(|r| r as f64).collect();
        kw_statistic(&ranks[..n0], &ranks[n0..])
    };
    TestResult::from_components(h(&depths[0])?, h(&depths[1])?, alpha)
}

/// Depth-based Kruskal–Wallis tests for several depth requests sharing the
/// per-group reference fits.
pub fn depth_kw_tests(
    group0: &SparseSample,
    group1: &SparseSample,
    requests: &[DepthRequest],
    params: &KwTestParams,
    alpha: f64,
) -> Result<Vec<TestResult>> {
    two_reference_depths(group0, group1, requests, params)?
        .iter()
        .map(|d| kw_from_depths(d, group0.len(), alpha))
        .collect()
}

/// Depth-based Kruskal–Wallis test of equal distributions for one depth request.
pub fn depth_kw_test(
    group0: &SparseSample,
    group1: &SparseSample,
    request: DepthRequest,
    params: &KwTestParams,
    alpha: f64,
) -> Result<TestResult> {
    Ok(depth_kw_tests(group0, group1, &[request], params, alpha)?.remove(0))
}
