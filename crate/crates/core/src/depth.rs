//! Depth engines: each depth is a minimum over a finite set of accepted pool
//! directions, with ties resolved toward the lowest pool index.

use std::fmt;
use std::sync::Arc;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditioning::{build_design, predict_from_design, ObsDesign};
use crate::dgp::{SparseCurve, SparseSample};
use crate::directions::{default_accept_target, default_pool_size, filter_pool, sample_direction_pool, DirectionPool, Regularization};
use crate::error::{Error, Result};
use crate::numerics::{std_normal_sf, RngStream};
use crate::smoothing::{FittedModel, MAX_COMPONENTS};
use crate::DenseCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMethod {
    Acrhd,
    Pcrhd,
    TwoStageRhd,
    TwoStageThd,
}

impl DepthMethod {
    pub const ALL: [DepthMethod; 4] = [
        DepthMethod::Acrhd,
        DepthMethod::Pcrhd,
        DepthMethod::TwoStageRhd,
        DepthMethod::TwoStageThd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DepthMethod::Acrhd => "acrhd",
            DepthMethod::Pcrhd => "pcrhd",
            DepthMethod::TwoStageRhd => "two_stage_rhd",
            DepthMethod::TwoStageThd => "two_stage_thd",
        }
    }
}

impl fmt::Display for DepthMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DepthMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "acrhd" => Ok(DepthMethod::Acrhd),
            "pcrhd" => Ok(DepthMethod::Pcrhd),
            "two_stage_rhd" | "twostagerhd" => Ok(DepthMethod::TwoStageRhd),
            "two_stage_thd" | "twostagethd" => Ok(DepthMethod::TwoStageThd),
            other => Err(Error::Config(format!("unknown depth method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthResult {
    pub value: f64,
    /// Pool index of the minimizing direction.
    pub argmin_direction: usize,
    pub n_directions_used: usize,
}

/// Running minimum with ties going to the lowest pool index.
#[derive(Clone, Copy)]
struct Best {
    value: f64,
    index: usize,
}

impl Best {
    fn new() -> Self {
        Self {
            value: f64::INFINITY,
            index: usize::MAX,
        }
    }

    #[inline]
    fn offer(&mut self, value: f64, index: usize) {
        if value < self.value || (value == self.value && index < self.index) {
            self.value = value;
            self.index = index;
        }
    }
}

fn check_accepted(pool: &DirectionPool, accepted: &[usize], k: usize) -> Result<()> {
    if pool.k() != k {
        return Err(Error::Dimension {
            expected: k,
            got: pool.k(),
        });
    }
    if accepted.is_empty() {
        let min_norm = pool.rkhs_norms().iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::EmptyDirectionSet {
            lambda: f64::NAN,
            min_norm,
        });
    }
    if let Some(&bad) = accepted.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::Dimension {
            expected: pool.len(),
            got: bad,
        });
    }
    Ok(())
}

/// Per-direction conditional moments of a reference sample, laid out
/// direction-major so each direction's sum over curves is contiguous.
#[derive(Debug, Clone)]
pub struct ConditionalReference {
    k: usize,
    n: usize,
    accepted: Vec<usize>,
    dirs: Vec<f64>,
    prior: Vec<f64>,
    proj_mu: Vec<f64>,
    eta: Vec<f64>,
    psi: Vec<f64>,
}

impl ConditionalReference {
    /// Precomputes `η̂_i(a)` and `Ψ̂_i(a)` for every reference design and accepted direction.
    pub fn new(designs: &[ObsDesign], model: &FittedModel, pool: &DirectionPool, accepted: &[usize], k: usize) -> Result<Self> {
        check_accepted(pool, accepted, k)?;
        if let Some(d) = designs.iter().find(|d| d.k() != k) {
            return Err(Error::Dimension { expected: k, got: d.k() });
        }
        let n = designs.len();
        let mut dirs = Vec::with_capacity(accepted.len() * k);
        let mut prior = Vec::with_capacity(accepted.len());
        let mut proj_mu = Vec::with_capacity(accepted.len());
        let mut eta = Vec::with_capacity(accepted.len() * n);
        let mut psi = Vec::with_capacity(accepted.len() * n);
        let pm = &model.proj_mu()[..k];
        let gamma = &model.eigenvalues()[..k];
        for &l in accepted {
            let a = pool.direction(l);
            dirs.extend_from_slice(a);
            prior.push(a.iter().zip(gamma).map(|(x, g)| g * x * x).sum());
            proj_mu.push(pm.iter().zip(a).map(|(p, x)| p * x).sum());
            for d in designs {
                eta.push(d.eta(a));
                psi.push(d.psi(a).0);
            }
        }
        Ok(Self {
            k,
            n,
            accepted: accepted.to_vec(),
            dirs,
            prior,
            proj_mu,
            eta,
            psi,
        })
    }

    pub fn n_directions(&self) -> usize {
        self.accepted.len()
    }

    /// Conditional moments of the evaluation curve along every accepted direction.
    fn target_moments(&self, x0: &ObsDesign) -> (Vec<f64>, Vec<f64>) {
        (0..self.accepted.len())
            .map(|j| {
                let a = &self.dirs[j * self.k..(j + 1) * self.k];
                (x0.eta(a), x0.psi(a).0)
            })
            .unzip()
    }

    #[inline]
    fn plug_in_term(&self, j: usize, eta0: f64, psi0: f64) -> f64 {
        let var = (psi0 + self.prior[j]).max(1e-12 * self.prior[j]);
        std_normal_sf((eta0 - self.proj_mu[j]) / var.sqrt())
    }

    /// Sample-averaged depth of the curve behind `x0`.
    pub fn acrhd(&self, x0: &ObsDesign) -> Result<DepthResult> {
        if x0.k() != self.k {
            return Err(Error::Dimension { expected: self.k, got: x0.k() });
        }
        if self.n == 0 {
            return Err(Error::Config("reference sample is empty".into()));
        }
        let (eta0, psi0) = self.target_moments(x0);
        // Visit directions in increasing order of the plug-in term, which tends
        // to track the averaged term, so a small running minimum is found early
        // and most other directions stop after a few summands. Each sum is
        // accumulated in the same order as an unpruned scan and abandoned only
        // once it strictly exceeds the minimum, so the result is identical.
        let mut order: Vec<(f64, usize)> = (0..self.accepted.len())
            .map(|j| (self.plug_in_term(j, eta0[j], psi0[j]), j))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut best = Best::new();
        for &(_, j) in &order {
            let eta = &self.eta[j * self.n..(j + 1) * self.n];
            let psi = &self.psi[j * self.n..(j + 1) * self.n];
            let floor = 1e-12 * self.prior[j];
            let (e0, p0) = (eta0[j], psi0[j]);
            let mut sum = 0.0;
            let mut pruned = false;
            for (ei, pi) in eta.iter().zip(psi) {
                let var = (p0 + pi).max(floor);
                sum += std_normal_sf((e0 - ei) / var.sqrt());
                if sum > best.value {
                    pruned = true;
                    break;
                }
            }
            if !pruned {
                best.offer(sum, self.accepted[j]);
            }
        }
        Ok(DepthResult {
            value: best.value / self.n as f64,
            argmin_direction: best.index,
            n_directions_used: self.accepted.len(),
        })
    }

    /// Plug-in depth of the curve behind `x0`.
    pub fn pcrhd(&self, x0: &ObsDesign) -> Result<DepthResult> {
        if x0.k() != self.k {
            return Err(Error::Dimension { expected: self.k, got: x0.k() });
        }
        let (eta0, psi0) = self.target_moments(x0);
        let mut best = Best::new();
        for j in 0..self.accepted.len() {
            best.offer(self.plug_in_term(j, eta0[j], psi0[j]), self.accepted[j]);
        }
        Ok(DepthResult {
            value: best.value,
            argmin_direction: best.index,
            n_directions_used: self.accepted.len(),
        })
    }
}

/// Builds designs for every curve of a sample, in sample order.
pub fn build_designs(curves: &[SparseCurve], model: &FittedModel, k: usize) -> Result<Vec<ObsDesign>> {
    curves.par_iter().map(|c| build_design(c, model, k)).collect()
}

/// Averaged conditional regularized halfspace depth of `x0` within `sample`.
pub fn acrhd(
    x0: &SparseCurve,
    sample: &SparseSample,
    model: &FittedModel,
    pool: &DirectionPool,
    accepted: &[usize],
    k: usize,
) -> Result<DepthResult> {
    let designs = build_designs(sample.curves(), model, k)?;
    let reference = ConditionalReference::new(&designs, model, pool, accepted, k)?;
    reference.acrhd(&build_design(x0, model, k)?)
}

/// Plug-in conditional regularized halfspace depth of `x0` under `model`.
pub fn pcrhd(x0: &SparseCurve, model: &FittedModel, pool: &DirectionPool, accepted: &[usize], k: usize) -> Result<DepthResult> {
    let reference = ConditionalReference::new(&[], model, pool, accepted, k)?;
    reference.pcrhd(&build_design(x0, model, k)?)
}

/// Coordinates `⟨x, φ̂_k⟩`, `k < K`, by quadrature on the model grid.
pub fn project_dense(x: &DenseCurve, model: &FittedModel, k: usize) -> Result<Vec<f64>> {
    if !(Arc::ptr_eq(x.grid(), model.grid()) || x.grid().as_ref() == model.grid().as_ref()) {
        return Err(Error::IncompatibleCurves);
    }
    Ok(model.eigenfunctions()[..k].iter().map(|phi| model.grid().dot(x.values(), phi)).collect())
}

/// Halfspace counting over accepted directions on projected coordinates.
fn count_depth(target: &[f64], sample: &[Vec<f64>], pool: &DirectionPool, accepted: &[usize]) -> DepthResult {
    let k = target.len();
    let diffs: Vec<Vec<f64>> = sample
        .iter()
        .map(|p| p.iter().zip(target).map(|(a, b)| a - b).collect())
        .collect();
    let mut best = Best::new();
    for &l in accepted {
        let a = pool.direction(l);
        let count = diffs
            .iter()
            .filter(|d| (0..k).map(|r| a[r] * d[r]).sum::<f64>() >= 0.0)
            .count();
        best.offer(count as f64, l);
    }
    DepthResult {
        value: best.value / sample.len() as f64,
        argmin_direction: best.index,
        n_directions_used: accepted.len(),
    }
}

/// Regularized halfspace depth of a fully observed curve.
pub fn dense_rhd(
    x: &DenseCurve,
    sample: &[DenseCurve],
    model: &FittedModel,
    pool: &DirectionPool,
    accepted: &[usize],
    k: usize,
) -> Result<DepthResult> {
    check_accepted(pool, accepted, k)?;
    if sample.is_empty() {
        return Err(Error::Config("reference sample is empty".into()));
    }
    let target = project_dense(x, model, k)?;
    let coords = sample.iter().map(|c| project_dense(c, model, k)).collect::<Result<Vec<_>>>()?;
    Ok(count_depth(&target, &coords, pool, accepted))
}

/// Dense depth of every sample curve relative to the whole sample, projecting each curve once.
pub fn dense_rhd_all(
    sample: &[DenseCurve],
    model: &FittedModel,
    pool: &DirectionPool,
    accepted: &[usize],
    k: usize,
) -> Result<Vec<DepthResult>> {
    check_accepted(pool, accepted, k)?;
    if sample.is_empty() {
        return Err(Error::Config("reference sample is empty".into()));
    }
    let coords = sample.iter().map(|c| project_dense(c, model, k)).collect::<Result<Vec<_>>>()?;
    Ok(coords.iter().map(|t| count_depth(t, &coords, pool, accepted)).collect())
}

/// Prediction truncation `min(n, 49, M − 1)`, limited to the retained spectrum.
pub fn prediction_truncation(n: usize, model: &FittedModel) -> usize {
    n.min(MAX_COMPONENTS).min(model.grid().len() - 1).min(model.n_components())
}

/// Dense depth of the predicted `x0` among the predicted sample curves.
pub fn two_stage_rhd(
    x0: &SparseCurve,
    sample: &SparseSample,
    model: &FittedModel,
    pool: &DirectionPool,
    accepted: &[usize],
    k: usize,
) -> Result<DepthResult> {
    let k_pred = prediction_truncation(sample.len(), model);
    let predict = |c: &SparseCurve| predict_from_design(&build_design(c, model, k_pred)?, model);
    let predicted = sample.curves().iter().map(predict).collect::<Result<Vec<_>>>()?;
    dense_rhd(&predict(x0)?, &predicted, model, pool, accepted, k)
}

/// `n_proj` isotropic unit vectors in `R^K`, row-major.
pub fn isotropic_directions(k: usize, n_proj: usize, rng: RngStream) -> Vec<f64> {
    let mut r = rng.rng();
    let mut out = Vec::with_capacity(k * n_proj);
    let mut z = vec![0.0; k];
    let mut filled = 0;
    while filled < n_proj {
        z.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            continue;
        }
        out.extend(z.iter().map(|x| x / norm));
        filled += 1;
    }
    out
}

/// Random-projection Tukey depth of `target` among `sample` with explicit directions.
pub fn tukey_depth_projected(target: &[f64], sample: &[Vec<f64>], directions: &[f64]) -> DepthResult {
    let k = target.len();
    let n_proj = directions.len() / k;
    let mut best = Best::new();
    for (j, u) in directions.chunks_exact(k).enumerate() {
        let count = sample
            .iter()
            .filter(|s| (0..k).map(|r| u[r] * (s[r] - target[r])).sum::<f64>() >= 0.0)
            .count();
        best.offer(count as f64, j);
    }
    DepthResult {
        value: best.value / sample.len() as f64,
        argmin_direction: best.index,
        n_directions_used: n_proj,
    }
}

/// Tukey depth of the conditional-expectation scores of `x0` among those of the sample.
pub fn two_stage_thd(
    x0: &SparseCurve,
    sample: &SparseSample,
    model: &FittedModel,
    k: usize,
    n_proj: usize,
    rng: RngStream,
) -> Result<DepthResult> {
    if n_proj == 0 {
        return Err(Error::Config("n_proj must be at least 1".into()));
    }
    let scores = |c: &SparseCurve| -> Result<Vec<f64>> {
        Ok(build_design(c, model, k)?.scores().to_vec())
    };
    let target = scores(x0)?;
    let coords = sample.curves().iter().map(scores).collect::<Result<Vec<_>>>()?;
    Ok(tukey_depth_projected(&target, &coords, &isotropic_directions(k, n_proj, rng)))
}

/// One depth computation requested from [`depth_batch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRequest {
    pub method: DepthMethod,
    pub k: usize,
    /// Ignored by the Tukey comparator.
    pub regularization: Regularization,
    /// Accepted-direction target (for the Tukey comparator, the number of projections).
    pub l: usize,
}

impl DepthRequest {
    pub fn new(method: DepthMethod, k: usize, regularization: Regularization) -> Self {
        Self {
            method,
            k,
            regularization,
            l: default_accept_target(k),
        }
    }
}

/// Depths of every evaluation curve for one request.
#[derive(Debug, Clone)]
pub struct DepthColumn {
    pub request: DepthRequest,
    /// Resolved radius, absent for the Tukey comparator.
    pub lambda: Option<f64>,
    pub shortfall: bool,
    pub results: Vec<DepthResult>,
}

/// Seeds for the pools drawn inside [`depth_batch`].
#[derive(Debug, Clone, Copy)]
pub struct BatchOptions {
    pub stream: RngStream,
    /// Overrides the default pool size `10 · max L`.
    pub pool_size: Option<usize>,
}

impl BatchOptions {
    pub fn new(stream: RngStream) -> Self {
        Self { stream, pool_size: None }
    }

    fn pool_stream(&self, k: usize) -> RngStream {
        self.stream.labeled(&format!("pool/K={k}"))
    }

    fn projection_stream(&self, k: usize) -> RngStream {
        self.stream.labeled(&format!("tukey/K={k}"))
    }
}

/// Direction pool a batch would draw for truncation `k`.
pub fn batch_pool(model: &FittedModel, requests: &[DepthRequest], k: usize, opts: &BatchOptions) -> Result<DirectionPool> {
    let l_max = requests
        .iter()
        .filter(|r| r.k == k && r.method != DepthMethod::TwoStageThd)
        .map(|r| r.l)
        .max()
        .unwrap_or_else(|| default_accept_target(k));
    let l0 = opts.pool_size.unwrap_or_else(|| default_pool_size(l_max));
    sample_direction_pool(model, k, l0, opts.pool_stream(k))
}

/// Evaluates every request for every curve of `eval` against `sample`,
/// sharing designs, predictions and pools across requests.
pub fn depth_batch(
    sample: &SparseSample,
    model: &FittedModel,
    eval: &[SparseCurve],
    requests: &[DepthRequest],
    opts: &BatchOptions,
) -> Result<Vec<DepthColumn>> {
    let mut ks: Vec<usize> = requests.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let needs = |k: usize, m: DepthMethod| requests.iter().any(|r| r.k == k && r.method == m);

    let mut columns: Vec<Option<DepthColumn>> = vec![None; requests.len()];
    for &k in &ks {
        let conditional = needs(k, DepthMethod::Acrhd) || needs(k, DepthMethod::Pcrhd) || needs(k, DepthMethod::TwoStageThd);
        let ref_designs = if needs(k, DepthMethod::Acrhd) || needs(k, DepthMethod::TwoStageThd) {
            build_designs(sample.curves(), model, k)?
        } else {
            Vec::new()
        };
        let eval_designs = if conditional { build_designs(eval, model, k)? } else { Vec::new() };
        let pool = if requests.iter().any(|r| r.k == k && r.method != DepthMethod::TwoStageThd) {
            Some(batch_pool(model, requests, k, opts)?)
        } else {
            None
        };
        let dense = if needs(k, DepthMethod::TwoStageRhd) {
            Some(predicted_coordinates(sample, model, eval, k)?)
        } else {
            None
        };

        for (slot, req) in columns.iter_mut().zip(requests).filter(|(_, r)| r.k == k) {
            let column = match req.method {
                DepthMethod::TwoStageThd => {
                    let dirs = isotropic_directions(k, req.l, opts.projection_stream(k));
                    let coords: Vec<Vec<f64>> = ref_designs.iter().map(|d| d.scores().to_vec()).collect();
                    let results = eval_designs
                        .iter()
                        .map(|d| tukey_depth_projected(d.scores(), &coords, &dirs))
                        .collect();
                    DepthColumn {
                        request: *req,
                        lambda: None,
                        shortfall: false,
                        results,
                    }
                }
                method => {
                    let pool = pool.as_ref().expect("pool drawn for regularized requests");
                    let lambda = req.regularization.resolve(pool)?;
                    let accepted = filter_pool(pool, lambda, req.l)?;
                    let results = match method {
                        DepthMethod::Acrhd | DepthMethod::Pcrhd => {
                            let designs: &[ObsDesign] = if method == DepthMethod::Acrhd { &ref_designs } else { &[] };
                            let reference = ConditionalReference::new(designs, model, pool, &accepted.indices, k)?;
                            eval_designs
                                .par_iter()
                                .map(|d| {
                                    if method == DepthMethod::Acrhd {
                                        reference.acrhd(d)
                                    } else {
                                        reference.pcrhd(d)
                                    }
                                })
                                .collect::<Result<Vec<_>>>()?
                        }
                        _ => {
                            let (targets, refs) = dense.as_ref().expect("predictions computed");
                            targets
                                .par_iter()
                                .map(|t| count_depth(t, refs, pool, &accepted.indices))
                                .collect()
                        }
                    };
                    DepthColumn {
                        request: *req,
                        lambda: Some(lambda),
                        shortfall: accepted.shortfall,
                        results,
                    }
                }
            };
            *slot = Some(column);
        }
    }
    Ok(columns.into_iter().map(|c| c.expect("every request handled")).collect())
}

/// Quadrature coordinates of the predicted evaluation and sample curves.
fn predicted_coordinates(
    sample: &SparseSample,
    model: &FittedModel,
    eval: &[SparseCurve],
    k: usize,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let k_pred = prediction_truncation(sample.len(), model);
    let coords = |curves: &[SparseCurve]| -> Result<Vec<Vec<f64>>> {
        curves
            .par_iter()
            .map(|c| project_dense(&predict_from_design(&build_design(c, model, k_pred)?, model)?, model, k))
            .collect()
    };
    Ok((coords(eval)?, coords(sample.curves())?))
}
