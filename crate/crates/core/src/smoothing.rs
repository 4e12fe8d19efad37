//! Estimation of the mean, covariance surface and noise variance of sparse
//! functional data by pooled local-linear smoothing, followed by a quadrature
//! eigendecomposition of the covariance surface.

use std::sync::Arc;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dgp::{SparseSample, TrueModel};
use crate::error::{Error, Result};
use crate::numerics::{interp_bilinear, interp_linear, RngStream};
use crate::{DenseCurve, Grid};

/// Default number of evaluation grid points.
pub const DEFAULT_GRID_SIZE: usize = 51;

/// Largest prediction truncation used by two-stage methods.
pub const MAX_COMPONENTS: usize = 49;

/// Epanechnikov kernel without the `1/h` factor (it cancels in every fit).
#[inline]
fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub h_mu: f64,
    pub h_cov: f64,
    pub h_diag: f64,
}

impl Bandwidths {
    /// `h_cov = 2 h_mu`, `h_diag = h_mu`.
    pub fn from_mean_bandwidth(h_mu: f64) -> Self {
        Self {
            h_mu,
            h_cov: 2.0 * h_mu,
            h_diag: h_mu,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, h) in [("h_mu", self.h_mu), ("h_cov", self.h_cov), ("h_diag", self.h_diag)] {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

/// Scatter points sorted by abscissa, ready for windowed smoothing.
#[derive(Debug, Clone)]
struct Scatter {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl Scatter {
    /// Sorts by `(t, y)` so the result does not depend on input order.
    fn new(mut pts: Vec<(f64, f64)>) -> Result<Self> {
        if pts.len() < 2 {
            return Err(Error::DegenerateDesign(format!(
                "need at least 2 points, got {}",
                pts.len()
            )));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        if pts.first().unwrap().0 == pts.last().unwrap().0 {
            return Err(Error::DegenerateDesign("all points share one abscissa".into()));
        }
        let (t, y) = pts.into_iter().unzip();
        Ok(Self { t, y })
    }

    fn window(&self, s: f64, h: f64) -> std::ops::Range<usize> {
        let lo = self.t.partition_point(|&t| t <= s - h);
        let hi = self.t.partition_point(|&t| t < s + h);
        lo..hi.max(lo)
    }

    /// Local-linear estimate at `s`; on a singular local design, a
    /// Nadaraya–Watson average with the bandwidth doubled until non-empty.
    fn local_linear(&self, s: f64, h: f64) -> f64 {
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in self.window(s, h) {
            let d = self.t[j] - s;
            let w = epanechnikov(d / h);
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            t0 += w * self.y[j];
            t1 += w * d * self.y[j];
        }
        let det = s0 * s2 - s1 * s1;
        if s0 > 0.0 && det > 1e-12 * s0 * s2 {
            return (s2 * t0 - s1 * t1) / det;
        }
        let mut h = 2.0 * h;
        loop {
            let (mut sw, mut sy) = (0.0, 0.0);
            for j in self.window(s, h) {
                let w = epanechnikov((self.t[j] - s) / h);
                sw += w;
                sy += w * self.y[j];
            }
            if sw > 0.0 {
                return sy / sw;
            }
            h *= 2.0;
        }
    }
}

/// Local-linear smoother with the Epanechnikov kernel, evaluated on `grid`.
pub fn local_linear_1d(points: &[(f64, f64)], h: f64, grid: &Arc<Grid>) -> Result<DenseCurve> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    let scatter = Scatter::new(points.to_vec())?;
    let values = grid.points().iter().map(|&s| scatter.local_linear(s, h)).collect();
    DenseCurve::new(grid.clone(), values)
}

fn pooled_points(sample: &SparseSample) -> Vec<(f64, f64)> {
    sample
        .curves()
        .iter()
        .flat_map(|c| c.times().iter().copied().zip(c.values().iter().copied()))
        .collect()
}

/// Mean function from the pooled scatter `{(T_ij, X̃_ij)}`.
pub fn fit_mean(sample: &SparseSample, h_mu: f64, grid: &Arc<Grid>) -> Result<DenseCurve> {
    local_linear_1d(&pooled_points(sample), h_mu, grid)
}

fn residuals(sample: &SparseSample, mu_hat: &DenseCurve) -> Result<Vec<Vec<f64>>> {
    sample
        .curves()
        .iter()
        .map(|c| {
            c.times()
                .iter()
                .zip(c.values())
                .map(|(&t, &x)| Ok(x - mu_hat.eval(t)?))
                .collect()
        })
        .collect()
}

/// Smoothed covariance surface (row-major `M × M`) from the off-diagonal raw
/// covariances `(X̃_ij − μ̂(T_ij))(X̃_il − μ̂(T_il))`, `j ≠ l`.
pub fn fit_covariance(
    sample: &SparseSample,
    mu_hat: &DenseCurve,
    h_cov: f64,
    grid: &Arc<Grid>,
) -> Result<Vec<f64>> {
    if !(h_cov > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h_cov}")));
    }
    let res = residuals(sample, mu_hat)?;
    let mut pairs: Vec<(f64, f64, f64)> = Vec::new();
    for (c, r) in sample.curves().iter().zip(&res) {
        let t = c.times();
        for j in 0..t.len() {
            for l in 0..t.len() {
                if j != l {
                    pairs.push((t[j], t[l], r[j] * r[l]));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientPairs);
    }
    pairs.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    let first: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let m = grid.len();
    let pts = grid.points();
    let mut surface = vec![0.0; m * m];
    for (a, &s) in pts.iter().enumerate() {
        for (b, &t) in pts.iter().enumerate() {
            surface[a * m + b] = local_linear_2d(&pairs, &first, s, t, h_cov);
        }
    }
    symmetrize(&mut surface, m);
    Ok(surface)
}

fn local_linear_2d(pairs: &[(f64, f64, f64)], first: &[f64], s: f64, t: f64, h: f64) -> f64 {
    let window = |h: f64| {
        let lo = first.partition_point(|&x| x <= s - h);
        let hi = first.partition_point(|&x| x < s + h);
        lo..hi.max(lo)
    };
    let mut a = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for &(x1, x2, c) in &pairs[window(h)] {
        let w = epanechnikov((x1 - s) / h) * epanechnikov((x2 - t) / h);
        if w == 0.0 {
            continue;
        }
        let z = Vector3::new(1.0, x1 - s, x2 - t);
        a += w * z * z.transpose();
        rhs += (w * c) * z;
    }
    let det = a.determinant();
    if a[(0, 0)] > 0.0 && det > 1e-10 * a[(0, 0)] * a[(1, 1)] * a[(2, 2)] {
        let mut a0 = a;
        a0.set_column(0, &rhs);
        return a0.determinant() / det;
    }
    let mut h = 2.0 * h;
    loop {
        let (mut sw, mut sy) = (0.0, 0.0);
        for &(x1, x2, c) in &pairs[window(h)] {
            let w = epanechnikov((x1 - s) / h) * epanechnikov((x2 - t) / h);
            sw += w;
            sy += w * c;
        }
        if sw > 0.0 {
            return sy / sw;
        }
        if h > 64.0 {
            return 0.0;
        }
        h *= 2.0;
    }
}

fn symmetrize(surface: &mut [f64], m: usize) {
    for a in 0..m {
        for b in a + 1..m {
            let avg = 0.5 * (surface[a * m + b] + surface[b * m + a]);
            surface[a * m + b] = avg;
            surface[b * m + a] = avg;
        }
    }
}

/// Noise variance from a smoothed diagonal `V̂` and the surface diagonal:
/// the average of `V̂(t) − γ̂(t, t)` over `[0.25, 0.75]`, floored at
/// `max(1e-4 · mean V̂, 1e-8)`.
pub fn noise_variance_from_diagonal(grid: &Grid, v_hat: &[f64], gamma_diag: &[f64]) -> Result<f64> {
    let diff: Vec<f64> = v_hat.iter().zip(gamma_diag).map(|(v, g)| v - g).collect();
    let (lo, hi) = (0.25, 0.75);
    let mut knots = vec![lo];
    knots.extend(grid.points().iter().copied().filter(|&t| t > lo && t < hi));
    knots.push(hi);
    let vals: Vec<f64> = knots
        .iter()
        .map(|&t| interp_linear(grid, &diff, t))
        .collect::<Result<_>>()?;
    let integral: f64 = knots
        .windows(2)
        .zip(vals.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum();
    let estimate = integral / (hi - lo);
    let mean_v = v_hat.iter().sum::<f64>() / v_hat.len() as f64;
    let floor = (1e-4 * mean_v).max(1e-8);
    Ok(estimate.max(floor))
}

/// Noise variance from the smoothed squared residuals and the covariance surface.
pub fn estimate_noise_variance(
    sample: &SparseSample,
    mu_hat: &DenseCurve,
    gamma_hat: &[f64],
    h_diag: f64,
    grid: &Arc<Grid>,
) -> Result<f64> {
    let res = residuals(sample, mu_hat)?;
    let pts: Vec<(f64, f64)> = sample
        .curves()
        .iter()
        .zip(&res)
        .flat_map(|(c, r)| c.times().iter().zip(r).map(|(&t, &e)| (t, e * e)))
        .collect();
    let v_hat = local_linear_1d(&pts, h_diag, grid)?;
    let m = grid.len();
    let diag: Vec<f64> = (0..m).map(|i| gamma_hat[i * m + i]).collect();
    noise_variance_from_diagonal(grid, v_hat.values(), &diag)
}

/// Eigenpairs of the integral operator with kernel `gamma` (row-major `M × M`),
/// computed from `W^{1/2} G W^{1/2}` with `W` the quadrature weights.
/// Eigenvalues are non-increasing; those `≤ 1e-10 · γ̂_1` are dropped and at
/// most `k_max` pairs are kept. Each eigenfunction is oriented so that its
/// integral is non-negative (or, when that integral vanishes, so that its
/// largest-magnitude value is positive).
pub fn eigendecompose(gamma: &[f64], grid: &Grid, k_max: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = grid.len();
    if gamma.len() != m * m {
        return Err(Error::Dimension {
            expected: m * m,
            got: gamma.len(),
        });
    }
    let scale = gamma.iter().fold(1.0f64, |acc, g| acc.max(g.abs()));
    for a in 0..m {
        for b in a + 1..m {
            if (gamma[a * m + b] - gamma[b * m + a]).abs() > 1e-10 * scale {
                return Err(Error::InvalidSurface(format!(
                    "surface is not symmetric at ({a}, {b})"
                )));
            }
        }
    }
    let root_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let weighted = DMatrix::from_fn(m, m, |a, b| root_w[a] * gamma[a * m + b] * root_w[b]);
    let eig = weighted.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = eig.eigenvalues[order[0]];
    let mut values = Vec::new();
    let mut functions = Vec::new();
    if !(top > 0.0) {
        return Ok((values, functions));
    }
    for &idx in order.iter().take(k_max) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= 1e-10 * top {
            break;
        }
        let mut phi: Vec<f64> = (0..m).map(|a| eig.eigenvectors[(a, idx)] / root_w[a]).collect();
        orient(&mut phi, grid);
        values.push(lambda);
        functions.push(phi);
    }
    Ok((values, functions))
}

fn orient(phi: &mut [f64], grid: &Grid) {
    let integral: f64 = grid.weights().iter().zip(phi.iter()).map(|(w, p)| w * p).sum();
    let flip = if integral.abs() > 1e-8 {
        integral < 0.0
    } else {
        let mut best = 0;
        for (i, p) in phi.iter().enumerate() {
            if p.abs() > phi[best].abs() {
                best = i;
            }
        }
        phi[best] < 0.0
    };
    if flip {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
}

/// Smallest `K` whose cumulative fraction of variance explained reaches `rho`.
pub fn select_k_fve(eigenvalues: &[f64], rho: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    let mut cum = 0.0;
    for (k, g) in eigenvalues.iter().enumerate() {
        cum += g;
        if cum / total >= rho - 1e-12 {
            return k + 1;
        }
    }
    eigenvalues.len()
}

/// Mean bandwidth by subject-wise K-fold cross-validation over 10
/// geometrically spaced candidates in `[2/M, 0.25]`.
pub fn select_mean_bandwidth(sample: &SparseSample, grid_size: usize, rng: RngStream) -> Result<f64> {
    let lo = (2.0 / grid_size as f64).min(0.25);
    let hi = 0.25;
    let candidates: Vec<f64> = (0..10).map(|j| lo * (hi / lo).powf(j as f64 / 9.0)).collect();

    let mut curves: Vec<_> = sample.curves().iter().collect();
    curves.sort_by(|a, b| a.subject_id().cmp(b.subject_id()));
    let n_folds = curves.len().min(5);
    if n_folds < 2 {
        return Ok(candidates[candidates.len() / 2]);
    }
    curves.shuffle(&mut rng.rng());
    let folds: Vec<(Vec<(f64, f64)>, Vec<(f64, f64)>)> = (0..n_folds)
        .map(|f| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, c) in curves.iter().enumerate() {
                let pts = c.times().iter().copied().zip(c.values().iter().copied());
                if i % n_folds == f {
                    test.extend(pts);
                } else {
                    train.extend(pts);
                }
            }
            (train, test)
        })
        .collect();
    let scatters: Vec<Option<Scatter>> = folds.iter().map(|(tr, _)| Scatter::new(tr.clone()).ok()).collect();

    let mut best = (f64::INFINITY, candidates[candidates.len() / 2]);
    for &h in &candidates {
        let mut err = 0.0;
        for ((_, test), scatter) in folds.iter().zip(&scatters) {
            match scatter {
                Some(s) => {
                    err += test.iter().map(|&(t, y)| (y - s.local_linear(t, h)).powi(2)).sum::<f64>();
                }
                None => err = f64::INFINITY,
            }
        }
        if err < best.0 {
            best = (err, h);
        }
    }
    Ok(best.1)
}

/// Estimated (or injected) model components on an evaluation grid.
#[derive(Debug, Clone)]
pub struct FittedModel {
    grid: Arc<Grid>,
    mu: Vec<f64>,
    /// Row-major `M × M` retained-spectrum surface `Σ_k γ̂_k φ̂_k φ̂_kᵀ`.
    gamma: Vec<f64>,
    sigma2: f64,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    fve: Vec<f64>,
    proj_mu: Vec<f64>,
    bandwidths: Option<Bandwidths>,
}

impl FittedModel {
    /// Model from an eigen-expansion; the surface is rebuilt from the pairs.
    pub fn from_eigen(
        grid: Arc<Grid>,
        mu: Vec<f64>,
        eigenvalues: Vec<f64>,
        eigenfunctions: Vec<Vec<f64>>,
        sigma2: f64,
    ) -> Result<Self> {
        let gamma = reconstruct(&eigenvalues, &eigenfunctions, grid.len());
        Self::from_components(grid, mu, gamma, sigma2, eigenvalues, eigenfunctions)
    }

    /// Model from explicit components, as stored on disk.
    pub fn from_components(
        grid: Arc<Grid>,
        mu: Vec<f64>,
        gamma: Vec<f64>,
        sigma2: f64,
        eigenvalues: Vec<f64>,
        eigenfunctions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = grid.len();
        if mu.len() != m {
            return Err(Error::Dimension { expected: m, got: mu.len() });
        }
        if gamma.len() != m * m {
            return Err(Error::Dimension { expected: m * m, got: gamma.len() });
        }
        if eigenvalues.is_empty() {
            return Err(Error::InvalidSurface("no positive eigenvalues".into()));
        }
        if eigenfunctions.len() != eigenvalues.len() {
            return Err(Error::Dimension {
                expected: eigenvalues.len(),
                got: eigenfunctions.len(),
            });
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || eigenvalues.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidSurface(
                "eigenvalues must be positive and non-increasing".into(),
            ));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::Config(format!("noise variance must be non-negative, got {sigma2}")));
        }
        for (j, phi) in eigenfunctions.iter().enumerate() {
            if phi.len() != m {
                return Err(Error::Dimension { expected: m, got: phi.len() });
            }
            for (k, other) in eigenfunctions.iter().enumerate().take(j + 1) {
                let ip = grid.dot(phi, other);
                let target = if j == k { 1.0 } else { 0.0 };
                if (ip - target).abs() > 1e-6 {
                    return Err(Error::InvalidSurface(format!(
                        "eigenfunctions {j} and {k} are not orthonormal (inner product {ip:.3e})"
                    )));
                }
            }
        }
        let total: f64 = eigenvalues.iter().sum();
        let mut cum = 0.0;
        let fve = eigenvalues
            .iter()
            .map(|g| {
                cum += g;
                cum / total
            })
            .collect();
        let proj_mu = eigenfunctions.iter().map(|phi| grid.dot(&mu, phi)).collect();
        Ok(Self {
            grid,
            mu,
            gamma,
            sigma2,
            eigenvalues,
            eigenfunctions,
            fve,
            proj_mu,
            bandwidths: None,
        })
    }

    /// Injects the true mean, eigenpairs and noise variance of a simulated process.
    pub fn from_truth(truth: &TrueModel) -> Result<Self> {
        Self::from_eigen(
            truth.grid.clone(),
            truth.mean_values(),
            truth.eigenvalues.clone(),
            truth.eigenfunctions.clone(),
            truth.params.noise_var,
        )
    }

    /// Empirical mean and covariance of fully observed curves (no noise term).
    pub fn from_dense_curves(curves: &[DenseCurve], k_max: usize) -> Result<Self> {
        let first = curves
            .first()
            .ok_or_else(|| Error::Config("need at least one curve".into()))?;
        let grid = first.grid().clone();
        if curves.iter().any(|c| !c.same_grid(first)) {
            return Err(Error::IncompatibleCurves);
        }
        let m = grid.len();
        let n = curves.len() as f64;
        let mut mu = vec![0.0; m];
        for c in curves {
            for (acc, v) in mu.iter_mut().zip(c.values()) {
                *acc += v;
            }
        }
        mu.iter_mut().for_each(|v| *v /= n);
        let mut cov = vec![0.0; m * m];
        for c in curves {
            let d: Vec<f64> = c.values().iter().zip(&mu).map(|(v, m)| v - m).collect();
            for a in 0..m {
                for b in a..m {
                    cov[a * m + b] += d[a] * d[b];
                }
            }
        }
        for a in 0..m {
            for b in a..m {
                let v = cov[a * m + b] / n;
                cov[a * m + b] = v;
                cov[b * m + a] = v;
            }
        }
        let (values, functions) = eigendecompose(&cov, &grid, k_max)?;
        Self::from_eigen(grid, mu, values, functions, 0.0)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu_curve(&self) -> DenseCurve {
        DenseCurve::new(self.grid.clone(), self.mu.clone()).expect("validated")
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[Vec<f64>] {
        &self.eigenfunctions
    }

    pub fn fve(&self) -> &[f64] {
        &self.fve
    }

    /// `⟨μ̂, φ̂_k⟩` for every retained component.
    pub fn proj_mu(&self) -> &[f64] {
        &self.proj_mu
    }

    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn bandwidths(&self) -> Option<Bandwidths> {
        self.bandwidths
    }

    pub fn eval_mu(&self, t: f64) -> Result<f64> {
        interp_linear(&self.grid, &self.mu, t)
    }

    pub fn eval_gamma(&self, s: f64, t: f64) -> Result<f64> {
        interp_bilinear(&self.grid, &self.gamma, s, t)
    }

    /// `φ̂_1(t), …, φ̂_k(t)`.
    pub fn eval_basis(&self, t: f64, k: usize) -> Result<Vec<f64>> {
        let (j, f) = self.grid.locate(t)?;
        Ok(self.eigenfunctions[..k]
            .iter()
            .map(|phi| (1.0 - f) * phi[j] + f * phi[j + 1])
            .collect())
    }

    /// Same model with `μ̂` replaced by `−μ̂`.
    pub fn negated_mean(&self) -> Self {
        let mut out = self.clone();
        out.mu.iter_mut().for_each(|v| *v = -*v);
        out.proj_mu.iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// Stable fingerprint of the eigenvalues, used to tie pools to models.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for g in &self.eigenvalues {
            for b in g.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01B3);
            }
        }
        h
    }
}

fn reconstruct(eigenvalues: &[f64], eigenfunctions: &[Vec<f64>], m: usize) -> Vec<f64> {
    let mut g = vec![0.0; m * m];
    for (lambda, phi) in eigenvalues.iter().zip(eigenfunctions) {
        for a in 0..m {
            let la = lambda * phi[a];
            for b in 0..m {
                g[a * m + b] += la * phi[b];
            }
        }
    }
    g
}

/// Options for [`fit_model`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub grid: Arc<Grid>,
    /// Chosen by cross-validation when absent.
    pub bandwidths: Option<Bandwidths>,
    /// Defaults to `min(n, 49, M − 1)`.
    pub k_max: Option<usize>,
    /// Stream used for the cross-validation fold assignment.
    pub cv_stream: RngStream,
}

impl FitOptions {
    pub fn new(grid: Arc<Grid>, cv_stream: RngStream) -> Self {
        Self {
            grid,
            bandwidths: None,
            k_max: None,
            cv_stream,
        }
    }
}

/// Mean, covariance, noise variance and eigenpairs from a sparse sample.
pub fn fit_model(sample: &SparseSample, opts: &FitOptions) -> Result<FittedModel> {
    let grid = &opts.grid;
    let bw = match opts.bandwidths {
        Some(b) => b,
        None => Bandwidths::from_mean_bandwidth(select_mean_bandwidth(sample, grid.len(), opts.cv_stream)?),
    };
    bw.validate()?;
    let mu = fit_mean(sample, bw.h_mu, grid)?;
    let surface = fit_covariance(sample, &mu, bw.h_cov, grid)?;
    let sigma2 = estimate_noise_variance(sample, &mu, &surface, bw.h_diag, grid)?;
    let k_max = opts
        .k_max
        .unwrap_or_else(|| sample.len().min(MAX_COMPONENTS).min(grid.len() - 1));
    let (values, functions) = eigendecompose(&surface, grid, k_max)?;
    let mut model = FittedModel::from_eigen(grid.clone(), mu.into_values(), values, functions, sigma2)?;
    model.bandwidths = Some(bw);
    Ok(model)
}
