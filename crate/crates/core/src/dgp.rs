//! Simulation ground truth: truncated Karhunen–Loève curves on a Fourier basis
//! and sparse, noisy observation of those curves.

use std::collections::HashSet;
use std::f64::consts::{SQRT_2, TAU};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{interp_linear, RngStream};
use crate::{DenseCurve, Grid};

/// Mean function of the simulated process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanSpec {
    Zero,
    /// `μ(t) = c·t`.
    LinearSlope(f64),
}

impl MeanSpec {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            MeanSpec::Zero => 0.0,
            MeanSpec::LinearSlope(c) => c * t,
        }
    }
}

/// Joint law of the FPC scores `ξ_k = ξ·W_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreDist {
    /// `ξ = 1`, `W_k ~ N(0, 1)`.
    Gaussian,
    /// `ξ ~ N(0, 1)`, `W_k ~ N(0, 1)`.
    NN,
    /// `ξ, W_k ~ Unif(-√3, √3)`.
    UU,
}

impl std::str::FromStr for ScoreDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "nn" => Ok(Self::NN),
            "uu" => Ok(Self::UU),
            other => Err(Error::Config(format!("unknown score distribution '{other}'"))),
        }
    }
}

/// Measurement error law, centered with variance `σ²_ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    /// Centered chi-square with `ν = σ²_ε / 2` degrees of freedom.
    Chi2,
    Normal,
}

impl std::str::FromStr for ErrorDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chi2" | "chisq" => Ok(Self::Chi2),
            "normal" => Ok(Self::Normal),
            other => Err(Error::Config(format!("unknown error distribution '{other}'"))),
        }
    }
}

/// `γ_k = 2 Σ_{j ≥ k} j^{-a}` for `k = 1..=k_star`, i.e. eigengaps `γ_j − γ_{j+1} = 2 j^{-a}`.
pub fn eigenvalues_from_decay(a: f64, k_star: usize) -> Result<Vec<f64>> {
    if !(a > 1.0) || !a.is_finite() {
        return Err(Error::DivergentSeries(a));
    }
    if k_star == 0 {
        return Err(Error::Config("k_star must be at least 1".into()));
    }
    Ok((1..=k_star).map(|k| 2.0 * zeta_tail(a, k)).collect())
}

/// `Σ_{j ≥ k} j^{-a}`: direct summation up to `N = k + 1000`, then an
/// Euler–Maclaurin remainder whose truncation error is below 1e-18 for `a > 1`.
fn zeta_tail(a: f64, k: usize) -> f64 {
    let n = (k + 1000) as f64;
    let f = |x: f64| x.powf(-a);
    let remainder = n.powf(1.0 - a) / (a - 1.0) + 0.5 * f(n) + a * n.powf(-a - 1.0) / 12.0
        - a * (a + 1.0) * (a + 2.0) * n.powf(-a - 3.0) / 720.0
        + a * (a + 1.0) * (a + 2.0) * (a + 3.0) * (a + 4.0) * n.powf(-a - 5.0) / 30240.0;
    // smallest terms first
    (k..k + 1000).rev().fold(remainder, |acc, j| acc + f(j as f64))
}

/// The `k`-th (0-based) Fourier basis function on `[0, 1]`:
/// `1, √2 sin 2πt, √2 cos 2πt, √2 sin 4πt, …`.
pub fn fourier_basis(k: usize, t: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let freq = ((k + 1) / 2) as f64;
    if k % 2 == 1 {
        SQRT_2 * (TAU * freq * t).sin()
    } else {
        SQRT_2 * (TAU * freq * t).cos()
    }
}

/// Draws one vector of `k_star` scores, each with mean 0 and variance 1.
pub fn sample_scores<R: Rng + ?Sized>(dist: ScoreDist, k_star: usize, rng: &mut R) -> Vec<f64> {
    let root3 = 3f64.sqrt();
    let unif = Uniform::new_inclusive(-root3, root3).expect("finite bounds");
    let latent: f64 = match dist {
        ScoreDist::Gaussian => 1.0,
        ScoreDist::NN => rng.sample(StandardNormal),
        ScoreDist::UU => unif.sample(rng),
    };
    (0..k_star)
        .map(|_| {
            let w: f64 = match dist {
                ScoreDist::Gaussian | ScoreDist::NN => rng.sample(StandardNormal),
                ScoreDist::UU => unif.sample(rng),
            };
            latent * w
        })
        .collect()
}

/// Centered measurement-error sampler with variance `σ²_ε`.
#[derive(Debug, Clone, Copy)]
pub enum ErrorSampler {
    Normal(Normal<f64>),
    /// Gamma(shape ν/2, scale 2) shifted by −ν.
    Chi2 { gamma: Gamma<f64>, dof: f64 },
}

impl ErrorSampler {
    pub fn new(dist: ErrorDist, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(Error::Config(format!(
                "noise variance must be positive, got {noise_var}"
            )));
        }
        Ok(match dist {
            ErrorDist::Normal => Self::Normal(Normal::new(0.0, noise_var.sqrt()).expect("valid sd")),
            ErrorDist::Chi2 => {
                let dof = noise_var / 2.0;
                Self::Chi2 {
                    gamma: Gamma::new(dof / 2.0, 2.0).expect("valid gamma"),
                    dof,
                }
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Normal(n) => n.sample(rng),
            Self::Chi2 { gamma, dof } => gamma.sample(rng) - dof,
        }
    }
}

/// One centered error draw.
pub fn sample_error<R: Rng + ?Sized>(dist: ErrorDist, noise_var: f64, rng: &mut R) -> Result<f64> {
    Ok(ErrorSampler::new(dist, noise_var)?.sample(rng))
}

/// Parameters of a simulated process, as written to the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModelParams {
    pub mean: MeanSpec,
    pub decay_a: f64,
    pub k_star: usize,
    pub score_dist: ScoreDist,
    pub error_dist: ErrorDist,
    pub noise_var: f64,
    pub grid_size: usize,
}

/// Simulation ground truth evaluated on a grid.
#[derive(Debug, Clone)]
pub struct TrueModel {
    pub params: TrueModelParams,
    pub grid: Arc<Grid>,
    pub eigenvalues: Vec<f64>,
    /// `k_star` rows of grid values.
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl TrueModel {
    pub fn new(params: TrueModelParams, grid: Arc<Grid>) -> Result<Self> {
        if params.noise_var < 0.0 {
            return Err(Error::Config("noise variance must be non-negative".into()));
        }
        let eigenvalues = eigenvalues_from_decay(params.decay_a, params.k_star)?;
        let eigenfunctions: Vec<Vec<f64>> = (0..params.k_star)
            .map(|k| grid.points().iter().map(|&t| fourier_basis(k, t)).collect())
            .collect();
        for j in 0..params.k_star {
            for k in 0..=j {
                let ip = grid.dot(&eigenfunctions[j], &eigenfunctions[k]);
                let target = if j == k { 1.0 } else { 0.0 };
                if (ip - target).abs() > 1e-6 {
                    return Err(Error::InvalidGrid(format!(
                        "grid too coarse: Fourier functions {j} and {k} have inner product {ip:.3e}"
                    )));
                }
            }
        }
        Ok(Self {
            params: TrueModelParams {
                grid_size: grid.len(),
                ..params
            },
            grid,
            eigenvalues,
            eigenfunctions,
        })
    }

    /// Default process: zero mean, `K* = 15`, on the given grid.
    pub fn with_defaults(
        decay_a: f64,
        score_dist: ScoreDist,
        error_dist: ErrorDist,
        noise_var: f64,
        grid: Arc<Grid>,
    ) -> Result<Self> {
        Self::new(
            TrueModelParams {
                mean: MeanSpec::Zero,
                decay_a,
                k_star: 15,
                score_dist,
                error_dist,
                noise_var,
                grid_size: grid.len(),
            },
            grid,
        )
    }

    pub fn mean_values(&self) -> Vec<f64> {
        self.grid.points().iter().map(|&t| self.params.mean.eval(t)).collect()
    }

    /// Pointwise variance `Σ_k γ_k φ_k(t)²`.
    pub fn variance_function(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|m| {
                self.eigenvalues
                    .iter()
                    .zip(&self.eigenfunctions)
                    .map(|(g, phi)| g * phi[m] * phi[m])
                    .sum()
            })
            .collect()
    }

    /// The curve with the given scores: `μ + Σ_k γ_k^{1/2} ξ_k φ_k` on the grid.
    pub fn curve_from_scores(&self, scores: &[f64]) -> Result<DenseCurve> {
        if scores.len() != self.params.k_star {
            return Err(Error::Dimension {
                expected: self.params.k_star,
                got: scores.len(),
            });
        }
        let mut values = self.mean_values();
        for ((g, phi), xi) in self.eigenvalues.iter().zip(&self.eigenfunctions).zip(scores) {
            let coef = g.sqrt() * xi;
            for (v, p) in values.iter_mut().zip(phi) {
                *v += coef * p;
            }
        }
        DenseCurve::new(self.grid.clone(), values)
    }
}

/// Generates `n` curves; curve `i` draws its scores from `rng.substream(i)`.
/// Returns the curves and the `n × K*` score matrix.
pub fn gen_true_curves(
    n: usize,
    model: &TrueModel,
    rng: RngStream,
) -> Result<(Vec<DenseCurve>, Vec<Vec<f64>>)> {
    let mut curves = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng.substream(i as u64).rng();
        let xi = sample_scores(model.params.score_dist, model.params.k_star, &mut r);
        curves.push(model.curve_from_scores(&xi)?);
        scores.push(xi);
    }
    Ok((curves, scores))
}

/// One subject's irregular, noisy observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCurve {
    subject_id: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SparseCurve {
    pub fn new(subject_id: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let subject_id = subject_id.into();
        if times.is_empty() {
            return Err(Error::EmptyCurve(subject_id));
        }
        if times.len() != values.len() {
            return Err(Error::Dimension {
                expected: times.len(),
                got: values.len(),
            });
        }
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config(format!("subject {subject_id}: times must lie in [0, 1]")));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!(
                "subject {subject_id}: times must be strictly increasing"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("subject {subject_id}: non-finite value")));
        }
        Ok(Self {
            subject_id,
            times,
            values,
        })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same times, values replaced by `f(value)`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            subject_id: self.subject_id.clone(),
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.subject_id = id.into();
        self
    }
}

/// A non-empty collection of sparse curves with unique subject ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSample {
    curves: Vec<SparseCurve>,
}

impl SparseSample {
    pub fn new(curves: Vec<SparseCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(Error::Config("sample must contain at least one curve".into()));
        }
        let mut seen = HashSet::with_capacity(curves.len());
        for c in &curves {
            if !seen.insert(c.subject_id.as_str()) {
                return Err(Error::Config(format!("duplicate subject id '{}'", c.subject_id)));
            }
        }
        Ok(Self { curves })
    }

    pub fn curves(&self) -> &[SparseCurve] {
        &self.curves
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn n_observations(&self) -> usize {
        self.curves.iter().map(SparseCurve::len).sum()
    }

    pub fn into_curves(self) -> Vec<SparseCurve> {
        self.curves
    }
}

/// Observation scheme for [`sparsify`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseDesign {
    /// Inclusive range of the per-curve observation count.
    pub n_obs: (usize, usize),
    pub error_dist: ErrorDist,
    /// `0` disables measurement error.
    pub noise_var: f64,
}

impl SparseDesign {
    pub fn new(error_dist: ErrorDist, noise_var: f64) -> Self {
        Self {
            n_obs: (2, 9),
            error_dist,
            noise_var,
        }
    }
}

/// Samples `n_i ~ Unif{lo..=hi}` uniform times per curve, interpolates the
/// dense curve there and adds measurement error. Subject ids are
/// `format!("{prefix}{i}")`.
pub fn sparsify(
    curves: &[DenseCurve],
    design: &SparseDesign,
    rng: RngStream,
    prefix: &str,
) -> Result<SparseSample> {
    let (lo, hi) = design.n_obs;
    if lo == 0 || hi < lo {
        return Err(Error::Config(format!("invalid observation-count range {lo}..={hi}")));
    }
    let sampler = if design.noise_var > 0.0 {
        Some(ErrorSampler::new(design.error_dist, design.noise_var)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(curves.len());
    for (i, curve) in curves.iter().enumerate() {
        let mut r = rng.substream(i as u64).rng();
        let n_i = r.random_range(lo..=hi);
        let mut times: Vec<f64> = (0..n_i).map(|_| r.random::<f64>()).collect();
        times.sort_by(f64::total_cmp);
        separate_ties(&mut times);
        let mut values = Vec::with_capacity(n_i);
        for &t in &times {
            let x = interp_linear(curve.grid(), curve.values(), t)?;
            let e = sampler.as_ref().map_or(0.0, |s| s.sample(&mut r));
            values.push(x + e);
        }
        out.push(SparseCurve::new(format!("{prefix}{i}"), times, values)?);
    }
    SparseSample::new(out)
}

/// Nudges repeated sorted times apart by one ulp.
fn separate_ties(times: &mut [f64]) {
    for j in 1..times.len() {
        if times[j] <= times[j - 1] {
            times[j] = times[j - 1].next_up();
        }
    }
    let last = times.len() - 1;
    if times[last] > 1.0 {
        times[last] = 1.0;
        for j in (0..last).rev() {
            if times[j] >= times[j + 1] {
                times[j] = times[j + 1].next_down();
            }
        }
    }
}
