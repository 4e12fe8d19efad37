//! Gaussian conditioning of a sparsely observed curve on its observations.
//!
//! Under the working model `X = μ + Σ_k ξ_k φ_k` with independent scores of
//! variance `γ_k` and white noise of variance `σ²`, the observation vector of
//! curve `i` is normal with covariance `Σ_i = σ²I + γ(T_i, T_i)`. Projections
//! `⟨X_i, v_a⟩` with `v_a = Σ_k a_k φ_k` are then conditionally normal with
//! mean `η̂_i(a) = mᵀa` and variance `Ψ̂_i(a) = aᵀ(Γ − Q_i)a`, where
//! `m = Π μ + ξ̂_i` and `Q_i = Γ Φ_iᵀ Σ_i⁻¹ Φ_i Γ`. Both are cached per curve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dgp::SparseCurve;
use crate::error::{Error, Result};
use crate::smoothing::FittedModel;
use crate::DenseCurve;

const RIDGE_LEVELS: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Conditional mean and variance of one projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub eta: f64,
    pub psi: f64,
}

/// Cached conditioning quantities for one curve at truncation `K`.
#[derive(Debug, Clone)]
pub struct ObsDesign {
    subject_id: String,
    k: usize,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    phi: DMatrix<f64>,
    centered: DVector<f64>,
    ridge: f64,
    gamma: Vec<f64>,
    xi: Vec<f64>,
    m: Vec<f64>,
    q: DMatrix<f64>,
}

impl ObsDesign {
    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `μ̂(T_ij)`.
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// `Σ_i` including any ridge that was added.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `n_i × K` matrix of `φ̂_k(T_ij)`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// `X̃_i − μ̂(T_i)`.
    pub fn centered(&self) -> &DVector<f64> {
        &self.centered
    }

    /// Diagonal ridge added to `Σ_i` (zero when the plain factorization succeeded).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Conditional-expectation scores `ξ̂`.
    pub fn scores(&self) -> &[f64] {
        &self.xi
    }

    /// Coefficient vector `m` with `η̂(a) = mᵀa`.
    pub fn eta_coefficients(&self) -> &[f64] {
        &self.m
    }

    /// `Q = Γ Φᵀ Σ⁻¹ Φ Γ`, the variance explained by the observations.
    pub fn explained_covariance(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Conditional covariance of the first `K` scores, `Γ − Q`.
    pub fn posterior_covariance(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |r, c| {
            let g = if r == c { self.gamma[r] } else { 0.0 };
            g - self.q[(r, c)]
        })
    }

    /// `η̂(a)`.
    #[inline]
    pub fn eta(&self, a: &[f64]) -> f64 {
        self.m.iter().zip(a).map(|(m, a)| m * a).sum()
    }

    /// `(Ψ̂(a), aᵀΓa)` with `Ψ̂` clamped to `[0, aᵀΓa]`.
    #[inline]
    pub fn psi(&self, a: &[f64]) -> (f64, f64) {
        let k = self.k;
        let mut prior = 0.0;
        let mut explained = 0.0;
        for r in 0..k {
            prior += self.gamma[r] * a[r] * a[r];
            let mut row = 0.0;
            for c in 0..k {
                row += self.q[(r, c)] * a[c];
            }
            explained += a[r] * row;
        }
        let raw = prior - explained;
        if raw < 0.0 || raw > prior {
            log::trace!(
                "clamping conditional variance {raw:.3e} into [0, {prior:.3e}] for {}",
                self.subject_id
            );
        }
        (raw.clamp(0.0, prior), prior)
    }
}

/// Builds the conditioning cache for `curve` at truncation `k`.
pub fn build_design(curve: &SparseCurve, model: &FittedModel, k: usize) -> Result<ObsDesign> {
    let n = curve.len();
    if n == 0 {
        return Err(Error::EmptyCurve(curve.subject_id().to_string()));
    }
    if k == 0 || k > model.n_components() {
        return Err(Error::Dimension {
            expected: model.n_components(),
            got: k,
        });
    }
    let times = curve.times();
    let mut sigma = DMatrix::zeros(n, n);
    for j in 0..n {
        for l in j..n {
            let g = model.eval_gamma(times[j], times[l])?;
            sigma[(j, l)] = g;
            sigma[(l, j)] = g;
        }
        sigma[(j, j)] += model.sigma2();
    }
    let (sigma, chol, ridge) = factorize(sigma, curve.subject_id())?;

    let mut phi = DMatrix::zeros(n, k);
    let mut mu = DVector::zeros(n);
    for (j, &t) in times.iter().enumerate() {
        for (c, v) in model.eval_basis(t, k)?.into_iter().enumerate() {
            phi[(j, c)] = v;
        }
        mu[j] = model.eval_mu(t)?;
    }
    let centered = DVector::from_column_slice(curve.values()) - &mu;

    let gamma = model.eigenvalues()[..k].to_vec();
    let sinv_c = chol.solve(&centered);
    let sinv_phi = chol.solve(&phi);
    let phit_sinv_c = phi.transpose() * sinv_c;
    let xi: Vec<f64> = (0..k).map(|r| gamma[r] * phit_sinv_c[r]).collect();
    let inner = phi.transpose() * sinv_phi;
    let q = DMatrix::from_fn(k, k, |r, c| {
        let v = 0.5 * (inner[(r, c)] + inner[(c, r)]);
        gamma[r] * v * gamma[c]
    });
    let m = model.proj_mu()[..k].iter().zip(&xi).map(|(p, x)| p + x).collect();

    Ok(ObsDesign {
        subject_id: curve.subject_id().to_string(),
        k,
        mu,
        sigma,
        chol,
        phi,
        centered,
        ridge,
        gamma,
        xi,
        m,
        q,
    })
}

fn factorize(sigma: DMatrix<f64>, id: &str) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(sigma.clone()) {
        return Ok((sigma, chol, 0.0));
    }
    let n = sigma.nrows();
    let scale = sigma.trace() / n as f64;
    for tau in RIDGE_LEVELS {
        let ridge = tau * scale;
        let mut bumped = sigma.clone();
        for j in 0..n {
            bumped[(j, j)] += ridge;
        }
        if let Some(chol) = Cholesky::new(bumped.clone()) {
            log::debug!("subject {id}: covariance factorized after ridge {ridge:.3e}");
            return Ok((bumped, chol, ridge));
        }
    }
    Err(Error::NotPositiveDefinite(id.to_string()))
}

/// `η̂(a)` and `Ψ̂(a)` for a direction in `K`-dimensional eigen-coordinates.
pub fn cond_moments(a: &[f64], design: &ObsDesign, model: &FittedModel) -> Result<ConditionalMoments> {
    if a.len() != design.k {
        return Err(Error::Dimension {
            expected: design.k,
            got: a.len(),
        });
    }
    if design.k > model.n_components() {
        return Err(Error::Dimension {
            expected: model.n_components(),
            got: design.k,
        });
    }
    let (psi, _) = design.psi(a);
    Ok(ConditionalMoments {
        eta: design.eta(a),
        psi,
    })
}

/// First `k` conditional-expectation scores `ξ̂ = Γ Φᵀ Σ⁻¹ (X̃ − μ̂)`.
pub fn blup_scores(design: &ObsDesign, model: &FittedModel, k: usize) -> Result<Vec<f64>> {
    if k > design.k || k > model.n_components() {
        return Err(Error::Dimension {
            expected: design.k.min(model.n_components()),
            got: k,
        });
    }
    Ok(design.xi[..k].to_vec())
}

/// `μ̂ + Σ_{k≤K} ξ̂_k φ̂_k` on the model grid.
pub fn predict_curve(curve: &SparseCurve, model: &FittedModel, k: usize) -> Result<DenseCurve> {
    let design = build_design(curve, model, k)?;
    predict_from_design(&design, model)
}

/// Prediction from an existing design, using all of its components.
pub fn predict_from_design(design: &ObsDesign, model: &FittedModel) -> Result<DenseCurve> {
    let mut values = model.mu().to_vec();
    for (xi, phi) in design.xi.iter().zip(model.eigenfunctions()) {
        for (v, p) in values.iter_mut().zip(phi) {
            *v += xi * p;
        }
    }
    DenseCurve::new(model.grid().clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::fourier_basis;
    use crate::Grid;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn fourier_model(gammas: &[f64], sigma2: f64, slope: f64) -> FittedModel {
        let grid = Arc::new(Grid::uniform(101).unwrap());
        let phi = (0..gammas.len())
            .map(|k| grid.points().iter().map(|&t| fourier_basis(k, t)).collect())
            .collect();
        let mu = grid.points().iter().map(|t| slope * t).collect();
        FittedModel::from_eigen(grid, mu, gammas.to_vec(), phi, sigma2).unwrap()
    }

    #[test]
    fn single_observation_design() {
        let model = fourier_model(&[2.0, 1.0], 0.3, 0.0);
        let c = SparseCurve::new("a", vec![0.37], vec![1.0]).unwrap();
        let d = build_design(&c, &model, 2).unwrap();
        let g = model.eval_gamma(0.37, 0.37).unwrap();
        assert_abs_diff_eq!(d.sigma()[(0, 0)], 0.3 + g, epsilon = 1e-15);
        assert_eq!(d.ridge(), 0.0);
        let b = model.eval_basis(0.37, 2).unwrap();
        assert_eq!(d.phi()[(0, 0)], b[0]);
        assert_eq!(d.phi()[(0, 1)], b[1]);
    }

    #[test]
    fn zero_innovation_and_uninformative_times() {
        let model = fourier_model(&[2.0, 1.0, 0.5], 0.1, 1.5);
        let times = vec![0.2, 0.5, 0.9];
        let values = times.iter().map(|t| 1.5 * t).collect();
        let c = SparseCurve::new("m", times, values).unwrap();
        let d = build_design(&c, &model, 3).unwrap();
        let a = [0.6, -0.48, 0.64];
        let pm: f64 = model.proj_mu().iter().zip(&a).map(|(p, a)| p * a).sum();
        assert_abs_diff_eq!(cond_moments(&a, &d, &model).unwrap().eta, pm, epsilon = 1e-12);
        assert!(blup_scores(&d, &model, 3).unwrap().iter().all(|x| x.abs() < 1e-12));

        // sin(2πt) vanishes at 0, 0.5 and 1
        let model = fourier_model(&[2.0, 1.0], 0.1, 0.0);
        let sin_only = FittedModel::from_eigen(
            model.grid().clone(),
            model.mu().to_vec(),
            vec![1.0],
            vec![model.eigenfunctions()[1].clone()],
            0.1,
        )
        .unwrap();
        let c = SparseCurve::new("z", vec![0.0, 0.5, 1.0], vec![3.0, -1.0, 2.0]).unwrap();
        let d = build_design(&c, &sin_only, 1).unwrap();
        let m = cond_moments(&[1.0], &d, &sin_only).unwrap();
        assert_abs_diff_eq!(m.eta, sin_only.proj_mu()[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m.psi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_blup_matches_closed_form() {
        let model = fourier_model(&[3.0], 0.4, 0.0);
        let t = 0.3;
        let x = 1.7;
        let c = SparseCurve::new("s", vec![t], vec![x]).unwrap();
        let d = build_design(&c, &model, 1).unwrap();
        let phi = model.eval_basis(t, 1).unwrap()[0];
        let expected = 3.0 * phi * x / (0.4 + 3.0 * phi * phi);
        assert_abs_diff_eq!(blup_scores(&d, &model, 1).unwrap()[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn ridge_escalation_rescues_singular_covariance() {
        let grid = Arc::new(Grid::uniform(11).unwrap());
        let one = vec![1.0; 11];
        let model = FittedModel::from_eigen(grid, vec![0.0; 11], vec![1.0], vec![one], 0.0).unwrap();
        let c = SparseCurve::new("r", vec![0.1, 0.6], vec![1.0, 1.0]).unwrap();
        let d = build_design(&c, &model, 1).unwrap();
        assert!(d.ridge() > 0.0 && d.ridge() <= 1e-6);
    }

    #[test]
    fn prediction_is_linear_in_data() {
        let model = fourier_model(&[2.0, 1.0, 0.5], 0.2, 0.7);
        let times = vec![0.1, 0.45, 0.8];
        let c = SparseCurve::new("p", times.clone(), vec![0.3, -0.2, 1.1]).unwrap();
        let base = predict_curve(&c, &model, 3).unwrap();
        // centered data scaled by α: μ̂(T) + α(X̃ − μ̂(T))
        let d = build_design(&c, &model, 3).unwrap();
        let alpha = -2.5;
        let scaled: Vec<f64> = (0..3).map(|j| d.mu()[j] + alpha * d.centered()[j]).collect();
        let c2 = SparseCurve::new("p", times, scaled).unwrap();
        let pred = predict_curve(&c2, &model, 3).unwrap();
        for ((p, b), m) in pred.values().iter().zip(base.values()).zip(model.mu()) {
            assert_abs_diff_eq!(p - m, alpha * (b - m), epsilon = 1e-10);
        }
        let at_mean = SparseCurve::new("q", vec![0.2, 0.4], vec![model.eval_mu(0.2).unwrap(), model.eval_mu(0.4).unwrap()]).unwrap();
        let pm = predict_curve(&at_mean, &model, 2).unwrap();
        for (p, m) in pm.values().iter().zip(model.mu()) {
            assert_abs_diff_eq!(*p, *m, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_checks() {
        let model = fourier_model(&[2.0, 1.0], 0.2, 0.0);
        let c = SparseCurve::new("d", vec![0.5], vec![0.0]).unwrap();
        assert!(matches!(build_design(&c, &model, 3), Err(Error::Dimension { .. })));
        let d = build_design(&c, &model, 2).unwrap();
        assert!(matches!(cond_moments(&[1.0], &d, &model), Err(Error::Dimension { .. })));
        assert!(blup_scores(&d, &model, 3).is_err());
    }
}
