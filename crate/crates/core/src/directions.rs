//! Finite direction pools in eigen-coordinates.
//!
//! A direction `v = Σ_k a_k φ_k` with `‖a‖ = 1` is admissible at level `λ`
//! when its RKHS norm `(Σ_k a_k² / γ_k)^{1/2}` is at most `λ`. Pools are drawn
//! once per model and truncation from the normalized law `z / ‖z‖`,
//! `z ~ N(0, Γ_K)`, and every regularization level filters the same pool, so
//! accepted sets are nested in `λ`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::smoothing::FittedModel;

/// Accepted-direction target `L = 1000 K`.
pub fn default_accept_target(k: usize) -> usize {
    1000 * k
}

/// Pool size `L0 = 10 L`, capped at one million.
pub fn default_pool_size(accept_target: usize) -> usize {
    (10 * accept_target).clamp(1, 1_000_000)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPool {
    k: usize,
    coords: Vec<f64>,
    rkhs_norms: Vec<f64>,
    source_model_id: u64,
}

impl DirectionPool {
    /// Pool from explicit unit vectors (row-major, `K` entries each).
    pub fn from_coords(eigenvalues: &[f64], k: usize, coords: Vec<f64>, source_model_id: u64) -> Result<Self> {
        if k == 0 || k > eigenvalues.len() {
            return Err(Error::Dimension {
                expected: eigenvalues.len(),
                got: k,
            });
        }
        if coords.is_empty() || coords.len() % k != 0 {
            return Err(Error::Dimension {
                expected: k,
                got: coords.len(),
            });
        }
        let mut rkhs_norms = Vec::with_capacity(coords.len() / k);
        for a in coords.chunks_exact(k) {
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("pool direction has norm {norm}, expected 1")));
            }
            rkhs_norms.push(rkhs_norm(a, eigenvalues));
        }
        Ok(Self {
            k,
            coords,
            rkhs_norms,
            source_model_id,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rkhs_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rkhs_norms.is_empty()
    }

    /// Coordinates of direction `l`.
    #[inline]
    pub fn direction(&self, l: usize) -> &[f64] {
        &self.coords[l * self.k..(l + 1) * self.k]
    }

    pub fn rkhs_norms(&self) -> &[f64] {
        &self.rkhs_norms
    }

    pub fn source_model_id(&self) -> u64 {
        self.source_model_id
    }

    /// Same pool with every direction replaced by its negative.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.coords.iter_mut().for_each(|c| *c = -*c);
        out
    }

    /// Pool `(a_0, −a_0, a_1, −a_1, …)`; every even-length prefix is sign-symmetric.
    pub fn sign_symmetrized(&self) -> Self {
        let mut coords = Vec::with_capacity(2 * self.coords.len());
        let mut rkhs_norms = Vec::with_capacity(2 * self.len());
        for l in 0..self.len() {
            let a = self.direction(l);
            coords.extend_from_slice(a);
            coords.extend(a.iter().map(|x| -x));
            rkhs_norms.push(self.rkhs_norms[l]);
            rkhs_norms.push(self.rkhs_norms[l]);
        }
        Self {
            k: self.k,
            coords,
            rkhs_norms,
            source_model_id: self.source_model_id,
        }
    }
}

/// `(Σ_k a_k² / γ_k)^{1/2}`.
pub fn rkhs_norm(a: &[f64], eigenvalues: &[f64]) -> f64 {
    a.iter().zip(eigenvalues).map(|(x, g)| x * x / g).sum::<f64>().sqrt()
}

/// Draws `l0` directions from the normalized `N(0, Γ_K)` law.
pub fn sample_direction_pool(model: &FittedModel, k: usize, l0: usize, rng: RngStream) -> Result<DirectionPool> {
    let eigenvalues = model.eigenvalues();
    if k == 0 || k > eigenvalues.len() {
        return Err(Error::Dimension {
            expected: eigenvalues.len(),
            got: k,
        });
    }
    if l0 == 0 {
        return Err(Error::Config("pool size must be at least 1".into()));
    }
    let sd: Vec<f64> = eigenvalues[..k].iter().map(|g| g.sqrt()).collect();
    let mut r = rng.rng();
    let mut coords = Vec::with_capacity(l0 * k);
    let mut rkhs_norms = Vec::with_capacity(l0);
    let mut z = vec![0.0; k];
    while rkhs_norms.len() < l0 {
        for (zk, s) in z.iter_mut().zip(&sd) {
            *zk = s * r.sample::<f64, _>(StandardNormal);
        }
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            continue;
        }
        let start = coords.len();
        coords.extend(z.iter().map(|x| x / norm));
        rkhs_norms.push(rkhs_norm(&coords[start..], eigenvalues));
    }
    Ok(DirectionPool {
        k,
        coords,
        rkhs_norms,
        source_model_id: model.fingerprint(),
    })
}

/// Nearest-rank `u`-quantile of the pool's RKHS norms.
pub fn lambda_from_quantile(pool: &DirectionPool, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Config(format!("quantile level must lie in (0, 1), got {u}")));
    }
    if pool.is_empty() {
        return Err(Error::Config("direction pool is empty".into()));
    }
    let mut norms = pool.rkhs_norms.clone();
    norms.sort_by(f64::total_cmp);
    let n = norms.len();
    // the small offset keeps exact products such as 0.5·4 from rounding up a rank
    let rank = ((u * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Ok(norms[rank - 1])
}

/// Outcome of filtering a pool at one regularization level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accepted {
    /// Pool indices in pool order.
    pub indices: Vec<usize>,
    /// Fewer than the requested number of directions were admissible.
    pub shortfall: bool,
}

/// The first `l` pool directions (in pool order) whose RKHS norm is at most `lambda`.
pub fn filter_pool(pool: &DirectionPool, lambda: f64, l: usize) -> Result<Accepted> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let indices: Vec<usize> = pool
        .rkhs_norms
        .iter()
        .enumerate()
        .filter(|(_, &n)| n <= lambda)
        .map(|(i, _)| i)
        .take(l)
        .collect();
    if indices.is_empty() {
        let min_norm = pool.rkhs_norms.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(Error::EmptyDirectionSet { lambda, min_norm });
    }
    let shortfall = indices.len() < l;
    if shortfall {
        log::warn!(
            "only {} of {l} requested directions satisfy lambda = {lambda:.4}",
            indices.len()
        );
    }
    Ok(Accepted { indices, shortfall })
}

/// How a regularization level is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum Regularization {
    /// RKHS-norm radius `λ`.
    Lambda(f64),
    /// Quantile level `u` of the pool's RKHS norms.
    Quantile(f64),
}

impl Regularization {
    /// Resolves to a radius `λ` that admits at least one pool direction.
    pub fn resolve(&self, pool: &DirectionPool) -> Result<f64> {
        let lambda = match *self {
            Regularization::Lambda(l) => l,
            Regularization::Quantile(u) => lambda_from_quantile(pool, u)?,
        };
        let min_norm = pool.rkhs_norms.iter().copied().fold(f64::INFINITY, f64::min);
        if lambda < min_norm {
            return Err(Error::EmptyDirectionSet { lambda, min_norm });
        }
        Ok(lambda)
    }

    pub fn quantile(&self) -> Option<f64> {
        match *self {
            Regularization::Quantile(u) => Some(u),
            Regularization::Lambda(_) => None,
        }
    }
}

/// A set of regularization levels with their resolved radii.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationSpec {
    pub levels: Vec<Regularization>,
    pub resolved_lambdas: Vec<f64>,
}

impl RegularizationSpec {
    pub fn resolve(levels: Vec<Regularization>, pool: &DirectionPool) -> Result<Self> {
        let resolved_lambdas = levels.iter().map(|r| r.resolve(pool)).collect::<Result<_>>()?;
        Ok(Self {
            levels,
            resolved_lambdas,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn model(gammas: &[f64]) -> FittedModel {
        let grid = Arc::new(Grid::uniform(101).unwrap());
        let phi = (0..gammas.len())
            .map(|k| grid.points().iter().map(|&t| crate::dgp::fourier_basis(k, t)).collect())
            .collect();
        FittedModel::from_eigen(grid, vec![0.0; 101], gammas.to_vec(), phi, 0.1).unwrap()
    }

    fn toy_pool(norms: &[f64]) -> DirectionPool {
        DirectionPool {
            k: 1,
            coords: vec![1.0; norms.len()],
            rkhs_norms: norms.to_vec(),
            source_model_id: 0,
        }
    }

    #[test]
    fn rkhs_norm_examples() {
        let pool = DirectionPool::from_coords(&[4.0, 1.0], 2, vec![1.0, 0.0, 0.0, 1.0], 0).unwrap();
        assert_abs_diff_eq!(pool.rkhs_norms()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pool.rkhs_norms()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quantile_examples() {
        let pool = toy_pool(&[0.9, 0.5, 0.6]);
        assert_eq!(lambda_from_quantile(&pool, 0.5).unwrap(), 0.6);
        assert_eq!(lambda_from_quantile(&pool, 0.34).unwrap(), 0.6);
        assert_eq!(lambda_from_quantile(&pool, 0.999).unwrap(), 0.9);
        assert!(matches!(lambda_from_quantile(&pool, 1.0), Err(Error::Config(_))));
        assert!(matches!(lambda_from_quantile(&pool, 0.0), Err(Error::Config(_))));
        let four = toy_pool(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(lambda_from_quantile(&four, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn filter_examples() {
        let pool = DirectionPool::from_coords(&[4.0, 1.0], 2, vec![1.0, 0.0, 0.0, 1.0], 0).unwrap();
        let acc = filter_pool(&pool, 0.75, 2).unwrap();
        assert_eq!(acc.indices, vec![0]);
        assert!(acc.shortfall);
        let acc = filter_pool(&pool, 1.0, 1).unwrap();
        assert_eq!(acc.indices, vec![0]);
        assert!(!acc.shortfall);
        assert!(matches!(filter_pool(&pool, 0.4, 2), Err(Error::EmptyDirectionSet { .. })));
        assert!(matches!(
            Regularization::Lambda(0.4).resolve(&pool),
            Err(Error::EmptyDirectionSet { .. })
        ));
    }

    #[test]
    fn pool_norm_bounds_and_determinism() {
        let m = model(&[3.0, 1.5, 0.7, 0.2]);
        let pool = sample_direction_pool(&m, 4, 5000, RngStream::new(5)).unwrap();
        let (lo, hi) = (3f64.powf(-0.5), 0.2f64.powf(-0.5));
        for l in 0..pool.len() {
            let a = pool.direction(l);
            assert_abs_diff_eq!(a.iter().map(|x| x * x).sum::<f64>().sqrt(), 1.0, epsilon = 1e-12);
            let n = pool.rkhs_norms()[l];
            assert_abs_diff_eq!(n, rkhs_norm(a, m.eigenvalues()), epsilon = 1e-12);
            assert!(n >= lo - 1e-12 && n <= hi + 1e-12);
        }
        let again = sample_direction_pool(&m, 4, 5000, RngStream::new(5)).unwrap();
        assert_eq!(pool, again);
        assert_eq!(pool.source_model_id(), m.fingerprint());
        let lam = lambda_from_quantile(&pool, 0.999).unwrap();
        assert!(lam >= lo && lam <= hi);
    }

    #[test]
    fn symmetrized_pool_pairs_directions() {
        let m = model(&[2.0, 1.0]);
        let pool = sample_direction_pool(&m, 2, 10, RngStream::new(1)).unwrap().sign_symmetrized();
        assert_eq!(pool.len(), 20);
        for l in 0..10 {
            let (a, b) = (pool.direction(2 * l), pool.direction(2 * l + 1));
            assert!(a.iter().zip(b).all(|(x, y)| *x == -*y));
        }
    }

    proptest! {
        #[test]
        fn quantile_is_monotone(u1 in 0.01f64..0.99, u2 in 0.01f64..0.99, seed in 0u64..50) {
            let m = model(&[2.0, 1.0, 0.3]);
            let pool = sample_direction_pool(&m, 3, 200, RngStream::new(seed)).unwrap();
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            prop_assert!(lambda_from_quantile(&pool, lo).unwrap() <= lambda_from_quantile(&pool, hi).unwrap());
        }

        #[test]
        fn acceptance_is_nested(u1 in 0.05f64..0.99, u2 in 0.05f64..0.99, seed in 0u64..50) {
            let m = model(&[2.0, 1.0, 0.3]);
            let pool = sample_direction_pool(&m, 3, 300, RngStream::new(seed)).unwrap();
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            let a = filter_pool(&pool, lambda_from_quantile(&pool, lo).unwrap(), usize::MAX).unwrap();
            let b = filter_pool(&pool, lambda_from_quantile(&pool, hi).unwrap(), usize::MAX).unwrap();
            prop_assert!(a.indices.iter().all(|i| b.indices.binary_search(i).is_ok()));
        }
    }
}
