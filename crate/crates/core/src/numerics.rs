//! Grids, trapezoid quadrature, piecewise-linear interpolation, the standard
//! normal distribution function and seeded random streams.
//!
//! The grid and curve types are generic over the floating-point scalar; the
//! rest of the crate works with the `f64` aliases re-exported at the root.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered evaluation points on `[0, 1]` together with trapezoid weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    points: Vec<T>,
    weights: Vec<T>,
}

impl<T: Float> Grid<T> {
    /// Builds a grid from strictly increasing points that start at 0 and end at 1.
    pub fn new(points: Vec<T>) -> Result<Self> {
        let weights = trapezoid_weights(&points)?;
        let first = points[0];
        let last = points[points.len() - 1];
        if first != T::zero() || last != T::one() {
            return Err(Error::InvalidGrid(format!(
                "grid must span [0, 1], got [{}, {}]",
                first.to_f64().unwrap_or(f64::NAN),
                last.to_f64().unwrap_or(f64::NAN)
            )));
        }
        Ok(Self { points, weights })
    }

    /// `m` equally spaced points including both endpoints.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 points, got {m}")));
        }
        let denom = T::from(m - 1).unwrap();
        let points = (0..m).map(|i| T::from(i).unwrap() / denom).collect();
        Self::new(points)
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Interval index `j` and fraction `f` with `t = (1 - f) s_j + f s_{j+1}`.
    pub fn locate(&self, t: T) -> Result<(usize, T)> {
        if !(t >= T::zero() && t <= T::one()) {
            return Err(Error::OutOfDomain(t.to_f64().unwrap_or(f64::NAN)));
        }
        let m = self.points.len();
        let upper = self.points.partition_point(|&p| p <= t);
        let j = upper.saturating_sub(1).min(m - 2);
        let (lo, hi) = (self.points[j], self.points[j + 1]);
        Ok((j, (t - lo) / (hi - lo)))
    }

    /// Quadrature approximation of `∫ f g` for values sampled on this grid.
    pub fn dot(&self, f: &[T], g: &[T]) -> T {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .fold(T::zero(), |acc, (&w, (&a, &b))| acc + w * a * b)
    }
}

/// Trapezoid weights for strictly increasing points inside `[0, 1]`.
pub fn trapezoid_weights<T: Float>(points: &[T]) -> Result<Vec<T>> {
    let m = points.len();
    if m < 2 {
        return Err(Error::InvalidGrid(format!("need at least 2 points, got {m}")));
    }
    for (j, w) in points.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points must be strictly increasing (index {})",
                j + 1
            )));
        }
    }
    if !(points[0] >= T::zero() && points[m - 1] <= T::one()) {
        return Err(Error::InvalidGrid("points must lie in [0, 1]".into()));
    }
    let half = T::from(0.5).unwrap();
    let mut weights = Vec::with_capacity(m);
    weights.push((points[1] - points[0]) * half);
    for j in 1..m - 1 {
        weights.push((points[j + 1] - points[j - 1]) * half);
    }
    weights.push((points[m - 1] - points[m - 2]) * half);
    Ok(weights)
}

/// A fully observed function stored by its values on a shared grid.
#[derive(Debug, Clone)]
pub struct DenseCurve<T> {
    grid: Arc<Grid<T>>,
    values: Vec<T>,
}

impl<T: Float> DenseCurve<T> {
    pub fn new(grid: Arc<Grid<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("curve values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Arc<Grid<T>>, f: impl Fn(T) -> T) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn eval(&self, t: T) -> Result<T> {
        interp_linear(&self.grid, &self.values, t)
    }
}

/// `⟨f, g⟩ = Σ_m w_m f(s_m) g(s_m)`.
pub fn inner_product<T: Float>(f: &DenseCurve<T>, g: &DenseCurve<T>) -> Result<T> {
    if !f.same_grid(g) {
        return Err(Error::IncompatibleCurves);
    }
    Ok(f.grid.dot(&f.values, &g.values))
}

/// Piecewise-linear interpolation of grid values at `t ∈ [0, 1]`.
pub fn interp_linear<T: Float>(grid: &Grid<T>, values: &[T], t: T) -> Result<T> {
    let (j, f) = grid.locate(t)?;
    Ok((T::one() - f) * values[j] + f * values[j + 1])
}

/// Bilinear interpolation of a row-major `M × M` surface at `(s, t)`.
pub fn interp_bilinear<T: Float>(grid: &Grid<T>, surface: &[T], s: T, t: T) -> Result<T> {
    let m = grid.len();
    let (i, fs) = grid.locate(s)?;
    let (j, ft) = grid.locate(t)?;
    let one = T::one();
    let at = |a: usize, b: usize| surface[a * m + b];
    let lo = (one - ft) * at(i, j) + ft * at(i, j + 1);
    let hi = (one - ft) * at(i + 1, j) + ft * at(i + 1, j + 1);
    Ok((one - fs) * lo + fs * hi)
}

/// Standard normal distribution function Φ.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Upper tail `1 - Φ(z)`, computed without cancellation.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / SQRT_2)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A seeded random stream. Substreams are derived deterministically from the
/// parent stream id, so a consumer's draws never depend on other consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream_id: 0 }
    }

    pub fn substream(&self, index: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(index ^ 0xD6E8_FEB8_6659_FD93));
        Self {
            seed: self.seed,
            stream_id: mixed,
        }
    }

    /// Substream keyed by a text label (FNV-1a).
    pub fn labeled(&self, label: &str) -> Self {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01B3);
        }
        self.substream(h)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}
