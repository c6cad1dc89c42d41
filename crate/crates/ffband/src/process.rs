//! Covariance models, Gaussian/elliptical process sampling on a grid, and the
//! band-limited missingness mechanism for functional fragments.
//!
//! Covariance matrices are factorized by Cholesky with a short diagonal-jitter
//! escalation; models that are indefinite at the working precision fall back
//! to a symmetric-eigendecomposition root with negative eigenvalues clipped
//! (rejected as a model error when the negative part is more than roundoff).
//! Curves are drawn from per-curve counter-based RNG substreams, so sampling
//! is reproducible regardless of evaluation order or thread count.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, ChiSquared, StandardNormal};

use crate::error::{Error, Result};
use crate::special::{bessel_k, gamma_fn};

/// Evaluation grid on [0, 1]: strictly increasing points including both
/// endpoints, at least 3 of them.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    /// Validated grid from explicit points.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::input(format!(
                "grid needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("grid points must be finite"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::input("grid points must be strictly increasing"));
        }
        if points[0] != 0.0 || *points.last().unwrap() != 1.0 {
            return Err(Error::input("grid must span [0, 1] with both endpoints"));
        }
        Ok(Self { points })
    }

    /// Equidistant grid with `m` points j/(m−1), j = 0..m−1.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::input(format!("grid needs at least 3 points, got {m}")));
        }
        let step = 1.0 / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|j| j as f64 * step).collect();
        points[m - 1] = 1.0;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Mean spacing; equals the common spacing for a uniform grid.
    pub fn mean_step(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }

    /// Common spacing if the grid is (numerically) equidistant.
    pub fn uniform_step(&self) -> Option<f64> {
        let h = self.mean_step();
        let ok = self
            .points
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9);
        ok.then_some(h)
    }
}

/// Matérn covariance `scale²·(2^{1−υ}/Γ(υ))·(√(2υ)d)^υ·K_υ(√(2υ)d)` with
/// d = |t−s|; the d = 0 limit (exactly `scale²`) is handled analytically.
pub fn matern_cov(t: f64, s: f64, scale: f64, smoothness: f64) -> f64 {
    debug_assert!(scale > 0.0 && smoothness > 0.0);
    let d = (t - s).abs();
    if d == 0.0 {
        return scale * scale;
    }
    let x = (2.0 * smoothness).sqrt() * d;
    let corr = (1.0 - smoothness).exp2() / gamma_fn(smoothness).expect("positive smoothness")
        * x.powf(smoothness)
        * bessel_k(smoothness, x).expect("positive Bessel argument");
    scale * scale * corr
}

/// Smoothness map of the built-in nonstationary model:
/// υ(t, s) = 2 − 1.75·√(max(t, s)), decaying from 2 at the origin to 1/4 at
/// the right edge.
pub fn decaying_smoothness(t: f64, s: f64) -> f64 {
    2.0 - 1.75 * t.max(s).sqrt()
}

/// Nonstationary Matérn covariance with pointwise smoothness
/// [`decaying_smoothness`]; symmetric because the smoothness depends on
/// max(t, s) only.
pub fn nonstationary_matern_cov(t: f64, s: f64, scale: f64) -> f64 {
    matern_cov(t, s, scale, decaying_smoothness(t, s))
}

/// Covariance model for process sampling.
#[derive(Clone)]
pub enum CovarianceModel {
    /// Stationary Matérn with the given scale and smoothness.
    Matern { scale: f64, smoothness: f64 },
    /// Matérn with a pointwise smoothness map υ(t, s) (must be symmetric).
    NonstationaryMatern {
        scale: f64,
        smoothness: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    },
    /// Arbitrary symmetric kernel.
    Custom {
        kernel: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Matern { scale, smoothness } => f
                .debug_struct("Matern")
                .field("scale", scale)
                .field("smoothness", smoothness)
                .finish(),
            Self::NonstationaryMatern { scale, .. } => f
                .debug_struct("NonstationaryMatern")
                .field("scale", scale)
                .finish_non_exhaustive(),
            Self::Custom { .. } => f.debug_struct("Custom").finish_non_exhaustive(),
        }
    }
}

impl CovarianceModel {
    /// Stationary Matérn model.
    pub fn matern(scale: f64, smoothness: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!("Matérn scale must be positive, got {scale}")));
        }
        if !(smoothness > 0.0 && smoothness.is_finite()) {
            return Err(Error::domain(format!(
                "Matérn smoothness must be positive, got {smoothness}"
            )));
        }
        Ok(Self::Matern { scale, smoothness })
    }

    /// Nonstationary Matérn with the built-in [`decaying_smoothness`] map.
    pub fn nonstationary_matern(scale: f64) -> Result<Self> {
        Self::nonstationary_matern_with(scale, decaying_smoothness)
    }

    /// Nonstationary Matérn with a user smoothness map (must be symmetric and
    /// strictly positive on [0,1]²).
    pub fn nonstationary_matern_with(
        scale: f64,
        smoothness: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::domain(format!("Matérn scale must be positive, got {scale}")));
        }
        Ok(Self::NonstationaryMatern {
            scale,
            smoothness: Arc::new(smoothness),
        })
    }

    /// Custom symmetric kernel.
    pub fn custom(kernel: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            kernel: Arc::new(kernel),
        }
    }

    /// Kernel value C(t, s).
    pub fn evaluate(&self, t: f64, s: f64) -> f64 {
        match self {
            Self::Matern { scale, smoothness } => matern_cov(t, s, *scale, *smoothness),
            Self::NonstationaryMatern { scale, smoothness } => {
                matern_cov(t, s, *scale, smoothness(t, s))
            }
            Self::Custom { kernel } => kernel(t, s),
        }
    }

    /// Gridded covariance matrix; evaluated on the upper triangle and
    /// mirrored, so the result is symmetric to the bit.
    pub fn matrix(&self, grid: &Grid) -> DMatrix<f64> {
        let m = grid.len();
        let pts = grid.points();
        let mut c = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = self.evaluate(pts[i], pts[j]);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }
}

/// Matrix root L with L·Lᵀ equal to `cov` (up to clipped roundoff-scale
/// negative eigenvalues).
///
/// Tries Cholesky with diagonal jitter escalating through
/// {0, 1e−12, …, 1e−8}; if every attempt fails, falls back to a symmetric
/// eigendecomposition root with negative eigenvalues clipped to zero, and
/// reports a model error when the most negative eigenvalue exceeds
/// 1e−4·λ_max in magnitude (a genuinely indefinite model rather than
/// roundoff).
pub fn factor_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = cov.nrows();
    if m == 0 || cov.ncols() != m {
        return Err(Error::input("factor_root requires a square nonempty matrix"));
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(m, m));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::model("covariance matrix has non-finite entries"));
    }
    for &jitter in &[0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8] {
        let mut work = cov.clone();
        if jitter > 0.0 {
            for i in 0..m {
                work[(i, i)] += jitter;
            }
        }
        if let Some(chol) = nalgebra::Cholesky::new(work) {
            return Ok(chol.unpack());
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::min);
    if min_eig < -1e-4 * max_eig.max(f64::MIN_POSITIVE) {
        return Err(Error::model(format!(
            "covariance not positive semidefinite: min eigenvalue {min_eig:.3e} vs max {max_eig:.3e}"
        )));
    }
    let sqrt_vals =
        DVector::from_iterator(m, eig.eigenvalues.iter().map(|&w| w.max(0.0).sqrt()));
    let mut root = eig.eigenvectors;
    for j in 0..m {
        let s = sqrt_vals[j];
        for i in 0..m {
            root[(i, j)] *= s;
        }
    }
    Ok(root)
}

/// Functional data on a common grid with an observation mask; each row's
/// observed set is a contiguous index interval (all-true for fully observed
/// designs).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalSample {
    pub grid: Grid,
    /// n×m matrix of curve values (entries outside the mask are present but
    /// must not be used by estimators).
    pub curves: DMatrix<f64>,
    /// n×m observation indicators.
    pub mask: DMatrix<bool>,
}

impl FunctionalSample {
    /// Number of curves.
    pub fn n(&self) -> usize {
        self.curves.nrows()
    }

    /// Number of grid points.
    pub fn m(&self) -> usize {
        self.curves.ncols()
    }

    /// True when every entry is observed.
    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    /// Observed index interval [lo, hi] of one curve, or None for an empty row.
    pub fn observed_range(&self, i: usize) -> Option<(usize, usize)> {
        let row = self.mask.row(i);
        let lo = (0..self.m()).find(|&j| row[j])?;
        let hi = (0..self.m()).rev().find(|&j| row[j])?;
        Some((lo, hi))
    }

    /// Number of curves observed at each grid point.
    pub fn counts_per_point(&self) -> Vec<usize> {
        (0..self.m())
            .map(|j| (0..self.n()).filter(|&i| self.mask[(i, j)]).count())
            .collect()
    }

    /// Structural checks: shapes agree, masked rows are contiguous intervals,
    /// and every grid point is observed on at least one curve.
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.m() {
            return Err(Error::input(format!(
                "grid has {} points but curves have {} columns",
                self.grid.len(),
                self.m()
            )));
        }
        if self.mask.nrows() != self.n() || self.mask.ncols() != self.m() {
            return Err(Error::input("mask shape does not match curves"));
        }
        for i in 0..self.n() {
            match self.observed_range(i) {
                None => return Err(Error::input(format!("curve {i} has no observed points"))),
                Some((lo, hi)) => {
                    if (lo..=hi).any(|j| !self.mask[(i, j)]) {
                        return Err(Error::input(format!(
                            "curve {i} has a non-contiguous observation set"
                        )));
                    }
                }
            }
        }
        let counts = self.counts_per_point();
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::input(format!("no curve observed at grid index {j}")));
        }
        Ok(())
    }
}

/// Independent RNG substream for one curve: all substreams share the seed and
/// differ in the stream counter, so curves can be drawn in any order.
fn curve_rng(seed: u64, curve: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(curve as u64);
    rng
}

fn standard_normal_vector(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn sample_with_root(
    mean: &[f64],
    root: &DMatrix<f64>,
    grid: &Grid,
    n: usize,
    seed: u64,
    mut scale_draw: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Result<FunctionalSample> {
    if n == 0 {
        return Err(Error::input("need at least one curve"));
    }
    if mean.len() != grid.len() {
        return Err(Error::input(format!(
            "mean has {} values but grid has {} points",
            mean.len(),
            grid.len()
        )));
    }
    let m = grid.len();
    let mean_v = DVector::from_column_slice(mean);
    let mut curves = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut rng = curve_rng(seed, i);
        let v = scale_draw(&mut rng)?;
        let z = standard_normal_vector(&mut rng, m);
        let row = &mean_v + (root * z) * v;
        curves.row_mut(i).copy_from(&row.transpose());
    }
    Ok(FunctionalSample {
        grid: grid.clone(),
        curves,
        mask: DMatrix::from_element(n, m, true),
    })
}

fn sample_scaled(
    mean: &[f64],
    cov: &CovarianceModel,
    grid: &Grid,
    n: usize,
    seed: u64,
    scale_draw: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Result<FunctionalSample> {
    let root = factor_root(&cov.matrix(grid))?;
    sample_with_root(mean, &root, grid, n, seed, scale_draw)
}

/// Gaussian process sampler with a precomputed covariance factor, for Monte
/// Carlo loops that draw many independent samples from the same model.
///
/// [`ProcessSampler::sample`] with a given seed is bit-identical to
/// [`sample_gp`] with the same mean, model, grid, and seed.
#[derive(Clone, Debug)]
pub struct ProcessSampler {
    grid: Grid,
    mean: Vec<f64>,
    root: DMatrix<f64>,
}

impl ProcessSampler {
    pub fn new(mean: &[f64], cov: &CovarianceModel, grid: &Grid) -> Result<Self> {
        if mean.len() != grid.len() {
            return Err(Error::input(format!(
                "mean has {} values but grid has {} points",
                mean.len(),
                grid.len()
            )));
        }
        let root = factor_root(&cov.matrix(grid))?;
        Ok(ProcessSampler {
            grid: grid.clone(),
            mean: mean.to_vec(),
            root,
        })
    }

    /// Draw `n` i.i.d. Gaussian curves.
    pub fn sample(&self, n: usize, seed: u64) -> Result<FunctionalSample> {
        sample_with_root(&self.mean, &self.root, &self.grid, n, seed, |_| Ok(1.0))
    }
}

/// Draw `n` i.i.d. Gaussian curves mean + L·z on the grid.
///
/// Deterministic for a fixed seed; the mask is all-true.
pub fn sample_gp(
    mean: &[f64],
    cov: &CovarianceModel,
    grid: &Grid,
    n: usize,
    seed: u64,
) -> Result<FunctionalSample> {
    sample_scaled(mean, cov, grid, n, seed, |_| Ok(1.0))
}

/// Draw `n` i.i.d. elliptical t-process curves mean + V·(L·z), where each
/// curve has its own scale V = √(ν/χ²_ν) drawn first from its substream.
pub fn sample_t_process(
    mean: &[f64],
    cov: &CovarianceModel,
    grid: &Grid,
    n: usize,
    nu: f64,
    seed: u64,
) -> Result<FunctionalSample> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::domain(format!("t-process requires nu > 0, got {nu}")));
    }
    let chi2 = ChiSquared::new(nu)
        .map_err(|e| Error::domain(format!("chi-squared({nu}) unavailable: {e}")))?;
    sample_scaled(mean, cov, grid, n, seed, move |rng| {
        let draw: f64 = rng.sample(chi2);
        if draw <= 0.0 {
            return Err(Error::solver("chi-squared draw was not positive"));
        }
        Ok((nu / draw).sqrt())
    })
}

/// Restrict each curve to a sliding window, producing functional fragments.
///
/// Per curve, Ã ~ BetaBinomial(`bb_n`, `bb_a`, `bb_b`) (a Beta draw followed
/// by a Binomial draw), the window is [Ã/100, Ã/100 + `window`], and the
/// observation mask keeps the grid points inside it (intersected with the
/// existing mask). Use a seed independent of the sampling seed so missingness
/// stays independent of the noise.
pub fn fragmentize(
    sample: &FunctionalSample,
    window: f64,
    bb_n: u64,
    bb_a: f64,
    bb_b: f64,
    seed: u64,
) -> Result<FunctionalSample> {
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::domain(format!("window must lie in (0, 1], got {window}")));
    }
    if !(bb_a > 0.0 && bb_b > 0.0) {
        return Err(Error::domain("Beta-Binomial shape parameters must be positive"));
    }
    // Membership tolerance reproduces exact integer-window semantics on the
    // default centesimal grid while remaining harmless on any other grid.
    const EDGE_TOL: f64 = 1e-9;
    let beta = Beta::new(bb_a, bb_b)
        .map_err(|e| Error::domain(format!("Beta({bb_a}, {bb_b}) unavailable: {e}")))?;
    let mut out = sample.clone();
    for i in 0..sample.n() {
        let mut rng = curve_rng(seed, i);
        let p: f64 = rng.sample(beta);
        let p = p.clamp(0.0, 1.0);
        let a_tilde = if bb_n == 0 {
            0
        } else {
            let binom = Binomial::new(bb_n, p)
                .map_err(|e| Error::domain(format!("Binomial({bb_n}, {p}) unavailable: {e}")))?;
            rng.sample(binom)
        };
        let a = a_tilde as f64 / 100.0;
        let b = a + window;
        for (j, &t) in sample.grid.points().iter().enumerate() {
            let inside = t >= a - EDGE_TOL && t <= b + EDGE_TOL;
            out.mask[(i, j)] = sample.mask[(i, j)] && inside;
        }
    }
    Ok(out)
}
