//! Mean, covariance, roughness, fragment, and two-sample estimators feeding
//! band construction.
//!
//! The fragment estimators average over observation indicators; their
//! accumulation kernels are shared with the fully-observed estimators, so the
//! latter are the exact special case of an all-true mask (bitwise, not just up
//! to roundoff). Covariance cells with fewer than two joint observations are
//! encoded as NaN alongside a pair-count matrix — never silently zeroed.
//!
//! The roughness parameter τ(t)² = ∂₁₂c(t, t) of the normalized covariance is
//! estimated from near-diagonal second differences; see [`TauStencil`] for the
//! available stencils and their trade-offs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::process::{FunctionalSample, Grid};

/// Lower clamp for estimated roughness: flat or degenerate stretches would
/// otherwise give τ = 0 and break the crossing-rate integrals, which require
/// τ(t) > 0.
pub const TAU_MIN: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Mean and covariance
// ---------------------------------------------------------------------------

/// Pointwise average over observed entries; NaN where nothing is observed.
fn masked_mean(sample: &FunctionalSample) -> (Vec<f64>, Vec<usize>) {
    let (n, m) = (sample.n(), sample.m());
    let mut acc = vec![0.0_f64; m];
    let mut cnt = vec![0usize; m];
    for i in 0..n {
        for j in 0..m {
            if sample.mask[(i, j)] {
                acc[j] += sample.curves[(i, j)];
                cnt[j] += 1;
            }
        }
    }
    let mean = acc
        .iter()
        .zip(&cnt)
        .map(|(&a, &c)| if c > 0 { a / c as f64 } else { f64::NAN })
        .collect();
    (mean, cnt)
}

/// Pairwise covariance over joint observations around a given mean curve;
/// cells with fewer than two joint observations are NaN.
fn masked_cov(sample: &FunctionalSample, mean: &[f64]) -> CovEstimate {
    let (n, m) = (sample.n(), sample.m());
    let mut acc: DMatrix<f64> = DMatrix::zeros(m, m);
    let mut cnt = DMatrix::from_element(m, m, 0usize);
    let mut resid = vec![0.0_f64; m];
    for i in 0..n {
        let (lo, hi) = match sample.observed_range(i) {
            Some(r) => r,
            None => continue,
        };
        for j in lo..=hi {
            resid[j] = sample.curves[(i, j)] - mean[j];
        }
        for j in lo..=hi {
            let rj = resid[j];
            for k in j..=hi {
                acc[(j, k)] += rj * resid[k];
                cnt[(j, k)] += 1;
            }
        }
    }
    let mut cov = DMatrix::from_element(m, m, f64::NAN);
    for j in 0..m {
        for k in j..m {
            let c = cnt[(j, k)];
            if c >= 2 {
                let v = acc[(j, k)] / (c as f64 - 1.0);
                cov[(j, k)] = v;
                cov[(k, j)] = v;
            }
            cnt[(k, j)] = c;
        }
    }
    CovEstimate {
        matrix: cov,
        pair_counts: cnt,
    }
}

/// Covariance estimate with per-cell joint observation counts; cells with
/// fewer than two joint observations hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub pair_counts: DMatrix<usize>,
}

/// Sample mean curve of a fully observed sample.
pub fn mean_estimate(sample: &FunctionalSample) -> Result<Vec<f64>> {
    sample.validate()?;
    if !sample.is_fully_observed() {
        return Err(Error::input(
            "mean_estimate requires a fully observed sample; use frag_mean",
        ));
    }
    Ok(masked_mean(sample).0)
}

/// Sample covariance (1/(n−1) normalization) of a fully observed sample.
pub fn cov_estimate(sample: &FunctionalSample) -> Result<DMatrix<f64>> {
    sample.validate()?;
    if !sample.is_fully_observed() {
        return Err(Error::input(
            "cov_estimate requires a fully observed sample; use frag_cov",
        ));
    }
    if sample.n() < 2 {
        return Err(Error::input("covariance needs at least two curves"));
    }
    let (mean, _) = masked_mean(sample);
    Ok(masked_cov(sample, &mean).matrix)
}

/// Pointwise average over the curves observing each grid point.
///
/// Points observed by no curve come back as NaN (encoded, not thrown).
pub fn frag_mean(sample: &FunctionalSample) -> Result<Vec<f64>> {
    if sample.grid.len() != sample.m() || sample.mask.nrows() != sample.n() {
        return Err(Error::input("sample shapes are inconsistent"));
    }
    Ok(masked_mean(sample).0)
}

/// Pairwise covariance over jointly observing curves, with counts.
///
/// Exactly reduces to [`cov_estimate`] when the mask is all-true, because both
/// run the same accumulation kernel.
pub fn frag_cov(sample: &FunctionalSample) -> Result<CovEstimate> {
    if sample.grid.len() != sample.m() || sample.mask.nrows() != sample.n() {
        return Err(Error::input("sample shapes are inconsistent"));
    }
    let (mean, _) = masked_mean(sample);
    Ok(masked_cov(sample, &mean))
}

// ---------------------------------------------------------------------------
// Roughness estimation
// ---------------------------------------------------------------------------

/// Near-diagonal second-difference stencils for τ(t)² = ∂₁₂c(t, t).
///
/// With g_L(t) = 1 − (average normalized correlation at lag L across t), the
/// family combines up to three lags as τ̂² = (a·g₁ + b·g₂ + c·g₃)/h²:
///
/// * `Plain`: the two-point antidiagonal difference (1 − ĉ(t−h, t+h))/(2h²).
///   Simplest, but carries an O(h) bias for kernels with a |d|³ term in their
///   expansion (e.g. Matérn with smoothness 3/2).
/// * `Refined` (default): Richardson combination (8g₁ − g₂)/(2h²) of lags one
///   and two; cancels the |d|³ term, leaving O(h²) error on smooth kernels.
/// * `Extended(mix)`: three-lag combination with coefficients
///   a = 3·mix − 5, b = (8 − 3·mix)/2, c = (mix − 3)/3. Every member is
///   exact through the |d|³ term; `mix` tunes the response to the small
///   kink that covariance estimates from windowed fragments acquire on the
///   diagonal. `Extended(3.0)` coincides with `Refined`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TauStencil {
    Plain,
    Refined,
    Extended(f64),
}

impl Default for TauStencil {
    fn default() -> Self {
        TauStencil::Refined
    }
}

impl TauStencil {
    /// Coefficients (a, b, c) on the lag aggregates (g₁, g₂, g₃).
    fn coefficients(self) -> (f64, f64, f64) {
        match self {
            TauStencil::Plain => (0.0, 0.5, 0.0),
            TauStencil::Refined => TauStencil::Extended(3.0).coefficients(),
            TauStencil::Extended(mix) => {
                (3.0 * mix - 5.0, (8.0 - 3.0 * mix) / 2.0, (mix - 3.0) / 3.0)
            }
        }
    }
}

/// Roughness estimate from the near-diagonal entries of a covariance matrix
/// (NaN-coded cells allowed away from the needed band).
///
/// The covariance is normalized to unit diagonal, the stencil is applied at
/// interior points, endpoints copy the nearest interior value, and the result
/// is clamped below at [`TAU_MIN`]. Requires an equidistant grid and a
/// strictly positive diagonal; returns an input error if a needed
/// near-diagonal cell is missing.
pub fn tau_hat_diag(cov: &DMatrix<f64>, grid: &Grid, stencil: TauStencil) -> Result<Vec<f64>> {
    let m = grid.len();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::input(format!(
            "covariance is {}x{} but grid has {} points",
            cov.nrows(),
            cov.ncols(),
            m
        )));
    }
    let h = grid
        .uniform_step()
        .ok_or_else(|| Error::input("tau_hat_diag requires an equidistant grid"))?;
    let diag: Vec<f64> = (0..m).map(|j| cov[(j, j)]).collect();
    if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(Error::input(
            "tau_hat_diag requires a strictly positive covariance diagonal",
        ));
    }
    let sd: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
    let corr_at = |j: usize, k: usize| cov[(j, k)] / (sd[j] * sd[k]);
    let (a, b, c) = stencil.coefficients();

    // Lag aggregates g₁, g₂ at interior points 1..m−1, g₃ at 2..m−2 with its
    // own nearest-interior copies, then shared endpoint copies — mirroring the
    // reference layout so every stencil sees identical inputs.
    let mut g1 = vec![f64::NAN; m];
    let mut g2 = vec![f64::NAN; m];
    let mut g3 = vec![f64::NAN; m];
    for i in 1..m - 1 {
        g1[i] = 1.0 - 0.5 * (corr_at(i - 1, i) + corr_at(i, i + 1));
        g2[i] = 1.0 - corr_at(i - 1, i + 1);
    }
    if c != 0.0 {
        if m < 5 {
            return Err(Error::input(
                "three-lag stencil needs at least 5 grid points",
            ));
        }
        for i in 2..m - 2 {
            g3[i] = 1.0 - 0.5 * (corr_at(i - 2, i + 1) + corr_at(i - 1, i + 2));
        }
        g3[1] = g3[2];
        g3[m - 2] = g3[m - 3];
    }
    for g in [&mut g1, &mut g2, &mut g3] {
        g[0] = g[1];
        g[m - 1] = g[m - 2];
    }

    let mut tau = vec![0.0_f64; m];
    for i in 0..m {
        let combined = if c != 0.0 {
            a * g1[i] + b * g2[i] + c * g3[i]
        } else if a != 0.0 {
            a * g1[i] + b * g2[i]
        } else {
            b * g2[i]
        };
        if !combined.is_finite() {
            return Err(Error::input(format!(
                "covariance band too sparse for the stencil near grid index {i}"
            )));
        }
        let tau_sq = combined / (h * h);
        tau[i] = if tau_sq > TAU_MIN * TAU_MIN {
            tau_sq.sqrt()
        } else {
            TAU_MIN
        };
    }
    Ok(tau)
}

/// Roughness estimate from standardized, differentiated sample curves.
///
/// Standardizes each curve by the pointwise sample standard deviation,
/// differentiates by central differences (one-sided at the grid edges), and
/// returns the pointwise sample standard deviation of the derivatives,
/// clamped below at [`TAU_MIN`]. Grid points with zero sample variance have
/// no standardized value and inherit the nearest defined column, so
/// degenerate points do not leak spurious roughness into the differences.
///
/// Requires a fully observed sample; for fragments use [`tau_hat_diag`] on
/// [`frag_cov`].
pub fn tau_hat_deriv(sample: &FunctionalSample) -> Result<Vec<f64>> {
    sample.validate()?;
    if !sample.is_fully_observed() {
        return Err(Error::input(
            "tau_hat_deriv requires fully observed curves; use tau_hat_diag on frag_cov for fragments",
        ));
    }
    let (n, m) = (sample.n(), sample.m());
    if n < 2 {
        return Err(Error::input("tau_hat_deriv needs at least two curves"));
    }
    let h = sample
        .grid
        .uniform_step()
        .ok_or_else(|| Error::input("tau_hat_deriv requires an equidistant grid"))?;
    let (mean, _) = masked_mean(sample);
    let mut var = vec![0.0_f64; m];
    for j in 0..m {
        let mut acc = 0.0;
        for i in 0..n {
            let r = sample.curves[(i, j)] - mean[j];
            acc += r * r;
        }
        var[j] = acc / (n as f64 - 1.0);
    }
    let valid: Vec<bool> = var.iter().map(|&v| v.is_finite() && v > 0.0).collect();
    let nearest_valid: Vec<Option<usize>> = (0..m)
        .map(|j| {
            (0..m)
                .filter(|&k| valid[k])
                .min_by_key(|&k| (k as isize - j as isize).unsigned_abs())
        })
        .collect();

    // Standardized curves, degenerate columns inheriting the nearest defined
    // one (all-zero if the whole sample is degenerate).
    let mut std_curves = DMatrix::zeros(n, m);
    for j in 0..m {
        match nearest_valid[j] {
            Some(k) => {
                let s = var[k].sqrt();
                for i in 0..n {
                    std_curves[(i, j)] = (sample.curves[(i, k)] - mean[k]) / s;
                }
            }
            None => {
                for i in 0..n {
                    std_curves[(i, j)] = 0.0;
                }
            }
        }
    }

    let mut tau = vec![0.0_f64; m];
    let mut deriv = vec![0.0_f64; n];
    for j in 0..m {
        for i in 0..n {
            deriv[i] = if j == 0 {
                (std_curves[(i, 1)] - std_curves[(i, 0)]) / h
            } else if j == m - 1 {
                (std_curves[(i, m - 1)] - std_curves[(i, m - 2)]) / h
            } else {
                (std_curves[(i, j + 1)] - std_curves[(i, j - 1)]) / (2.0 * h)
            };
        }
        let mu = deriv.iter().sum::<f64>() / n as f64;
        let v = deriv.iter().map(|&d| (d - mu) * (d - mu)).sum::<f64>() / (n as f64 - 1.0);
        tau[j] = if v > TAU_MIN * TAU_MIN { v.sqrt() } else { TAU_MIN };
    }
    Ok(tau)
}

// ---------------------------------------------------------------------------
// Diagonal summary and two-sample pooling
// ---------------------------------------------------------------------------

/// Per-point inputs to band construction: estimator variance, roughness, and
/// effective local sample size on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalCovInfo {
    pub grid: Grid,
    /// Pointwise variance c(t, t) of a single curve around the mean.
    pub var_diag: Vec<f64>,
    /// Roughness τ(t) of the normalized covariance, strictly positive.
    pub tau: Vec<f64>,
    /// Effective number of curves behind the estimate at each point; the band
    /// half-width scales with √(var_diag/n_local).
    pub n_local: Vec<f64>,
}

impl DiagonalCovInfo {
    /// Validated constructor.
    pub fn new(grid: Grid, var_diag: Vec<f64>, tau: Vec<f64>, n_local: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if var_diag.len() != m || tau.len() != m || n_local.len() != m {
            return Err(Error::input(
                "var_diag, tau, and n_local must all match the grid length",
            ));
        }
        if var_diag.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input("var_diag must be finite and positive"));
        }
        if tau.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::input("tau must be finite and positive"));
        }
        if n_local.iter().any(|v| !(v.is_finite() && *v >= 2.0)) {
            return Err(Error::input("n_local must be at least 2 everywhere"));
        }
        Ok(Self {
            grid,
            var_diag,
            tau,
            n_local,
        })
    }

    /// Pointwise standard error √(var_diag/n_local).
    pub fn standard_error(&self) -> Vec<f64> {
        self.var_diag
            .iter()
            .zip(&self.n_local)
            .map(|(&v, &n)| (v / n).sqrt())
            .collect()
    }
}

/// Difference estimate for two independent samples on a shared grid.
#[derive(Clone, Debug)]
pub struct TwoSampleEstimate {
    /// Pointwise difference of the group mean curves (first minus second).
    pub diff_mean: Vec<f64>,
    /// Pooled diagonal information; `n_local` is the harmonic combination
    /// 1/(1/n_t^A + 1/n_t^B), so var_diag/n_local is the variance of the
    /// difference.
    pub info: DiagonalCovInfo,
    /// Degrees of freedom min_t(n_t^A + n_t^B) − 2 for t-calibrated bands.
    pub dof: f64,
}

/// Pool two (possibly fragmentary) samples: difference of means, pooled
/// covariance weighted by per-cell joint counts, and roughness from the
/// pooled normalized covariance.
///
/// Every grid point must be observed by at least two curves in each sample.
pub fn two_sample_pooled(
    a: &FunctionalSample,
    b: &FunctionalSample,
    stencil: TauStencil,
) -> Result<TwoSampleEstimate> {
    a.validate()?;
    b.validate()?;
    if a.grid != b.grid {
        return Err(Error::input("two-sample pooling requires a shared grid"));
    }
    let m = a.m();
    let mean_a = frag_mean(a)?;
    let mean_b = frag_mean(b)?;
    let cov_a = frag_cov(a)?;
    let cov_b = frag_cov(b)?;
    for j in 0..m {
        if cov_a.pair_counts[(j, j)] < 2 || cov_b.pair_counts[(j, j)] < 2 {
            return Err(Error::input(format!(
                "two-sample pooling needs at least two observations per group at every point; grid index {j} is short"
            )));
        }
    }
    let mut pooled = DMatrix::from_element(m, m, f64::NAN);
    for j in 0..m {
        for k in j..m {
            let na = cov_a.pair_counts[(j, k)];
            let nb = cov_b.pair_counts[(j, k)];
            if na >= 2 && nb >= 2 {
                let va = cov_a.matrix[(j, k)];
                let vb = cov_b.matrix[(j, k)];
                let v = ((na as f64 - 1.0) * va + (nb as f64 - 1.0) * vb)
                    / (na as f64 + nb as f64 - 2.0);
                pooled[(j, k)] = v;
                pooled[(k, j)] = v;
            }
        }
    }
    let tau = tau_hat_diag(&pooled, &a.grid, stencil)?;
    let mut diff = vec![0.0_f64; m];
    let mut var_diag = vec![0.0_f64; m];
    let mut n_local = vec![0.0_f64; m];
    let mut dof = f64::INFINITY;
    for j in 0..m {
        diff[j] = mean_a[j] - mean_b[j];
        var_diag[j] = pooled[(j, j)];
        let na = cov_a.pair_counts[(j, j)] as f64;
        let nb = cov_b.pair_counts[(j, j)] as f64;
        n_local[j] = 1.0 / (1.0 / na + 1.0 / nb);
        dof = dof.min(na + nb - 2.0);
    }
    let info = DiagonalCovInfo::new(a.grid.clone(), var_diag, tau, n_local)?;
    Ok(TwoSampleEstimate {
        diff_mean: diff,
        info,
        dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{fragmentize, sample_gp, CovarianceModel};
    use approx::assert_abs_diff_eq;

    fn constant_sample(values: &[f64], m: usize) -> FunctionalSample {
        let grid = Grid::uniform(m).unwrap();
        let n = values.len();
        let mut curves = DMatrix::zeros(n, m);
        for (i, &v) in values.iter().enumerate() {
            for j in 0..m {
                curves[(i, j)] = v;
            }
        }
        FunctionalSample {
            grid,
            curves,
            mask: DMatrix::from_element(n, m, true),
        }
    }

    #[test]
    fn mean_and_cov_hand_arithmetic() {
        let sample = constant_sample(&[0.0, 2.0], 5);
        let mean = mean_estimate(&sample).unwrap();
        assert!(mean.iter().all(|&v| v == 1.0));
        let cov = cov_estimate(&sample).unwrap();
        assert!(cov.iter().all(|&v| v == 2.0));

        let same = constant_sample(&[1.3, 1.3, 1.3], 5);
        let cov = cov_estimate(&same).unwrap();
        assert!(cov.iter().all(|&v| v == 0.0));

        let single = constant_sample(&[1.0], 5);
        assert!(cov_estimate(&single).is_err());
    }

    #[test]
    fn full_estimators_reject_fragments() {
        let grid = Grid::uniform(21).unwrap();
        let sample = sample_gp(&vec![0.0; 21], &CovarianceModel::matern(0.25, 1.5).unwrap(), &grid, 10, 3).unwrap();
        let frag = fragmentize(&sample, 0.5, 30, 0.3, 0.3, 4).unwrap();
        assert!(mean_estimate(&frag).is_err());
        assert!(cov_estimate(&frag).is_err());
        assert!(tau_hat_deriv(&frag).is_err());
    }

    #[test]
    fn cov_diagonal_is_accurate_at_large_n() {
        let grid = Grid::uniform(101).unwrap();
        let cov_model = CovarianceModel::matern(0.25, 1.5).unwrap();
        let sample = sample_gp(&vec![0.0; 101], &cov_model, &grid, 5000, 909).unwrap();
        let cov = cov_estimate(&sample).unwrap();
        for j in 0..101 {
            assert!(
                (cov[(j, j)] / 0.0625 - 1.0).abs() < 0.10,
                "diagonal off at {j}: {}",
                cov[(j, j)]
            );
        }
    }

    #[test]
    fn frag_estimators_reduce_bitwise_on_full_masks() {
        let grid = Grid::uniform(31).unwrap();
        let cov_model = CovarianceModel::matern(0.25, 0.5).unwrap();
        let sample = sample_gp(&vec![1.0; 31], &cov_model, &grid, 40, 17).unwrap();
        let mean_full = mean_estimate(&sample).unwrap();
        let mean_frag = frag_mean(&sample).unwrap();
        assert_eq!(mean_full, mean_frag);
        let cov_full = cov_estimate(&sample).unwrap();
        let cov_frag = frag_cov(&sample).unwrap();
        assert_eq!(cov_full, cov_frag.matrix);
        assert!(cov_frag.pair_counts.iter().all(|&c| c == 40));
    }

    #[test]
    fn frag_cov_is_banded_for_windowed_fragments() {
        let grid = Grid::uniform(101).unwrap();
        let cov_model = CovarianceModel::matern(0.25, 1.5).unwrap();
        let sample = sample_gp(&vec![0.0; 101], &cov_model, &grid, 500, 21).unwrap();
        let frag = fragmentize(&sample, 0.4, 60, 0.3, 0.3, 22).unwrap();
        let est = frag_cov(&frag).unwrap();
        for j in 0..101usize {
            for k in 0..101usize {
                if k.abs_diff(j) > 40 {
                    assert!(est.matrix[(j, k)].is_nan());
                    assert_eq!(est.pair_counts[(j, k)], 0);
                }
                if k.abs_diff(j) <= 3 {
                    assert!(est.matrix[(j, k)].is_finite());
                    assert!(est.pair_counts[(j, k)] >= 2);
                }
            }
        }
    }

    #[test]
    fn frag_mean_with_single_observer_returns_that_curve() {
        let grid = Grid::uniform(5).unwrap();
        let mut curves = DMatrix::zeros(2, 5);
        let mut mask = DMatrix::from_element(2, 5, false);
        for j in 0..5 {
            curves[(0, j)] = 10.0 + j as f64;
            mask[(0, j)] = true;
        }
        for j in 2..5 {
            curves[(1, j)] = -5.0;
            mask[(1, j)] = true;
        }
        let sample = FunctionalSample {
            grid,
            curves,
            mask,
        };
        let mean = frag_mean(&sample).unwrap();
        assert_eq!(mean[0], 10.0);
        assert_eq!(mean[1], 11.0);
        assert_eq!(mean[2], 0.5 * (12.0 - 5.0));
    }

    #[test]
    fn tau_recovers_the_frequency_of_a_cosine_kernel() {
        let grid = Grid::uniform(101).unwrap();
        let pts = grid.points();
        let m = pts.len();
        let omega = 3.0;
        let mut cov = DMatrix::zeros(m, m);
        for j in 0..m {
            for k in 0..m {
                cov[(j, k)] = (omega * (pts[j] - pts[k])).cos();
            }
        }
        let h = 0.01;
        for stencil in [TauStencil::Plain, TauStencil::Refined] {
            let tau = tau_hat_diag(&cov, &grid, stencil).unwrap();
            for (i, &t) in tau.iter().enumerate() {
                assert!(
                    (t / omega - 1.0).abs() < 2.0 * h * h,
                    "{stencil:?} at {i}: {t}"
                );
            }
        }
        // Three-lag members stay O(h²) but with a larger constant
        // (11/48·(ωh)² at mix = 5.5 versus (ωh)²/12 for Refined).
        let tau = tau_hat_diag(&cov, &grid, TauStencil::Extended(5.5)).unwrap();
        for &t in &tau {
            assert!((t / omega - 1.0).abs() < 3.0 * h * h);
        }
    }

    #[test]
    fn tau_matches_the_matern_roughness_with_the_refined_stencil() {
        let grid = Grid::uniform(101).unwrap();
        let cov = CovarianceModel::matern(0.25, 1.5).unwrap().matrix(&grid);
        let tau = tau_hat_diag(&cov, &grid, TauStencil::Refined).unwrap();
        let target = 3.0_f64.sqrt();
        for (i, &t) in tau.iter().enumerate() {
            assert!((t - target).abs() < 1e-2, "refined stencil at {i}: {t}");
        }
        // Interior accuracy is far better than the contract.
        for &t in &tau[1..100] {
            assert!((t - target).abs() < 1e-3);
        }
        // The plain stencil carries the |d|³ bias of this kernel — visibly
        // outside the 1e−2 contract, which is why Refined is the default.
        let plain = tau_hat_diag(&cov, &grid, TauStencil::Plain).unwrap();
        assert!((plain[50] - target).abs() > 1.5e-2);
    }

    #[test]
    fn tau_clamps_flat_covariance() {
        let grid = Grid::uniform(21).unwrap();
        let cov = DMatrix::from_element(21, 21, 1.0);
        let tau = tau_hat_diag(&cov, &grid, TauStencil::Refined).unwrap();
        assert!(tau.iter().all(|&t| t == TAU_MIN));
    }

    #[test]
    fn tau_is_invariant_to_pointwise_rescaling() {
        let grid = Grid::uniform(51).unwrap();
        let pts = grid.points();
        let base = CovarianceModel::matern(0.25, 1.5).unwrap().matrix(&grid);
        let mut scaled = base.clone();
        for j in 0..51 {
            for k in 0..51 {
                let g = (1.0 + pts[j]) * (1.0 + pts[k]);
                scaled[(j, k)] *= g;
            }
        }
        let a = tau_hat_diag(&base, &grid, TauStencil::Refined).unwrap();
        let b = tau_hat_diag(&scaled, &grid, TauStencil::Refined).unwrap();
        for j in 0..51 {
            assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn tau_deriv_handles_degenerate_samples() {
        let identical = constant_sample(&[2.0, 2.0, 2.0], 11);
        let tau = tau_hat_deriv(&identical).unwrap();
        assert!(tau.iter().all(|&t| t == TAU_MIN));

        // Curves proportional to t standardize to constants, so the
        // derivative of the standardized process vanishes.
        let grid = Grid::uniform(11).unwrap();
        let mut curves = DMatrix::zeros(3, 11);
        for (i, &b) in [-1.0, 0.5, 2.0].iter().enumerate() {
            for (j, &t) in grid.points().iter().enumerate() {
                curves[(i, j)] = b * t;
            }
        }
        let sample = FunctionalSample {
            grid,
            curves,
            mask: DMatrix::from_element(3, 11, true),
        };
        let tau = tau_hat_deriv(&sample).unwrap();
        assert!(tau.iter().all(|&t| t == TAU_MIN), "{tau:?}");
    }

    #[test]
    fn tau_deriv_agrees_with_tau_diag_on_full_samples() {
        let grid = Grid::uniform(101).unwrap();
        let cov_model = CovarianceModel::matern(0.25, 1.5).unwrap();
        let sample = sample_gp(&vec![0.0; 101], &cov_model, &grid, 500, 31).unwrap();
        let by_deriv = tau_hat_deriv(&sample).unwrap();
        let by_diag = tau_hat_diag(&cov_estimate(&sample).unwrap(), &grid, TauStencil::Refined)
            .unwrap();
        for j in 5..96 {
            assert!(
                (by_deriv[j] / by_diag[j] - 1.0).abs() < 0.10,
                "disagreement at {j}: {} vs {}",
                by_deriv[j],
                by_diag[j]
            );
        }
    }

    #[test]
    fn diagonal_info_validation() {
        let grid = Grid::uniform(5).unwrap();
        let good = DiagonalCovInfo::new(
            grid.clone(),
            vec![1.0; 5],
            vec![0.5; 5],
            vec![10.0; 5],
        )
        .unwrap();
        assert_abs_diff_eq!(good.standard_error()[0], (0.1_f64).sqrt(), epsilon = 1e-15);
        assert!(DiagonalCovInfo::new(grid.clone(), vec![1.0; 4], vec![0.5; 5], vec![10.0; 5]).is_err());
        assert!(DiagonalCovInfo::new(grid.clone(), vec![0.0; 5], vec![0.5; 5], vec![10.0; 5]).is_err());
        assert!(DiagonalCovInfo::new(grid.clone(), vec![1.0; 5], vec![0.0; 5], vec![10.0; 5]).is_err());
        assert!(DiagonalCovInfo::new(grid, vec![1.0; 5], vec![0.5; 5], vec![1.0; 5]).is_err());
    }

    #[test]
    fn two_sample_pooling_identities() {
        let grid = Grid::uniform(31).unwrap();
        let cov_model = CovarianceModel::matern(0.25, 1.5).unwrap();
        let sample = sample_gp(&vec![0.3; 31], &cov_model, &grid, 25, 41).unwrap();
        let est = two_sample_pooled(&sample, &sample, TauStencil::Refined).unwrap();
        assert!(est.diff_mean.iter().all(|&d| d == 0.0));
        // Equal groups: pooled covariance equals either group's covariance.
        let own = cov_estimate(&sample).unwrap();
        for j in 0..31 {
            assert_eq!(est.info.var_diag[j], own[(j, j)]);
            assert_eq!(est.info.n_local[j], 12.5);
        }
        assert_eq!(est.dof, 48.0);
    }

    #[test]
    fn two_sample_pooling_rejects_thin_coverage() {
        let grid = Grid::uniform(21).unwrap();
        let cov_model = CovarianceModel::matern(0.25, 1.5).unwrap();
        let a = sample_gp(&vec![0.0; 21], &cov_model, &grid, 20, 1).unwrap();
        let mut b = sample_gp(&vec![0.0; 21], &cov_model, &grid, 20, 2).unwrap();
        // Leave only one curve observing the first point (masks stay
        // contiguous because only the leading point is dropped).
        for i in 1..20 {
            b.mask[(i, 0)] = false;
        }
        assert!(two_sample_pooled(&a, &b, TauStencil::Refined).is_err());
    }
}
