//! Estimation and threshold pipelines shared by the subcommands.

use anyhow::{bail, Result};
use ffband::estimators::{
    cov_estimate, frag_cov, frag_mean, mean_estimate, tau_hat_deriv, tau_hat_diag,
    two_sample_pooled,
};
use ffband::{
    equidistant_knots, fair_threshold, kac_rice_threshold, DesignKind, DiagonalCovInfo,
    EllipticalFamily, FamilyKind, FunctionalSample, TauStencil, ThresholdFunction, ThresholdKind,
    Sided,
};

/// Roughness stencil for fragmentary covariance estimates: a wide diagonal
/// lag smooths the extra noise of pairwise-complete covariances.
pub const FRAG_STENCIL: TauStencil = TauStencil::Extended(5.5);

/// Point estimate plus everything a band needs: diagonal covariance
/// information, residual degrees of freedom, and the sampling-design tag.
pub struct Estimate {
    pub theta_hat: Vec<f64>,
    pub diag: DiagonalCovInfo,
    pub dof: f64,
    pub design: DesignKind,
}

/// One-sample pipeline. Fully observed samples use the derivative roughness
/// estimator and a common local sample size n; fragmentary samples use
/// pairwise-complete moments, the diagonal-lag roughness stencil, per-point
/// local sample sizes, and the worst-case degrees of freedom.
pub fn estimate_one(sample: &FunctionalSample) -> Result<Estimate> {
    sample.validate()?;
    let m = sample.m();
    if sample.is_fully_observed() {
        if sample.n() < 2 {
            bail!("need at least two curves to estimate a variance");
        }
        let theta_hat = mean_estimate(sample)?;
        let cov = cov_estimate(sample)?;
        let var_diag: Vec<f64> = (0..m).map(|j| cov[(j, j)]).collect();
        let tau = tau_hat_deriv(sample)?;
        let n = sample.n() as f64;
        let diag = DiagonalCovInfo::new(sample.grid.clone(), var_diag, tau, vec![n; m])?;
        Ok(Estimate {
            theta_hat,
            diag,
            dof: n - 1.0,
            design: DesignKind::Full,
        })
    } else {
        let counts = sample.counts_per_point();
        if let Some(j) = counts.iter().position(|&c| c < 2) {
            bail!(
                "grid row {} (t = {}) is observed by {} curve(s); every grid point needs at \
                 least two observations for a fragmentary band",
                j + 2,
                sample.grid.points()[j],
                counts[j]
            );
        }
        let theta_hat = frag_mean(sample)?;
        let ce = frag_cov(sample)?;
        let var_diag: Vec<f64> = (0..m).map(|j| ce.matrix[(j, j)]).collect();
        let tau = tau_hat_diag(&ce.matrix, &sample.grid, FRAG_STENCIL)?;
        let n_local: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let dof = counts.iter().copied().min().unwrap_or(0) as f64 - 1.0;
        let diag = DiagonalCovInfo::new(sample.grid.clone(), var_diag, tau, n_local)?;
        Ok(Estimate {
            theta_hat,
            diag,
            dof,
            design: DesignKind::Fragment,
        })
    }
}

/// Two-sample pipeline: band for the difference of the group mean curves,
/// with pooled covariance. The roughness stencil follows the observation
/// design of the two files.
pub fn estimate_two(a: &FunctionalSample, b: &FunctionalSample) -> Result<Estimate> {
    let stencil = if a.is_fully_observed() && b.is_fully_observed() {
        TauStencil::Refined
    } else {
        FRAG_STENCIL
    };
    let est = two_sample_pooled(a, b, stencil)?;
    Ok(Estimate {
        theta_hat: est.diff_mean,
        diag: est.info,
        dof: est.dof,
        design: DesignKind::TwoSample,
    })
}

/// Calibration family for a method: the Gaussian limit or a Student-t family
/// at the estimate's residual degrees of freedom.
pub fn family_for(kind: FamilyKind, dof: f64) -> Result<EllipticalFamily> {
    let family = match kind {
        FamilyKind::Gaussian => EllipticalFamily::gaussian(1.0)?,
        FamilyKind::StudentT => EllipticalFamily::student_t(dof)?,
    };
    Ok(family)
}

/// Equidistant knots for a positive number of cells.
pub fn checked_knots(cells: usize) -> Result<Vec<f64>> {
    if cells == 0 {
        bail!("--knots must be at least 1");
    }
    Ok(equidistant_knots(cells))
}

/// Index of `t0` among the threshold knots, or an input error listing the
/// admissible anchors.
pub fn knot_index(knots: &[f64], t0: f64) -> Result<usize> {
    match knots.iter().position(|&k| (k - t0).abs() <= 1e-9) {
        Some(idx) => Ok(idx),
        None => bail!(
            "--t0 {} is not one of the {} equidistant knots {:?}",
            t0,
            knots.len(),
            knots
        ),
    }
}

/// Trapezoid rule on a tabulated function (for the L1 roughness norm).
pub fn trapezoid(ts: &[f64], values: &[f64]) -> f64 {
    ts.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Solve the threshold for a method choice on an estimate: constant
/// Kac-Rice, or the fair piecewise-linear threshold anchored at `t0`.
pub fn threshold_for(
    threshold: ThresholdKind,
    family: &EllipticalFamily,
    est: &Estimate,
    alpha: f64,
    cells: usize,
    t0: f64,
    sided: Sided,
) -> Result<ThresholdFunction> {
    match threshold {
        ThresholdKind::KacRice => {
            let tau_l1 = trapezoid(est.diag.grid.points(), &est.diag.tau);
            let u = kac_rice_threshold(tau_l1, family, alpha, sided)?;
            Ok(ThresholdFunction::constant(u)?)
        }
        ThresholdKind::Fair => {
            let knots = checked_knots(cells)?;
            let t0_idx = knot_index(&knots, t0)?;
            Ok(fair_threshold(
                &est.diag.grid,
                &est.diag.tau,
                family,
                alpha,
                &knots,
                t0_idx,
                sided,
            )?)
        }
    }
}
