//! Band assembly: combine a point estimate, diagonal covariance information,
//! and a solved threshold into a simultaneous confidence band, plus the
//! associated global and region-of-interest hypothesis tests.

use serde::Serialize;
use std::fmt;

use crate::error::{Error, Result};
use crate::estimators::DiagonalCovInfo;
use crate::euler::ThresholdFunction;
use crate::process::Grid;
use crate::Sided;

/// Which threshold rule produced a band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    /// Fair piecewise-linear threshold with uniform budget spreading.
    Fair,
    /// Constant Kac-Rice threshold.
    KacRice,
}

/// Which elliptical family calibrated the band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    StudentT,
}

/// Sampling design the estimates came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Fully observed curves, one sample.
    Full,
    /// Fragmentary observation (per-point local sample sizes).
    Fragment,
    /// Difference of two independent samples.
    TwoSample,
}

/// Method tag carried in band metadata, e.g. `FF_t`, `KR_z`, `FF_frag_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct MethodTag {
    pub threshold: ThresholdKind,
    pub family: FamilyKind,
    pub design: DesignKind,
}

impl MethodTag {
    pub const FF_Z: Self = Self::new(ThresholdKind::Fair, FamilyKind::Gaussian);
    pub const FF_T: Self = Self::new(ThresholdKind::Fair, FamilyKind::StudentT);
    pub const KR_Z: Self = Self::new(ThresholdKind::KacRice, FamilyKind::Gaussian);
    pub const KR_T: Self = Self::new(ThresholdKind::KacRice, FamilyKind::StudentT);

    pub const fn new(threshold: ThresholdKind, family: FamilyKind) -> Self {
        MethodTag {
            threshold,
            family,
            design: DesignKind::Full,
        }
    }

    /// Same threshold/family with a different sampling design.
    pub const fn with_design(mut self, design: DesignKind) -> Self {
        self.design = design;
        self
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let th = match self.threshold {
            ThresholdKind::Fair => "FF",
            ThresholdKind::KacRice => "KR",
        };
        let design = match self.design {
            DesignKind::Full => "",
            DesignKind::Fragment => "_frag",
            DesignKind::TwoSample => "_2s",
        };
        let fam = match self.family {
            FamilyKind::Gaussian => "z",
            FamilyKind::StudentT => "t",
        };
        write!(f, "{th}{design}_{fam}")
    }
}

/// Nominal error level guaranteed on the sub-interval [a, b] anchored at t₀:
/// `p_t0 + a_star·(b − a)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoiBudgetEntry {
    pub a: f64,
    pub b: f64,
    pub nominal_level: f64,
}

/// A simultaneous confidence band `[θ̂(t) ∓ u(t)·se(t)]` on a grid.
///
/// For one-sided (upper) bands the lower limit is `-∞`. `roi_budget` holds
/// the interval-wise nominal levels `[0, t₀]` and `[t₀, 1]` implied by the
/// fair construction; it is empty for constant (Kac-Rice) thresholds, which
/// carry no interval-wise guarantee.
#[derive(Clone, Debug, Serialize)]
pub struct Band {
    pub grid: Grid,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Threshold values tabulated on the grid.
    pub u: Vec<f64>,
    /// Standard errors √(var_diag/n_local) tabulated on the grid.
    pub se: Vec<f64>,
    pub alpha: f64,
    pub method: MethodTag,
    pub sided: Sided,
    pub threshold: ThresholdFunction,
    pub roi_budget: Vec<RoiBudgetEntry>,
}

/// Assemble a band from a point estimate, diagonal covariance information,
/// and a solved threshold.
///
/// Limits are `θ̂ ∓ u(t)·√(var_diag(t)/n_local(t))`; one-sided bands keep the
/// lower limit and replace the upper limit by `+∞`, so they reject exactly
/// when the estimate exceeds the hypothesized curve by more than `u·se`
/// somewhere — the same upper-excursion event the one-sided threshold
/// calibrates and [`pvalue_function`](crate::pvalue_function) inverts.
/// Errors: estimate not tabulated on the
/// information grid, or a threshold that dips to zero or below somewhere
/// (the band would be empty there — the error level is too large for a
/// meaningful band).
pub fn build_band(
    theta_hat: &[f64],
    diag: &DiagonalCovInfo,
    threshold: &ThresholdFunction,
    alpha: f64,
    method: MethodTag,
    sided: Sided,
) -> Result<Band> {
    let m = diag.grid.len();
    if theta_hat.len() != m {
        return Err(Error::input(
            "estimate must be tabulated on the covariance-information grid",
        ));
    }
    if threshold.min_value() <= 0.0 {
        return Err(Error::domain(
            "threshold is nonpositive somewhere: error level too large for a meaningful band",
        ));
    }
    let u = threshold.eval_on_grid(&diag.grid);
    let se = diag.standard_error();
    let lower: Vec<f64> = (0..m).map(|j| theta_hat[j] - u[j] * se[j]).collect();
    let upper: Vec<f64> = match sided {
        Sided::Two => (0..m).map(|j| theta_hat[j] + u[j] * se[j]).collect(),
        Sided::One => vec![f64::INFINITY; m],
    };
    let roi_budget = match (threshold.p_t0, threshold.a_star) {
        (Some(p), Some(a)) => {
            let t0 = threshold.t0();
            vec![
                RoiBudgetEntry {
                    a: 0.0,
                    b: t0,
                    nominal_level: p + a * t0,
                },
                RoiBudgetEntry {
                    a: t0,
                    b: 1.0,
                    nominal_level: p + a * (1.0 - t0),
                },
            ]
        }
        _ => Vec::new(),
    };
    Ok(Band {
        grid: diag.grid.clone(),
        center: theta_hat.to_vec(),
        lower,
        upper,
        u,
        se,
        alpha,
        method,
        sided,
        threshold: threshold.clone(),
        roi_budget,
    })
}

/// Result of the global coverage test: reject when the hypothesized curve
/// leaves the band anywhere, with the offending grid indices reported.
#[derive(Clone, Debug, Serialize)]
pub struct CoverageTest {
    pub reject: bool,
    pub exceed_set: Vec<usize>,
}

/// Global test of `H₀: θ = θ₀`: reject iff θ₀(t) falls outside
/// `[lower(t), upper(t)]` at one or more grid points.
pub fn test_covers(band: &Band, theta0: &[f64]) -> Result<CoverageTest> {
    if theta0.len() != band.grid.len() {
        return Err(Error::input(
            "hypothesized curve must be tabulated on the band grid",
        ));
    }
    let exceed_set: Vec<usize> = (0..theta0.len())
        .filter(|&j| theta0[j] < band.lower[j] || theta0[j] > band.upper[j])
        .collect();
    Ok(CoverageTest {
        reject: !exceed_set.is_empty(),
        exceed_set,
    })
}

/// Result of a region-of-interest test, carrying the nominal error level
/// guaranteed on the region by the fair construction.
#[derive(Clone, Debug, Serialize)]
pub struct RoiTest {
    pub reject: bool,
    pub exceed_set: Vec<usize>,
    pub nominal_level: f64,
}

fn is_knot(threshold: &ThresholdFunction, x: f64) -> bool {
    threshold.knots().iter().any(|&k| (k - x).abs() <= 1e-12)
}

/// Region-of-interest test: rejection restricted to grid points in `[a, b]`,
/// with nominal level `p_t0 + a_star·(b − a)`.
///
/// The interval-wise guarantee of the fair construction only covers regions
/// anchored at t₀ whose endpoints are threshold knots, so `roi` must satisfy
/// t₀ ∈ {a, b} with both endpoints knots; the band must come from a fair
/// threshold (constant Kac-Rice bands carry no such guarantee).
pub fn roi_test(band: &Band, theta0: &[f64], roi: (f64, f64)) -> Result<RoiTest> {
    if theta0.len() != band.grid.len() {
        return Err(Error::input(
            "hypothesized curve must be tabulated on the band grid",
        ));
    }
    let (a, b) = roi;
    if !(a < b) {
        return Err(Error::input("region of interest must satisfy a < b"));
    }
    let (p_t0, a_star) = match (band.threshold.p_t0, band.threshold.a_star) {
        (Some(p), Some(s)) => (p, s),
        _ => {
            return Err(Error::input(
                "region-of-interest accounting requires a fair threshold band",
            ))
        }
    };
    let t0 = band.threshold.t0();
    if (a - t0).abs() > 1e-12 && (b - t0).abs() > 1e-12 {
        return Err(Error::input(
            "region of interest must be anchored at t0 (t0 must be one of its endpoints)",
        ));
    }
    if !is_knot(&band.threshold, a) || !is_knot(&band.threshold, b) {
        return Err(Error::input(
            "region-of-interest endpoints must be threshold knots",
        ));
    }
    let exceed_set: Vec<usize> = band
        .grid
        .points()
        .iter()
        .enumerate()
        .filter(|&(j, &t)| {
            t >= a - 1e-12
                && t <= b + 1e-12
                && (theta0[j] < band.lower[j] || theta0[j] > band.upper[j])
        })
        .map(|(j, _)| j)
        .collect();
    Ok(RoiTest {
        reject: !exceed_set.is_empty(),
        exceed_set,
        nominal_level: p_t0 + a_star * (b - a),
    })
}

impl Band {
    /// Band width `upper − lower` per grid point; infinite for one-sided
    /// bands.
    pub fn widths(&self) -> Vec<f64> {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(&hi, &lo)| hi - lo)
            .collect()
    }

    /// Width averaged over the grid (trapezoid rule on [0, 1]).
    pub fn average_width(&self) -> f64 {
        crate::quad::trapezoid(self.grid.points(), &self.widths())
    }

    /// CSV rendering with columns `t,lower,upper,u,width`; `inf` marks the
    /// unbounded side of one-sided bands.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,lower,upper,u,width\n");
        for (j, &t) in self.grid.points().iter().enumerate() {
            let fmt = |x: f64| {
                if x.is_infinite() {
                    if x < 0.0 { "-inf" } else { "inf" }.to_string()
                } else {
                    format!("{x:.17e}")
                }
            };
            out.push_str(&format!(
                "{t:.17e},{},{},{},{}\n",
                fmt(self.lower[j]),
                fmt(self.upper[j]),
                fmt(self.u[j]),
                fmt(self.upper[j] - self.lower[j]),
            ));
        }
        out
    }

    /// JSON rendering with full metadata (alpha, method, sided, threshold,
    /// interval-wise budgets). Non-finite limits serialize as `null`.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::input(format!("band serialization failed: {e}")))
    }
}
