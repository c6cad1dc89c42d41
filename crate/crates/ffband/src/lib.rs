//! Simultaneous confidence bands for functional parameters with fair,
//! interpretable error budgeting.
//!
//! The library computes confidence bands of the form
//! `theta_hat(t) +/- u(t) * sqrt(var(t) / n_local(t))` over a grid on `[0, 1]`,
//! where the threshold `u` is chosen so that the expected Euler characteristic
//! of the excursion set of the standardized estimator process equals the
//! type-I error budget. Two threshold families are provided:
//!
//! * [`threshold::kac_rice_threshold`]: the classical constant threshold from
//!   the Kac-Rice upcrossing bound;
//! * [`threshold::fair_threshold`]: a continuous piecewise-linear threshold
//!   that spreads the crossing budget uniformly over the domain, so that
//!   sub-interval error rates are proportional to interval length.
//!
//! Supporting modules: exact special functions ([`special`]), Gaussian and
//! elliptical process sampling ([`process`]), mean/covariance/roughness
//! estimators including fragmentary designs ([`estimators`]), the expected
//! Euler characteristic evaluator ([`euler`]), band assembly ([`band`]), and
//! a Monte Carlo harness ([`harness`]) that reproduces the reference size,
//! width, fairness, and fragment operating characteristics.

/// Re-export of the linear-algebra crate whose matrix types appear in the
/// public API, so downstream crates can construct them without pinning a
/// second copy.
pub use nalgebra;

pub mod band;
pub mod error;
pub mod estimators;
pub mod euler;
pub mod harness;
pub mod process;
pub mod special;
pub mod threshold;

mod quad;
mod roots;

pub use band::{build_band, roi_test, test_covers, Band, DesignKind, FamilyKind, MethodTag, ThresholdKind};
pub use error::{Error, Result};
pub use harness::{
    reference_mean, run_fairness, run_fragment, run_size_power, CovScenario, FragmentSpec,
    McSummary, MeanScenario, MethodSpec, ScenarioConfig,
};
pub use estimators::{DiagonalCovInfo, TauStencil};
pub use euler::{expected_euler, expected_euler_constant, CrossingDirection, ThresholdFunction};
pub use threshold::{equidistant_knots, fair_threshold, kac_rice_threshold, pvalue_function};
pub use process::{CovarianceModel, FunctionalSample, Grid};
pub use special::EllipticalFamily;

/// Two-sided bands split the error budget between the two tails; one-sided
/// (upper) bands spend it all on the upper excursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    One,
    Two,
}

impl Sided {
    /// Divisor applied to `alpha` and the crossing budget: 1 or 2.
    pub fn divisor(self) -> f64 {
        match self {
            Sided::One => 1.0,
            Sided::Two => 2.0,
        }
    }
}
