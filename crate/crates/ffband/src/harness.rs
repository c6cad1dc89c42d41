//! Monte Carlo harness: scenario configuration, replication engine, and the
//! summaries that reproduce the reference size, width, fairness, and
//! fragment operating characteristics.
//!
//! Replications are mutually independent, each driven by an RNG substream
//! derived from (seed, replication index), and are evaluated in parallel;
//! summaries are aggregated in replication order, so results are identical
//! for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::band::{build_band, test_covers, DesignKind, FamilyKind, MethodTag, ThresholdKind};
use crate::error::{Error, Result};
use crate::estimators::{
    cov_estimate, frag_cov, frag_mean, mean_estimate, tau_hat_deriv, tau_hat_diag,
    DiagonalCovInfo, TauStencil,
};
use crate::euler::ThresholdFunction;
use crate::process::{fragmentize, CovarianceModel, Grid, ProcessSampler};
use crate::quad::trapezoid;
use crate::special::EllipticalFamily;
use crate::threshold::{equidistant_knots, fair_threshold, kac_rice_threshold};
use crate::Sided;

/// Reference mean curve `10t³ − 15t⁴ + 6t⁶`; the null hypothesis in every
/// scenario.
pub fn reference_mean(t: f64) -> f64 {
    let t3 = t * t * t;
    10.0 * t3 - 15.0 * t3 * t + 6.0 * t3 * t3
}

/// Mean displacement scenarios for power studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanScenario {
    /// Global shift: θ(t) = θ₀(t) + Δ.
    Mean1,
    /// Scaling: θ(t) = θ₀(t)·(1 + Δ).
    Mean2,
    /// Local shift: θ(t) = θ₀(t) + Δ·1{0 ≤ t ≤ 1/8}.
    Mean3,
}

impl MeanScenario {
    /// Data-generating mean at `t` under displacement `delta`.
    pub fn value(self, delta: f64, t: f64) -> f64 {
        let base = reference_mean(t);
        match self {
            MeanScenario::Mean1 => base + delta,
            MeanScenario::Mean2 => base * (1.0 + delta),
            MeanScenario::Mean3 => base + if t <= 0.125 { delta } else { 0.0 },
        }
    }
}

/// Covariance scenarios: all Matérn-type with scale 0.25.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovScenario {
    /// Stationary, smoothness 3/2 (smooth paths).
    Cov1,
    /// Stationary, smoothness 1/2 (rough paths).
    Cov2,
    /// Nonstationary smoothness 2 − 1.75·√(max(t,s)) (smooth to rough).
    Cov3,
}

impl CovScenario {
    pub fn model(self) -> CovarianceModel {
        match self {
            CovScenario::Cov1 => CovarianceModel::matern(0.25, 1.5),
            CovScenario::Cov2 => CovarianceModel::matern(0.25, 0.5),
            CovScenario::Cov3 => CovarianceModel::nonstationary_matern(0.25),
        }
        .expect("built-in covariance scenarios are valid")
    }
}

/// Threshold rule + calibration family of a band method, e.g. fair/student-t.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub threshold: ThresholdKind,
    pub family: FamilyKind,
}

impl MethodSpec {
    pub const FF_Z: Self = MethodSpec {
        threshold: ThresholdKind::Fair,
        family: FamilyKind::Gaussian,
    };
    pub const FF_T: Self = MethodSpec {
        threshold: ThresholdKind::Fair,
        family: FamilyKind::StudentT,
    };
    pub const KR_Z: Self = MethodSpec {
        threshold: ThresholdKind::KacRice,
        family: FamilyKind::Gaussian,
    };
    pub const KR_T: Self = MethodSpec {
        threshold: ThresholdKind::KacRice,
        family: FamilyKind::StudentT,
    };
}

/// Fragmentary observation design: per curve, a Beta-Binomial start
/// Ã ~ BB(`bb_n`, `bb_a`, `bb_b`) restricts observation to the window
/// [Ã/100, Ã/100 + `window`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentSpec {
    pub window: f64,
    pub bb_n: u64,
    pub bb_a: f64,
    pub bb_b: f64,
}

impl FragmentSpec {
    /// The reference fragment design: window 0.4, start Ã ~ BB(60, 0.3, 0.3).
    pub const REFERENCE: Self = FragmentSpec {
        window: 0.4,
        bb_n: 60,
        bb_a: 0.3,
        bb_b: 0.3,
    };
}

fn default_cells() -> usize {
    9
}
fn default_grid_points() -> usize {
    101
}
fn default_sided() -> Sided {
    Sided::Two
}

/// One Monte Carlo scenario: data-generating process, sample size, band
/// method, and replication plan.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mean: MeanScenario,
    /// Mean displacement; 0 gives the null (size) setting.
    #[serde(default)]
    pub delta: f64,
    pub cov: CovScenario,
    /// Curves per replication.
    pub n: usize,
    pub reps: usize,
    pub alpha: f64,
    pub method: MethodSpec,
    /// Number of knot cells (p+q) of the fair threshold.
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// Index of the anchor t₀ among the equidistant knots.
    #[serde(default)]
    pub t0_idx: usize,
    #[serde(default = "default_sided")]
    pub sided: Sided,
    #[serde(default)]
    pub fragment: Option<FragmentSpec>,
    pub seed: u64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::input("delta must be a nonnegative finite number"));
        }
        if self.reps == 0 {
            return Err(Error::input("need at least one replication"));
        }
        if self.n < 2 {
            return Err(Error::input("need at least two curves per replication"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::input("alpha must lie strictly between 0 and 1"));
        }
        if self.cells == 0 {
            return Err(Error::input("need at least one knot cell"));
        }
        if self.t0_idx > self.cells {
            return Err(Error::input(format!(
                "t0 index {} out of range for {} cells",
                self.t0_idx, self.cells
            )));
        }
        if self.grid_points < 3 {
            return Err(Error::input("need at least three grid points"));
        }
        if let Some(f) = &self.fragment {
            if !(f.window > 0.0 && f.window <= 1.0) {
                return Err(Error::input("fragment window must lie in (0, 1]"));
            }
            if !(f.bb_a > 0.0 && f.bb_b > 0.0) {
                return Err(Error::input(
                    "fragment Beta-Binomial shape parameters must be positive",
                ));
            }
        }
        Ok(())
    }

    fn method_tag(&self) -> MethodTag {
        let design = if self.fragment.is_some() {
            DesignKind::Fragment
        } else {
            DesignKind::Full
        };
        MethodTag::new(self.method.threshold, self.method.family).with_design(design)
    }
}

/// Diagonal-lag mix of the fragment roughness stencil; calibrated once
/// against the reference fragment operating characteristics and frozen.
pub const FRAG_STENCIL: TauStencil = TauStencil::Extended(5.5);

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SAMPLE_TAG: u64 = 0x73_61_6d_70;
const FRAG_TAG: u64 = 0x66_72_61_67;

/// Deterministic per-replication seed, decorrelated from the base seed and
/// kept distinct between the sampling and fragmentation streams.
fn rep_seed(seed: u64, rep: usize, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64((rep as u64).wrapping_add(tag << 32)))
}

struct RepOutcome {
    reject: bool,
    roi_left: bool,
    roi_right: bool,
    /// Mean band width over the grid; NaN for one-sided bands.
    width: f64,
    /// (p_t0 + a*·t₀, p_t0 + a*·(1−t₀)) for fair thresholds.
    nominal: Option<(f64, f64)>,
}

/// Aggregated Monte Carlo results. Rates are computed over successful
/// replications; failed replications are counted, never silently dropped.
#[derive(Clone, Debug, Serialize)]
pub struct McSummary {
    pub reps_requested: usize,
    pub successes: usize,
    pub failures: usize,
    /// Error message of the first failed replication, if any.
    pub first_failure: Option<String>,
    /// Fraction of successful replications rejecting H₀: θ = θ₀ anywhere.
    pub rejection_rate: f64,
    /// Rejection rate restricted to grid points in [0, t₀].
    pub roi_left_rate: f64,
    /// Rejection rate restricted to grid points in [t₀, 1].
    pub roi_right_rate: f64,
    /// Band width averaged over the grid and the replications (NaN for
    /// one-sided bands).
    pub avg_width: f64,
    /// Mean fair-threshold nominal levels (p_t0 + a*·t₀, p_t0 + a*·(1−t₀))
    /// over successful replications; None for constant thresholds.
    pub avg_nominal_left: Option<f64>,
    pub avg_nominal_right: Option<f64>,
}

fn run_one(
    config: &ScenarioConfig,
    sampler: &ProcessSampler,
    grid: &Grid,
    knots: &[f64],
    theta_null: &[f64],
    rep: usize,
) -> Result<RepOutcome> {
    let m = grid.len();
    let sample = sampler.sample(config.n, rep_seed(config.seed, rep, SAMPLE_TAG))?;

    // Estimates: full-data designs use the derivative roughness estimator;
    // fragment designs the diagonal-lag stencil on the fragment covariance.
    let (theta_hat, var_diag, n_local, tau, dof) = if let Some(frag) = &config.fragment {
        let fragged = fragmentize(
            &sample,
            frag.window,
            frag.bb_n,
            frag.bb_a,
            frag.bb_b,
            rep_seed(config.seed, rep, FRAG_TAG),
        )?;
        let counts = fragged.counts_per_point();
        if let Some(j) = counts.iter().position(|&c| c < 2) {
            return Err(Error::model(format!(
                "replication unusable: fewer than two curves observed at grid index {j}"
            )));
        }
        let theta_hat = frag_mean(&fragged)?;
        let est = frag_cov(&fragged)?;
        let tau = tau_hat_diag(&est.matrix, grid, FRAG_STENCIL)?;
        let var_diag: Vec<f64> = (0..m).map(|j| est.matrix[(j, j)]).collect();
        let n_local: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let dof = counts.iter().copied().min().unwrap_or(0) as f64 - 1.0;
        (theta_hat, var_diag, n_local, tau, dof)
    } else {
        let theta_hat = mean_estimate(&sample)?;
        let cov = cov_estimate(&sample)?;
        let tau = tau_hat_deriv(&sample)?;
        let var_diag: Vec<f64> = (0..m).map(|j| cov[(j, j)]).collect();
        let n_local = vec![config.n as f64; m];
        (theta_hat, var_diag, n_local, tau, config.n as f64 - 1.0)
    };

    let family = family_of(config.method.family, dof)?;
    let tf = match config.method.threshold {
        ThresholdKind::Fair => fair_threshold(
            grid,
            &tau,
            &family,
            config.alpha,
            knots,
            config.t0_idx,
            config.sided,
        )?,
        ThresholdKind::KacRice => {
            let l1 = trapezoid(grid.points(), &tau);
            let u = kac_rice_threshold(l1, &family, config.alpha, config.sided)?;
            ThresholdFunction::constant(u)?
        }
    };
    let diag = DiagonalCovInfo::new(grid.clone(), var_diag, tau, n_local)?;
    let band = build_band(
        &theta_hat,
        &diag,
        &tf,
        config.alpha,
        config.method_tag(),
        config.sided,
    )?;
    let verdict = test_covers(&band, theta_null)?;

    let t0 = knots[config.t0_idx];
    let pts = grid.points();
    let roi_left = verdict
        .exceed_set
        .iter()
        .any(|&j| pts[j] <= t0 + 1e-12);
    let roi_right = verdict
        .exceed_set
        .iter()
        .any(|&j| pts[j] >= t0 - 1e-12);
    let width = match config.sided {
        Sided::Two => {
            let w = band.widths();
            w.iter().sum::<f64>() / w.len() as f64
        }
        Sided::One => f64::NAN,
    };
    let nominal = match (tf.p_t0, tf.a_star) {
        (Some(p), Some(a)) => Some((p + a * t0, p + a * (1.0 - t0))),
        _ => None,
    };
    Ok(RepOutcome {
        reject: verdict.reject,
        roi_left,
        roi_right,
        width,
        nominal,
    })
}

fn family_of(kind: FamilyKind, dof: f64) -> Result<EllipticalFamily> {
    match kind {
        FamilyKind::Gaussian => EllipticalFamily::gaussian(1.0),
        FamilyKind::StudentT => EllipticalFamily::student_t(dof),
    }
}

/// Run one scenario end to end: per replication sample → estimate → roughness
/// → threshold → band → test, in parallel, then aggregate.
///
/// Output is identical for a given config regardless of thread count:
/// replication `r` depends only on (config, seed, r) and the aggregation
/// walks replications in order.
pub fn run_size_power(config: &ScenarioConfig) -> Result<McSummary> {
    config.validate()?;
    let grid = Grid::uniform(config.grid_points)?;
    let theta_null: Vec<f64> = grid.points().iter().map(|&t| reference_mean(t)).collect();
    let theta_true: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| config.mean.value(config.delta, t))
        .collect();
    let sampler = ProcessSampler::new(&theta_true, &config.cov.model(), &grid)?;
    let knots = equidistant_knots(config.cells);

    let outcomes: Vec<Result<RepOutcome>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| run_one(config, &sampler, &grid, &knots, &theta_null, rep))
        .collect();

    let mut successes = 0usize;
    let mut failures = 0usize;
    let mut first_failure = None;
    let mut rejects = 0usize;
    let mut roi_left = 0usize;
    let mut roi_right = 0usize;
    let mut width_sum = 0.0;
    let mut nominal_sum = (0.0, 0.0);
    let mut nominal_count = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(o) => {
                successes += 1;
                rejects += o.reject as usize;
                roi_left += o.roi_left as usize;
                roi_right += o.roi_right as usize;
                width_sum += o.width;
                if let Some((l, r)) = o.nominal {
                    nominal_sum.0 += l;
                    nominal_sum.1 += r;
                    nominal_count += 1;
                }
            }
            Err(e) => {
                failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(e.to_string());
                }
            }
        }
    }
    let frac = |k: usize| k as f64 / successes as f64;
    Ok(McSummary {
        reps_requested: config.reps,
        successes,
        failures,
        first_failure,
        rejection_rate: frac(rejects),
        roi_left_rate: frac(roi_left),
        roi_right_rate: frac(roi_right),
        avg_width: width_sum / successes as f64,
        avg_nominal_left: (nominal_count > 0).then(|| nominal_sum.0 / nominal_count as f64),
        avg_nominal_right: (nominal_count > 0).then(|| nominal_sum.1 / nominal_count as f64),
    })
}

/// Population nominal levels (p_t0 + a*·t₀, p_t0 + a*·(1−t₀)) implied by the
/// scenario's true covariance: fair solve on the plain-stencil roughness of
/// the exact covariance matrix, with the config's family and knots.
pub fn nominal_roi_levels(config: &ScenarioConfig) -> Result<(f64, f64)> {
    config.validate()?;
    let grid = Grid::uniform(config.grid_points)?;
    let matrix = config.cov.model().matrix(&grid);
    let tau_true = tau_hat_diag(&matrix, &grid, TauStencil::Plain)?;
    let dof = match &config.fragment {
        Some(_) => {
            return Err(Error::input(
                "population nominal levels are defined for full-data scenarios",
            ))
        }
        None => config.n as f64 - 1.0,
    };
    let family = family_of(config.method.family, dof)?;
    let knots = equidistant_knots(config.cells);
    let tf = fair_threshold(
        &grid,
        &tau_true,
        &family,
        config.alpha,
        &knots,
        config.t0_idx,
        config.sided,
    )?;
    let (p, a) = (tf.p_t0.unwrap(), tf.a_star.unwrap());
    let t0 = knots[config.t0_idx];
    Ok((p + a * t0, p + a * (1.0 - t0)))
}

/// Fairness summary: the population nominal levels for the two anchored
/// regions next to the empirical region rejection rates.
#[derive(Clone, Debug, Serialize)]
pub struct FairnessSummary {
    pub nominal_left: f64,
    pub nominal_right: f64,
    pub mc: McSummary,
}

/// Region-of-interest fairness study: [`run_size_power`] plus the population
/// nominal levels from [`nominal_roi_levels`].
pub fn run_fairness(config: &ScenarioConfig) -> Result<FairnessSummary> {
    let (nominal_left, nominal_right) = nominal_roi_levels(config)?;
    let mc = run_size_power(config)?;
    Ok(FairnessSummary {
        nominal_left,
        nominal_right,
        mc,
    })
}

/// Fragment study: [`run_size_power`] with a required fragment design.
pub fn run_fragment(config: &ScenarioConfig) -> Result<McSummary> {
    if config.fragment.is_none() {
        return Err(Error::input(
            "fragment study requires a fragment design in the config",
        ));
    }
    run_size_power(config)
}
