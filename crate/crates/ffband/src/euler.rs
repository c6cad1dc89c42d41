//! Expected Euler characteristic of the excursion set of a standardized
//! elliptical process over a varying threshold.
//!
//! For a process X(t) = V·Z(t) on [0, 1] (Z a unit-dispersion Gaussian process
//! with roughness τ(t), V an independent positive scale) and a continuous
//! piecewise-linear threshold u(t) anchored at t₀, the expected Euler
//! characteristic of {t : X(t) ≥ u(t)} decomposes as
//!
//! ```text
//! E[φ] = P(X(t₀) ≥ u(t₀))
//!      + ∫₀¹ (τ/2π) · M(−[u² + (u′/τ)²]/2) dt          (first integrand)
//!      + ∫₀^{t₀} down-crossing term − ∫_{t₀}¹ up-crossing term,
//! ```
//!
//! where M is the moment generating function of 1/V². The Gaussian and
//! Student-t scale families admit closed-form crossing terms (standard normal
//! and t CDFs); for a user-supplied M the crossing terms reduce, via the
//! substitution z = (y ∓ u′)/τ, to one-dimensional tail integrals of
//! M′(−(u² + z²)/2), evaluated by adaptive truncated quadrature.
//!
//! All integrals use fixed-order Gauss-Legendre quadrature per knot cell of
//! u, with τ linearly interpolated from its grid; doubling the order is
//! exposed to the test suite as a convergence guard.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::process::Grid;
use crate::quad;
use crate::special::{ln_gamma, std_normal_cdf, student_t_cdf, EllipticalFamily};

/// Continuous piecewise-linear threshold on [0, 1] with an anchor knot t₀.
///
/// Stored as knot positions and knot values; slopes are derived per cell. The
/// fair-band construction produces thresholds that are constant on the first
/// cell right of t₀, but the evaluator accepts any continuous piecewise-linear
/// shape. The anchor is a knot by construction, so the tail probability in the
/// Euler characteristic formula is always evaluated at a knot.
///
/// Thresholds may take nonpositive values here (useful when exploring the raw
/// Euler characteristic); band assembly rejects them, since a confidence band
/// needs u(t) > 0. Query [`ThresholdFunction::min_value`] to detect this.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ThresholdFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    t0_idx: usize,
    /// Probability budget spent at the anchor point (filled by the fair
    /// threshold solver).
    pub p_t0: Option<f64>,
    /// Crossing budget rate 𝔞* spread over the domain (filled by the fair
    /// threshold solver).
    pub a_star: Option<f64>,
}

impl ThresholdFunction {
    /// Build from knot positions and the threshold values at those knots.
    ///
    /// Knots must be strictly increasing with endpoints exactly 0 and 1, and
    /// `t0_idx` must index a knot.
    pub fn from_knot_values(knots: Vec<f64>, values: Vec<f64>, t0_idx: usize) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::input("a threshold needs at least two knots"));
        }
        if knots.len() != values.len() {
            return Err(Error::input("knots and values must have equal length"));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::input("threshold knots must span exactly [0, 1]"));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::input("threshold knots must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("threshold values must be finite"));
        }
        if t0_idx >= knots.len() {
            return Err(Error::input("t0 index out of range"));
        }
        Ok(Self {
            knots,
            values,
            t0_idx,
            p_t0: None,
            a_star: None,
        })
    }

    /// Build from the coefficient parameterization
    /// `u(t) = Σ_{j<0} c_j (t − a_{j+1})_− + c_0 + Σ_{j≥1} c_j (t − a_j)_+`:
    /// `coeffs[t0_idx]` is the constant level on the cell right of t₀ and the
    /// remaining coefficients are slope increments accumulating outward, so
    /// the function is automatically continuous and flat on `[a₀, a₁]`.
    ///
    /// `coeffs` has one entry per cell; `t0_idx` must leave at least one cell
    /// to the right of the anchor.
    pub fn from_coefficients(knots: Vec<f64>, coeffs: &[f64], t0_idx: usize) -> Result<Self> {
        if knots.len() < 2 || coeffs.len() + 1 != knots.len() {
            return Err(Error::input(
                "need one coefficient per cell (knots.len() - 1)",
            ));
        }
        if t0_idx + 1 >= knots.len() {
            return Err(Error::input(
                "the anchor needs at least one cell to its right",
            ));
        }
        let k = knots.len();
        let mut values = vec![0.0; k];
        let c0 = coeffs[t0_idx];
        values[t0_idx] = c0;
        values[t0_idx + 1] = c0;
        let mut slope = 0.0;
        for cell in t0_idx + 1..k - 1 {
            slope += coeffs[cell];
            values[cell + 1] = values[cell] + slope * (knots[cell + 1] - knots[cell]);
        }
        slope = 0.0;
        for cell in (0..t0_idx).rev() {
            slope += coeffs[cell];
            values[cell] = values[cell + 1] - slope * (knots[cell + 1] - knots[cell]);
        }
        Self::from_knot_values(knots, values, t0_idx)
    }

    /// Constant threshold over [0, 1], anchored at 0.
    pub fn constant(u: f64) -> Result<Self> {
        Self::from_knot_values(vec![0.0, 1.0], vec![u, u], 0)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn t0_index(&self) -> usize {
        self.t0_idx
    }

    pub fn t0(&self) -> f64 {
        self.knots[self.t0_idx]
    }

    /// Slope increments recovering the coefficient parameterization
    /// (inverse of [`ThresholdFunction::from_coefficients`] when the cell
    /// right of the anchor is flat).
    pub fn coefficients(&self) -> Vec<f64> {
        let cells = self.knots.len() - 1;
        let mut coeffs = vec![0.0; cells];
        if self.t0_idx < cells {
            coeffs[self.t0_idx] = self.values[self.t0_idx];
        }
        let mut prev = 0.0;
        for cell in self.t0_idx + 1..cells {
            let s = self.slope_on_cell(cell);
            coeffs[cell] = s - prev;
            prev = s;
        }
        prev = 0.0;
        for cell in (0..self.t0_idx).rev() {
            let s = self.slope_on_cell(cell);
            coeffs[cell] = s - prev;
            prev = s;
        }
        coeffs
    }

    /// Threshold value by piecewise-linear interpolation (clamped outside
    /// [0, 1]).
    pub fn eval(&self, t: f64) -> f64 {
        interp_clamped(&self.knots, &self.values, t)
    }

    /// Constant slope on cell `j` = [knots[j], knots[j+1]].
    pub fn slope_on_cell(&self, j: usize) -> f64 {
        (self.values[j + 1] - self.values[j]) / (self.knots[j + 1] - self.knots[j])
    }

    /// Smallest knot value (equals the function minimum by piecewise
    /// linearity).
    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Values at every grid point.
    pub fn eval_on_grid(&self, grid: &Grid) -> Vec<f64> {
        grid.points().iter().map(|&t| self.eval(t)).collect()
    }
}

/// Orientation of the crossing correction on a knot cell: `Up` applies right
/// of the anchor (up-crossing term, subtracted), `Down` left of it
/// (down-crossing term, added).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossingDirection {
    Up,
    Down,
}

/// Linear interpolation with clamping outside the table range.
pub(crate) fn interp_clamped(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x) - 1;
    let w = (x - xs[j]) / (xs[j + 1] - xs[j]);
    ys[j] + w * (ys[j + 1] - ys[j])
}

/// Family-specific integrand evaluations with per-call precomputation.
pub(crate) enum FamilyKernel<'a> {
    Gaussian {
        sigma: f64,
    },
    StudentT {
        nu: f64,
        /// √((ν+1)π)·Γ((ν+1)/2)/Γ((ν+2)/2), evaluated in log space.
        cnu: f64,
    },
    Custom(&'a EllipticalFamily),
}

impl<'a> FamilyKernel<'a> {
    pub(crate) fn new(family: &'a EllipticalFamily) -> Result<Self> {
        family.validate()?;
        Ok(match family {
            EllipticalFamily::Gaussian { sigma } => FamilyKernel::Gaussian { sigma: *sigma },
            EllipticalFamily::StudentT { nu } => {
                let cnu = (ln_gamma((nu + 1.0) / 2.0) - ln_gamma((nu + 2.0) / 2.0)).exp()
                    * ((nu + 1.0) * PI).sqrt();
                FamilyKernel::StudentT { nu: *nu, cnu }
            }
            EllipticalFamily::CustomMgf { .. } => FamilyKernel::Custom(family),
        })
    }

    /// First integrand (τ/2π)·M(−[u² + (u′/τ)²]/2).
    fn first(&self, u: f64, up: f64, tau: f64) -> Result<f64> {
        let w = u * u + (up / tau) * (up / tau);
        Ok(match self {
            FamilyKernel::Gaussian { sigma } => {
                tau / (2.0 * PI) * (-0.5 * w / (sigma * sigma)).exp()
            }
            FamilyKernel::StudentT { nu, .. } => {
                tau / (2.0 * PI) * (-0.5 * nu * (w / nu).ln_1p()).exp()
            }
            FamilyKernel::Custom(f) => tau / (2.0 * PI) * f.mgf(-0.5 * w)?,
        })
    }

    /// Signed crossing term: `sign = +1` gives the down-crossing form (CDF at
    /// +u′), `sign = −1` the up-crossing form (CDF at −u′). Both carry the
    /// signed u′ prefactor from the general formula.
    fn cross(&self, u: f64, up: f64, tau: f64, sign: f64, fine: bool) -> Result<f64> {
        if up == 0.0 {
            return Ok(0.0);
        }
        Ok(match self {
            FamilyKernel::Gaussian { sigma } => {
                up / (sigma * (2.0 * PI).sqrt())
                    * (-0.5 * u * u / (sigma * sigma)).exp()
                    * std_normal_cdf(sign * up / (sigma * tau))
            }
            FamilyKernel::StudentT { nu, cnu } => {
                let a = tau * ((nu + u * u) / (nu + 1.0)).sqrt();
                let inner = up / (2.0 * PI * tau)
                    * (-(0.5 * nu + 1.0) * (u * u / nu).ln_1p()).exp()
                    * cnu
                    * a;
                inner * student_t_cdf(sign * up / a, nu + 1.0)?
            }
            FamilyKernel::Custom(f) => {
                let lo = -sign * up / tau;
                up / (2.0 * PI) * mgf_deriv_tail_integral(f, u, lo, fine)?
            }
        })
    }

    /// Integrand of a cell on the given side of the anchor.
    fn integrand(
        &self,
        u: f64,
        up: f64,
        tau: f64,
        direction: CrossingDirection,
        fine: bool,
    ) -> Result<f64> {
        let first = self.first(u, up, tau)?;
        Ok(match direction {
            CrossingDirection::Down => first + self.cross(u, up, tau, 1.0, fine)?,
            CrossingDirection::Up => first - self.cross(u, up, tau, -1.0, fine)?,
        })
    }
}

/// ∫_{lo}^{∞} M′(−(u² + z²)/2) dz with adaptive truncation: the integrand is
/// largest at the z closest to zero and is cut off once it falls below 1e−14
/// of that peak, then integrated by composite Gauss-Legendre on unit-length
/// segments.
fn mgf_deriv_tail_integral(
    family: &EllipticalFamily,
    u: f64,
    lo: f64,
    fine: bool,
) -> Result<f64> {
    let g = |z: f64| family.mgf_deriv(-0.5 * (u * u + z * z));
    let peak_z = lo.max(0.0);
    let peak = g(peak_z)?;
    if !(peak.is_finite()) {
        return Err(Error::model("custom MGF derivative is not finite"));
    }
    if peak == 0.0 {
        return Ok(0.0);
    }
    let threshold = 1e-14 * peak;
    let mut offset = 1.0;
    while g(peak_z + offset)? > threshold {
        offset *= 2.0;
        if offset > 1e6 {
            return Err(Error::solver(
                "custom mixing distribution decays too slowly for the crossing integral",
            ));
        }
    }
    let hi = peak_z + offset;
    // The integrand depends on z only through z², so the same cutoff bounds
    // the negative side.
    let left = lo.max(-hi);
    if left >= hi {
        return Ok(0.0);
    }
    let n_seg = ((hi - left).ceil() as usize).max(1);
    let step = (hi - left) / n_seg as f64;
    let mut total = 0.0;
    let mut err: Option<Error> = None;
    for s in 0..n_seg {
        let a = left + s as f64 * step;
        let b = a + step;
        let piece = |z: f64| match g(z) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                0.0
            }
        };
        total += if fine {
            quad::integrate32(a, b, piece)
        } else {
            quad::integrate16(a, b, piece)
        };
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(total)
}

pub(crate) fn check_tau(grid: &Grid, tau: &[f64]) -> Result<()> {
    if tau.len() != grid.len() {
        return Err(Error::input("tau must be tabulated on the full grid"));
    }
    if tau.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(Error::domain("tau must be strictly positive everywhere"));
    }
    Ok(())
}

/// Crossing budget of one knot cell with explicit anchoring: `Up` cells anchor
/// the threshold value at the left end (u = anchor + slope·len·x), `Down`
/// cells at the right end (u = anchor + slope·len·(x−1)), for relative node
/// position x ∈ [0, 1]. This is the primitive the fair threshold solver
/// iterates on; `taus` are the roughness values at the quadrature nodes of
/// the cell.
pub(crate) fn cell_budget_anchored(
    kernel: &FamilyKernel,
    direction: CrossingDirection,
    anchor: f64,
    slope: f64,
    len: f64,
    taus: &[f64],
    fine: bool,
) -> Result<f64> {
    let (xs, ws) = quad::nodes(fine);
    let mut acc = 0.0;
    for ((&xi, &wi), &tau) in xs.iter().zip(ws).zip(taus) {
        let x = 0.5 * (xi + 1.0);
        let u = match direction {
            CrossingDirection::Up => anchor + slope * len * x,
            CrossingDirection::Down => anchor + slope * len * (x - 1.0),
        };
        acc += 0.5 * wi * kernel.integrand(u, slope, tau, direction, fine)?;
    }
    Ok(len * acc)
}

/// Roughness at the quadrature nodes of the interval [a, b], linearly
/// interpolated from the grid.
pub(crate) fn tau_at_nodes(grid: &Grid, tau: &[f64], a: f64, b: f64, fine: bool) -> Vec<f64> {
    let (xs, _) = quad::nodes(fine);
    xs.iter()
        .map(|&xi| {
            let t = a + (b - a) * 0.5 * (xi + 1.0);
            interp_clamped(grid.points(), tau, t)
        })
        .collect()
}

fn budget_for_cell(
    u: &ThresholdFunction,
    grid: &Grid,
    tau: &[f64],
    kernel: &FamilyKernel,
    cell: usize,
    direction: CrossingDirection,
    fine: bool,
) -> Result<f64> {
    let (a, b) = (u.knots()[cell], u.knots()[cell + 1]);
    let len = b - a;
    let slope = u.slope_on_cell(cell);
    let anchor = match direction {
        CrossingDirection::Up => u.knot_values()[cell],
        CrossingDirection::Down => u.knot_values()[cell + 1],
    };
    let taus = tau_at_nodes(grid, tau, a, b, fine);
    cell_budget_anchored(kernel, direction, anchor, slope, len, &taus, fine)
}

/// Contribution of one knot cell to the expected Euler characteristic: the
/// first-integrand piece plus the signed crossing piece for the given
/// direction ([`CrossingDirection::Up`] right of the anchor,
/// [`CrossingDirection::Down`] left of it).
pub fn crossing_budget_on_interval(
    u: &ThresholdFunction,
    grid: &Grid,
    tau: &[f64],
    family: &EllipticalFamily,
    cell: usize,
    direction: CrossingDirection,
) -> Result<f64> {
    check_tau(grid, tau)?;
    if cell + 1 >= u.knots().len() {
        return Err(Error::input("cell index out of range"));
    }
    let kernel = FamilyKernel::new(family)?;
    budget_for_cell(u, grid, tau, &kernel, cell, direction, false)
}

pub(crate) fn expected_euler_impl(
    u: &ThresholdFunction,
    grid: &Grid,
    tau: &[f64],
    family: &EllipticalFamily,
    fine: bool,
) -> Result<f64> {
    check_tau(grid, tau)?;
    let kernel = FamilyKernel::new(family)?;
    let mut total = family.tail(u.eval(u.t0()))?;
    for cell in 0..u.knots().len() - 1 {
        let direction = if cell >= u.t0_index() {
            CrossingDirection::Up
        } else {
            CrossingDirection::Down
        };
        total += budget_for_cell(u, grid, tau, &kernel, cell, direction, fine)?;
    }
    Ok(total)
}

/// Expected Euler characteristic of the excursion set {t : X(t) ≥ u(t)}.
///
/// Assembled exactly as tail probability at the anchor plus the sum of
/// per-cell crossing budgets ([`crossing_budget_on_interval`] with `Down` on
/// cells left of the anchor and `Up` on the rest), so the decomposition
/// identity holds to machine precision. The anchor t₀ is a knot of `u` by
/// construction of [`ThresholdFunction`].
pub fn expected_euler(
    u: &ThresholdFunction,
    grid: &Grid,
    tau: &[f64],
    family: &EllipticalFamily,
) -> Result<f64> {
    expected_euler_impl(u, grid, tau, family, false)
}

/// Closed-form expected Euler characteristic for a constant threshold:
/// `P(X ≥ u) + (‖τ‖₁/2π)·M(−u²/2)`.
///
/// This is the classical constant-threshold crossing bound; a two-sided band
/// at level α compares it against α/2, a one-sided band against α.
pub fn expected_euler_constant(u: f64, tau_l1: f64, family: &EllipticalFamily) -> Result<f64> {
    if !(tau_l1.is_finite() && tau_l1 >= 0.0) {
        return Err(Error::input("tau_l1 must be nonnegative"));
    }
    family.validate()?;
    Ok(family.tail(u)? + tau_l1 / (2.0 * PI) * family.mgf(-0.5 * u * u)?)
}
