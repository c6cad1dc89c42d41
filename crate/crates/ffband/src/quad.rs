//! Gauss-Legendre quadrature with runtime-generated nodes.

use once_cell::sync::Lazy;

/// Nodes and weights for n-point Gauss-Legendre quadrature on `[-1, 1]`,
/// computed by Newton iteration on the Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th positive root
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // evaluate P_n(z) and its derivative by upward recurrence
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 + 1.0) * z * p2 - j as f64 * p3) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

static GL16: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| gauss_legendre(16));
static GL32: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| gauss_legendre(32));

/// Raw nodes and weights on `[-1, 1]`; `fine` selects the 32-point guard rule.
pub(crate) fn nodes(fine: bool) -> (&'static [f64], &'static [f64]) {
    if fine {
        (&GL32.0, &GL32.1)
    } else {
        (&GL16.0, &GL16.1)
    }
}

/// Integrate `f` over `[a, b]` with 16-point Gauss-Legendre.
pub fn integrate16<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let (x, w) = (&GL16.0, &GL16.1);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..16 {
        acc += w[i] * f(mid + half * x[i]);
    }
    acc * half
}

/// Integrate `f` over `[a, b]` with 32-point Gauss-Legendre (guard rule used
/// to confirm the 16-point result).
pub fn integrate32<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let (x, w) = (&GL32.0, &GL32.1);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..32 {
        acc += w[i] * f(mid + half * x[i]);
    }
    acc * half
}

/// Trapezoid rule over tabulated values `y` at strictly increasing `t`.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(t.len(), y.len());
    let mut acc = 0.0;
    for i in 1..t.len() {
        acc += 0.5 * (y[i] + y[i - 1]) * (t[i] - t[i - 1]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_integrate_polynomials_exactly() {
        // 16-point rule is exact through degree 31
        let v = integrate16(0.0, 1.0, |x| x.powi(31));
        assert!((v - 1.0 / 32.0).abs() < 1e-14, "got {v}");
        let v = integrate32(-1.0, 2.0, |x| 5.0 * x.powi(4));
        assert!((v - 33.0).abs() < 1e-12);
    }

    #[test]
    fn integrates_transcendental() {
        let v = integrate16(0.0, std::f64::consts::PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-13);
        let v32 = integrate32(0.0, std::f64::consts::PI, f64::sin);
        assert!((v32 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let t: Vec<f64> = (0..=100).map(|j| j as f64 / 100.0).collect();
        let y: Vec<f64> = t.iter().map(|&x| 3.0 * x + 1.0).collect();
        assert!((trapezoid(&t, &y) - 2.5).abs() < 1e-14);
    }
}
