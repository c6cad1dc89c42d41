//! Scalar root finding: Brent's method with an optional bracket expander.

use crate::error::{Error, Result};

/// Find a root of `f` in `[a, b]` by Brent's method (inverse quadratic
/// interpolation guarded by bisection). `fa` and `fb` are `f` evaluated at
/// the endpoints; they must straddle zero.
///
/// Converges when the bracket shrinks below `xtol` (plus machine slack
/// proportional to `|x|`) or `|f(x)| <= ftol`.
pub fn brent<F>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::solver(format!(
            "brent: endpoints do not bracket a root: f({a:.6e})={fa:.6e}, f({b:.6e})={fb:.6e}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= ftol {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // attempt inverse quadratic interpolation (secant if a == c)
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Err(Error::solver("brent: max iterations exceeded".to_string()))
}

/// [`brent`] for fallible objective functions: the first error raised by `f`
/// aborts the search and is returned as-is.
pub fn brent_try<F>(
    mut f: F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut err: Option<Error> = None;
    let res = brent(
        |x| match f(x) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        },
        a,
        b,
        fa,
        fb,
        xtol,
        ftol,
        max_iter,
    );
    match err {
        Some(e) => Err(e),
        None => res,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64) -> Result<f64> {
        let fa = f(a);
        let fb = f(b);
        brent(f, a, b, fa, fb, xtol, 0.0, 200)
    }

    #[test]
    fn finds_cubic_root() {
        let r = solve(|x| x * x * x - 2.0 * x - 5.0, 2.0, 3.0, 1e-14).unwrap();
        assert!((r - 2.0945514815423265).abs() < 1e-12);
    }

    #[test]
    fn finds_cos_root() {
        let r = solve(|x| x.cos(), 1.0, 2.0, 1e-15).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
    }

    #[test]
    fn rejects_non_bracketing() {
        assert!(solve(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }
}
