//! Scalar root finders and the cubic solver behind the 3×3 spectra.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Roots of the monic cubic `μ³ + a1 μ² + a2 μ + a3`.
///
/// Trigonometric form when all roots are real, Cardano otherwise, followed by
/// complex Newton polishing on the undepressed polynomial. Real roots come
/// first, sorted descending; a complex pair is returned as `(re + i·im, re − i·im)`.
pub fn cubic_roots(a1: f64, a2: f64, a3: f64) -> [Complex64; 3] {
    if a3 == 0.0 {
        // Exact zero root; the rest solve μ² + a1 μ + a2 = 0.
        let disc = a1 * a1 - 4.0 * a2;
        let zero = Complex64::new(0.0, 0.0);
        let mut roots = if disc >= 0.0 {
            let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
            let (x1, x2) = if q == 0.0 { (0.0, 0.0) } else { (q, a2 / q) };
            [zero, Complex64::new(x1, 0.0), Complex64::new(x2, 0.0)]
        } else {
            let im = 0.5 * (-disc).sqrt();
            return [
                zero,
                Complex64::new(-0.5 * a1, im),
                Complex64::new(-0.5 * a1, -im),
            ];
        };
        roots.sort_by(|a, b| b.re.partial_cmp(&a.re).expect("finite roots"));
        return roots;
    }
    let shift = a1 / 3.0;
    let p = a2 - a1 * a1 / 3.0;
    let q = 2.0 * a1 * a1 * a1 / 27.0 - a1 * a2 / 3.0 + a3;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);

    let mut roots: [Complex64; 3];
    if p == 0.0 && q == 0.0 {
        roots = [Complex64::new(-shift, 0.0); 3];
    } else if disc <= 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        let two_pi_3 = 2.0 * std::f64::consts::PI / 3.0;
        roots = [
            Complex64::new(m * theta.cos() - shift, 0.0),
            Complex64::new(m * (theta - two_pi_3).cos() - shift, 0.0),
            Complex64::new(m * (theta + two_pi_3).cos() - shift, 0.0),
        ];
    } else {
        let sq = disc.sqrt();
        let u = (-q / 2.0 + sq).cbrt();
        let v = (-q / 2.0 - sq).cbrt();
        let re = -(u + v) / 2.0 - shift;
        let im = (u - v).abs() * 3f64.sqrt() / 2.0;
        roots = [
            Complex64::new(u + v - shift, 0.0),
            Complex64::new(re, im),
            Complex64::new(re, -im),
        ];
    }

    let poly = |z: Complex64| ((z + a1) * z + a2) * z + a3;
    let dpoly = |z: Complex64| (3.0 * z + 2.0 * a1) * z + a2;
    for z in roots.iter_mut() {
        for _ in 0..8 {
            let d = dpoly(*z);
            if d.norm() == 0.0 {
                break;
            }
            let step = poly(*z) / d;
            let next = *z - step;
            if !next.re.is_finite() || !next.im.is_finite() {
                break;
            }
            if poly(next).norm() > poly(*z).norm() {
                break;
            }
            *z = next;
            if step.norm() <= 1e-16 * z.norm().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    if disc > 0.0 {
        // Keep the pair exactly conjugate and the lone real root real.
        roots[0].im = 0.0;
        let re = 0.5 * (roots[1].re + roots[2].re);
        let im = 0.5 * (roots[1].im - roots[2].im).abs();
        roots[1] = Complex64::new(re, im);
        roots[2] = Complex64::new(re, -im);
    } else {
        for z in roots.iter_mut() {
            z.im = 0.0;
        }
        roots.sort_by(|a, b| b.re.partial_cmp(&a.re).expect("finite roots"));
    }
    roots
}

/// Newton iteration for `f(x) = 0` given `f` and `f'`, to `|f| < tol`.
pub fn newton_1d(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    x0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let mut x = x0;
    for _ in 0..max_iter {
        let fx = f(x);
        if fx.abs() < tol {
            return Ok(x);
        }
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            return Err(Error::NoConvergence {
                solver: "newton",
                detail: format!("zero or non-finite derivative at x = {x}"),
            });
        }
        x -= fx / d;
        if !x.is_finite() {
            break;
        }
    }
    let fx = f(x);
    if fx.abs() < tol {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            solver: "newton",
            detail: format!("residual {fx:e} after {max_iter} iterations"),
        })
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, to interval width `tol`.
pub fn bisect_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoConvergence {
            solver: "bisection",
            detail: format!("no sign change on [{lo}, {hi}]"),
        });
    }
    for _ in 0..400 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Ok(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(a1: f64, a2: f64, a3: f64) {
        for z in cubic_roots(a1, a2, a3) {
            let r = ((z + a1) * z + a2) * z + a3;
            let scale = 1.0 + a1.abs() * z.norm().powi(2) + a2.abs() * z.norm() + a3.abs();
            assert!(r.norm() / scale < 1e-12, "{z} residual {r}");
        }
    }

    #[test]
    fn real_and_complex_cases() {
        check(-6.0, 11.0, -6.0);
        check(3.0, 3.0, 1.0);
        check(1.0, 1.0, 1.0);
        check(3.0, 4.0, 2.0);
        check(1e-3, 1e-6, 1e-12);
    }

    #[test]
    fn known_roots() {
        let r = cubic_roots(-6.0, 11.0, -6.0);
        assert!((r[0].re - 3.0).abs() < 1e-13);
        assert!((r[1].re - 2.0).abs() < 1e-13);
        assert!((r[2].re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn tiny_root_relative_accuracy() {
        // (μ + 1)(μ + 2)(μ + 1e-9)
        let (x1, x2, x3) = (-1.0, -2.0, -1e-9);
        let a1 = -(x1 + x2 + x3);
        let a2 = x1 * x2 + x1 * x3 + x2 * x3;
        let a3 = -(x1 * x2 * x3);
        let r = cubic_roots(a1, a2, a3);
        let small = r.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert!((small - x3).abs() / x3.abs() < 1e-8);
    }

    #[test]
    fn scalar_solvers() {
        let x = newton_1d(|x| x * x - 2.0, |x| 2.0 * x, 1.0, 1e-14, 50).unwrap();
        assert!((x - 2f64.sqrt()).abs() < 1e-14);
        let y = bisect_1d(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((y - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect_1d(|x| x * x + 1.0, 0.0, 2.0, 1e-10).is_err());
    }
}
