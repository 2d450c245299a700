//! Exact solution of 3×3 constant-coefficient linear systems `ẋ = A x`.
//!
//! The matrix is first diagonally balanced (Osborne iteration with powers of
//! two, so balancing is exact in floating point). Eigenvalues come from the
//! characteristic cubic, and each eigenvector is the largest cross product of
//! two rows of `A − λI`. When the eigenvector matrix is ill conditioned
//! (condition number above `EIG_COND_LIMIT`) or an eigenvector cannot be
//! isolated, the propagator falls back to Padé scaling-and-squaring.
//!
//! ```text
//! det(λI − A) = λ³ + c1 λ² + c2 λ + c3
//! c1 = −tr A,   c2 = Σ principal 2×2 minors,   c3 = −det A
//! e^{At} = D V e^{Λt} V⁻¹ D⁻¹
//! ```

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use super::roots::cubic_roots;

/// Eigenvector condition number above which the eigen path is abandoned.
pub const EIG_COND_LIMIT: f64 = 1e8;

/// Characteristic coefficients `(c1, c2, c3)` of a 3×3 matrix.
pub fn char_coeffs(a: &Matrix3<f64>) -> (f64, f64, f64) {
    let c1 = -a.trace();
    let m01 = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let m02 = a[(0, 0)] * a[(2, 2)] - a[(0, 2)] * a[(2, 0)];
    let m12 = a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)];
    let c2 = m01 + m02 + m12;
    let c3 = -a.determinant();
    (c1, c2, c3)
}

/// Diagonal similarity `D` such that `D⁻¹ A D` has comparable row and column norms.
pub fn balance(a: &Matrix3<f64>) -> Vector3<f64> {
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    let mut m = *a;
    for _ in 0..64 {
        let mut converged = true;
        for i in 0..3 {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..3 {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let s = c + r;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..3 {
                    m[(i, j)] /= f;
                    m[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
    d
}

/// Eigen-decomposition of a balanced 3×3 real matrix.
#[derive(Clone, Debug)]
pub struct Eigen3 {
    /// Eigenvalues, real ones first in descending order.
    pub values: [Complex64; 3],
    /// Unit-norm eigenvectors as columns, in balanced coordinates.
    pub vectors: Matrix3<Complex64>,
    /// Inverse of `vectors`.
    pub inverse: Matrix3<Complex64>,
    /// `‖V‖_F · ‖V⁻¹‖_F`.
    pub condition: f64,
    /// Balancing diagonal `D` (the decomposition is of `D⁻¹ A D`).
    pub balance: Vector3<f64>,
}

fn cross(a: &[Complex64; 3], b: &[Complex64; 3]) -> [Complex64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(v: &[Complex64; 3]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition, or `None` when eigenvectors cannot be isolated or the
/// eigenvector matrix is singular.
pub fn eig3(a: &Matrix3<f64>) -> Option<Eigen3> {
    if a.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let d = balance(a);
    let mut b = *a;
    for i in 0..3 {
        for j in 0..3 {
            b[(i, j)] *= d[j] / d[i];
        }
    }
    let (c1, c2, c3) = char_coeffs(&b);
    let values = cubic_roots(c1, c2, c3);
    let scale = b.norm().max(f64::MIN_POSITIVE);
    // Nearly coincident eigenvalues leave the eigenvector basis unreliable.
    for i in 0..3 {
        for j in i + 1..3 {
            if (values[i] - values[j]).norm() < 1e-6 * scale {
                return None;
            }
        }
    }

    let mut vectors = Matrix3::<Complex64>::zeros();
    for (k, &lam) in values.iter().enumerate() {
        let rows: Vec<[Complex64; 3]> = (0..3)
            .map(|i| {
                let mut r = [Complex64::new(0.0, 0.0); 3];
                for (j, rj) in r.iter_mut().enumerate() {
                    *rj = Complex64::new(b[(i, j)], 0.0);
                }
                r[i] -= lam;
                r
            })
            .collect();
        let candidates = [
            cross(&rows[0], &rows[1]),
            cross(&rows[0], &rows[2]),
            cross(&rows[1], &rows[2]),
        ];
        let best = candidates
            .iter()
            .max_by(|x, y| norm3(x).partial_cmp(&norm3(y)).expect("finite"))
            .expect("three candidates");
        let n = norm3(best);
        if !(n > 1e-13 * scale * scale) {
            return None;
        }
        for i in 0..3 {
            vectors[(i, k)] = best[i] / n;
        }
    }
    let inverse = vectors.try_inverse()?;
    let condition = vectors.norm() * inverse.norm();
    if !condition.is_finite() {
        return None;
    }
    Some(Eigen3 {
        values,
        vectors,
        inverse,
        condition,
        balance: d,
    })
}

/// Which algorithm a [`LinearFlow`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowMethod {
    Eigen,
    ScalingSquaring,
}

/// Precomputed solver for `ẋ = A x` that can be evaluated at any time.
#[derive(Clone, Debug)]
pub struct LinearFlow {
    matrix: Matrix3<f64>,
    eigen: Option<Eigen3>,
}

impl LinearFlow {
    pub fn new(a: &Matrix3<f64>) -> Self {
        let eigen = eig3(a).filter(|e| e.condition <= EIG_COND_LIMIT);
        Self { matrix: *a, eigen }
    }

    pub fn method(&self) -> FlowMethod {
        if self.eigen.is_some() {
            FlowMethod::Eigen
        } else {
            FlowMethod::ScalingSquaring
        }
    }

    /// Eigenvector condition number, when the eigen path is used.
    pub fn condition(&self) -> Option<f64> {
        self.eigen.as_ref().map(|e| e.condition)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Propagator `e^{At}`.
    pub fn propagator(&self, t: f64) -> Matrix3<f64> {
        match &self.eigen {
            Some(e) => {
                let mut scaled = e.vectors;
                for k in 0..3 {
                    let f = (e.values[k] * t).exp();
                    for i in 0..3 {
                        scaled[(i, k)] *= f;
                    }
                }
                let prod = scaled * e.inverse;
                let mut out = Matrix3::<f64>::zeros();
                for i in 0..3 {
                    for j in 0..3 {
                        out[(i, j)] = prod[(i, j)].re * e.balance[i] / e.balance[j];
                    }
                }
                out
            }
            None => (self.matrix * t).exp(),
        }
    }

    /// `e^{At} x0`.
    pub fn apply(&self, t: f64, x0: &Vector3<f64>) -> Vector3<f64> {
        self.propagator(t) * x0
    }
}

/// Matrix exponential `e^{At}`.
pub fn expm3(a: &Matrix3<f64>, t: f64) -> Matrix3<f64> {
    LinearFlow::new(a).propagator(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_matrix_gives_identity() {
        let e = expm3(&Matrix3::zeros(), 3.0);
        assert!((e - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix3::from_diagonal(&Vector3::new(-1.0, -2.0, -3.0));
        let e = expm3(&a, 1.0);
        let exact = Matrix3::from_diagonal(&Vector3::new(
            (-1.0f64).exp(),
            (-2.0f64).exp(),
            (-3.0f64).exp(),
        ));
        assert!((e - exact).norm() < 1e-14);
    }

    #[test]
    fn rotation_block() {
        let a = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -0.5);
        let flow = LinearFlow::new(&a);
        assert_eq!(flow.method(), FlowMethod::Eigen);
        let e = flow.propagator(1.0);
        assert!((e[(0, 0)] - 1f64.cos()).abs() < 1e-14);
        assert!((e[(1, 0)] - 1f64.sin()).abs() < 1e-14);
        assert!((e[(2, 2)] - (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn defective_matrix_uses_fallback() {
        let a = Matrix3::new(-1.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -2.0);
        let flow = LinearFlow::new(&a);
        assert_eq!(flow.method(), FlowMethod::ScalingSquaring);
        let e = flow.propagator(2.0);
        assert!((e[(0, 1)] - 2.0 * (-2.0f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn char_coeffs_of_diagonal() {
        let a = Matrix3::from_diagonal(&Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(char_coeffs(&a), (-6.0, 11.0, -6.0));
    }
}
