//! Gauss–Hermite quadrature for the weight `e^{−x²}`.
//!
//! Nodes come from the symmetric tridiagonal Jacobi matrix of the physicists'
//! Hermite polynomials (Golub–Welsch), are polished by Newton steps on the
//! orthonormal three-term recurrence, and the weights are the Christoffel
//! numbers `1 / Σ_k φ_k(x_i)²`.
//!
//! ```text
//! φ_0 = π^{-1/4},  φ_1 = √2 x φ_0,
//! φ_{k+1} = √(2/(k+1)) x φ_k − √(k/(k+1)) φ_{k−1},
//! φ_n'(x) = √(2n) φ_{n−1}(x).
//! ```

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// A Gauss–Hermite rule: `∫ f(x) e^{−x²} dx ≈ Σ w_i f(x_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal recurrence values `(φ_n(x), φ_{n−1}(x), Σ_{k<n} φ_k(x)²)`.
fn recurrence(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Builds the `order`-point rule. Valid orders are `2..=256`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if !(2..=256).contains(&order) {
        return Err(Error::invalid("order", format!("{order} is outside 2..=256")));
    }
    let n = order;
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = off;
        jacobi[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));

    let nf = n as f64;
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..4 {
            let (phi_n, phi_nm1, _) = recurrence(n, *x);
            let deriv = (2.0 * nf).sqrt() * phi_nm1;
            if deriv == 0.0 {
                break;
            }
            let step = phi_n / deriv;
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, _, sum_sq) = recurrence(n, *x);
        weights.push(1.0 / sum_sq);
    }
    // Enforce exact mirror symmetry of the rule.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule {
        order,
        nodes,
        weights,
    })
}

impl QuadratureRule {
    /// `∫ f(x) e^{−x²} dx`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `E[h(G)]` for `G ~ N(mean, var)`, via `G = mean + √(2 var) x`.
    pub fn expect_normal(&self, mean: f64, var: f64, h: impl Fn(f64) -> f64) -> f64 {
        let scale = (2.0 * var.max(0.0)).sqrt();
        self.integrate(|x| h(mean + scale * x)) / PI.sqrt()
    }

    /// `E[h(Ξ, Z)]` for independent standard normals `Ξ, Z` on the tensor grid.
    pub fn expect_std_normal_2d(&self, h: impl Fn(f64, f64) -> f64) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        let mut total = 0.0;
        for (&xi, &wi) in self.nodes.iter().zip(&self.weights) {
            let mut row = 0.0;
            for (&xj, &wj) in self.nodes.iter().zip(&self.weights) {
                row += wj * h(s2 * xi, s2 * xj);
            }
            total += wi * row;
        }
        total / PI
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [2, 5, 16, 64, 128, 256] {
            let q = gauss_hermite(n).unwrap();
            let s: f64 = q.weights.iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-13, "n={n}: {s}");
        }
    }

    #[test]
    fn second_moment() {
        let q = gauss_hermite(20).unwrap();
        let m2 = q.integrate(|x| x * x);
        assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_order() {
        assert!(gauss_hermite(1).is_err());
        assert!(gauss_hermite(257).is_err());
    }

    #[test]
    fn normal_mgf() {
        let q = gauss_hermite(64).unwrap();
        let v = q.expect_normal(-3.0, 2.0, f64::exp);
        let exact = (-3.0f64 + 1.0).exp();
        assert!((v - exact).abs() / exact < 1e-10);
    }
}
