//! Gauss–Jacobi quadrature for the weight `(1-x)^a (1+x)^b` on `[-1, 1]`.
//!
//! Nodes are the eigenvalues of the Jacobi matrix, polished by Newton steps on
//! the orthonormal recurrence. Weights use the Christoffel form
//! `1 / Σ_k p_k(x)²`, which keeps small weights relatively accurate; they are
//! returned up to the constant total mass of the weight function.

use nalgebra::DMatrix;

/// Recurrence coefficients of the orthonormal Jacobi polynomials:
/// `x p_k = e_{k+1} p_{k+1} + d_k p_k + e_k p_{k-1}`.
fn recurrence(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut d = Vec::with_capacity(n);
    let mut e = vec![0.0; n + 1];
    for k in 0..n {
        let s = 2.0 * k as f64 + a + b;
        d.push(if k == 0 {
            (b - a) / (a + b + 2.0)
        } else {
            (b * b - a * a) / (s * (s + 2.0))
        });
    }
    for (k, ek) in e.iter_mut().enumerate().skip(1) {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        let sq = if k == 1 {
            4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b).powi(2) * (3.0 + a + b))
        } else {
            4.0 * kf * (kf + a) * (kf + b) * (kf + a + b) / (s * s * (s + 1.0) * (s - 1.0))
        };
        *ek = sq.sqrt();
    }
    (d, e)
}

/// `(p_n(x), p_n'(x), Σ_{k<n} p_k(x)²)` for the orthonormal family with `p_0 = 1`.
fn evaluate(x: f64, d: &[f64], e: &[f64]) -> (f64, f64, f64) {
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut dp_prev, mut dp) = (0.0, 0.0);
    let mut sum = 0.0;
    for k in 0..d.len() {
        sum += p * p;
        let p_next = ((x - d[k]) * p - e[k] * p_prev) / e[k + 1];
        let dp_next = (p + (x - d[k]) * dp - e[k] * dp_prev) / e[k + 1];
        (p_prev, p) = (p, p_next);
        (dp_prev, dp) = (dp, dp_next);
    }
    (p, dp, sum)
}

/// The `n`-point rule as `(nodes, weights)`, nodes ascending.
pub(crate) fn gauss_jacobi(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && a > -1.0 && b > -1.0);
    let (d, e) = recurrence(n, a, b);
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = d[k];
        if k + 1 < n {
            m[(k, k + 1)] = e[k + 1];
            m[(k + 1, k)] = e[k + 1];
        }
    }
    let mut nodes: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    nodes.sort_by(|x, y| x.total_cmp(y));
    let mut weights = Vec::with_capacity(n);
    for x in &mut nodes {
        for _ in 0..3 {
            let (p, dp, _) = evaluate(*x, &d, &e);
            if dp == 0.0 {
                break;
            }
            let step = p / dp;
            let next = (*x - step).clamp(-1.0, 1.0);
            if next == *x {
                break;
            }
            *x = next;
        }
        let (_, _, sum) = evaluate(*x, &d, &e);
        weights.push(1.0 / sum);
    }
    (nodes, weights)
}
