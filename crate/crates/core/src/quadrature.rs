//! Gauss-Laguerre quadrature on [0, inf) with weight e^{-x}.
//!
//! Nodes and weights come from the Golub-Welsch eigenproblem of the Jacobi
//! matrix of the Laguerre polynomials. The denoiser integrals only ever need
//! the 128-node rule, which is computed once and cached.

use std::sync::OnceLock;

use faer::{Mat, Side};

/// Number of nodes used by the radial denoiser integrals.
pub const RADIAL_NODES: usize = 128;

/// Computes the n-point Gauss-Laguerre rule: pairs (node, weight) with
/// sum_i w_i f(x_i) ~ int_0^inf f(x) e^{-x} dx, exact for polynomials of
/// degree <= 2n-1.
pub fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature order must be >= 1");
    let mut jacobi = Mat::<f64>::zeros(n, n);
    for k in 0..n {
        jacobi[(k, k)] = (2 * k + 1) as f64;
    }
    for k in 1..n {
        let b = k as f64;
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let evd = jacobi
        .self_adjoint_eigen(Side::Lower)
        .expect("symmetric tridiagonal eigendecomposition cannot fail");
    let nodes = evd.S();
    let vectors = evd.U();
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = nodes[i];
            let q0 = vectors[(0, i)];
            (x, q0 * q0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// The cached 128-node rule.
pub fn radial_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_laguerre(RADIAL_NODES))
}

/// Computes the n-point Gauss-Legendre rule mapped to [0, 1]:
/// sum_i w_i f(x_i) ~ int_0^1 f(x) dx.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature order must be >= 1");
    let mut jacobi = Mat::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let evd = jacobi
        .self_adjoint_eigen(Side::Lower)
        .expect("symmetric tridiagonal eigendecomposition cannot fail");
    let nodes = evd.S();
    let vectors = evd.U();
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = nodes[i];
            let q0 = vectors[(0, i)];
            // weight on [-1, 1] is 2 q0^2; halve for the unit interval
            ((x + 1.0) / 2.0, q0 * q0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// The cached 128-node unit-interval Legendre panel.
pub fn panel_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(RADIAL_NODES))
}
