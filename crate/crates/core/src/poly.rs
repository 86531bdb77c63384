//! Polynomial collocation for the `k`/`l` kernel problem.
//!
//! The ansatz
//!
//! ```text
//! K(x, y) = (y - x)(1 - y) [ -λ/3 + (y - x) R(x, y) ]
//! ```
//!
//! satisfies `K(x,1) = 0`, `K(x,x) = 0` and `K_x(x,x) = λ(1-x)/3` identically,
//! so only the PDE remains. `R` is expanded in products of shifted Legendre
//! polynomials of total degree `<= N` and fitted by least squares at
//! Gauss-Legendre points mapped onto the triangle.

use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        dp = if d != 0.0 { d } else { dp };
        // ascending order on [0, 1]
        nodes[n - 1 - i] = 0.5 * (t + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * t * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// `d^k/dz^k P_a(2z - 1)` for `a = 0..=n`, `k = 0..=kmax`, indexed `[k][a]`.
pub fn shifted_legendre(n: usize, z: f64, kmax: usize) -> Vec<Vec<f64>> {
    let t = 2.0 * z - 1.0;
    let mut v = vec![vec![0.0; n + 1]; kmax + 1];
    v[0][0] = 1.0;
    if n >= 1 {
        v[0][1] = t;
        if kmax >= 1 {
            v[1][1] = 1.0;
        }
    }
    for a in 1..n {
        let (c1, c0) = ((2 * a + 1) as f64, a as f64);
        for k in 0..=kmax {
            let lower = if k > 0 { v[k - 1][a] } else { 0.0 };
            v[k][a + 1] =
                (c1 * (t * v[k][a] + k as f64 * lower) - c0 * v[k][a - 1]) / (a + 1) as f64;
        }
    }
    for (k, row) in v.iter_mut().enumerate() {
        let s = 2f64.powi(k as i32);
        for x in row.iter_mut() {
            *x *= s;
        }
    }
    v
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Polynomial solution of the `k`/`l` problem with coefficient `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyKernel {
    degree: usize,
    lambda: f64,
    basis: Vec<(usize, usize)>,
    coef: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyFit {
    pub equations: usize,
    pub unknowns: usize,
    /// Max-abs PDE residual over the collocation points.
    pub residual: f64,
}

impl PolyKernel {
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Fit `K_xxx + K_yyy + K_x + K_y = s K` with slope data `λ(1-x)/3`.
    pub fn solve(lambda: f64, sigma: f64, degree: usize) -> Result<(Self, PolyFit)> {
        if degree > 40 {
            return Err(Error::invalid(format!(
                "polynomial degree {degree} is too large (max 40)"
            )));
        }
        let basis: Vec<(usize, usize)> = (0..=degree)
            .flat_map(|a| (0..=degree - a).map(move |b| (a, b)))
            .collect();
        let npts = 2 * degree + 6;
        let (g, _) = gauss_legendre(npts);
        let pts: Vec<(f64, f64)> = g
            .iter()
            .flat_map(|&y| g.iter().map(move |&u| (u * y, y)))
            .collect();
        let rows = pts.len();
        let cols = basis.len();
        let mut a = Mat::<f64>::zeros(rows, cols);
        let mut rhs = Mat::<f64>::zeros(rows, 1);
        for (r, &(x, y)) in pts.iter().enumerate() {
            let px = shifted_legendre(degree, x, 3);
            let py = shifted_legendre(degree, y, 3);
            let d = y - x;
            // w = (y-x)^2 (1-y) and its pure x / pure y derivatives
            let wx = [
                d * d * (1.0 - y),
                -2.0 * d * (1.0 - y),
                2.0 * (1.0 - y),
                0.0,
            ];
            let wy = [
                d * d * (1.0 - y),
                2.0 * d * (1.0 - y) - d * d,
                2.0 * (1.0 - y) - 4.0 * d,
                -6.0,
            ];
            for (c, &(ia, ib)) in basis.iter().enumerate() {
                let dx = |k: usize| {
                    (0..=k)
                        .map(|j| binom(k, j) * wx[j] * px[k - j][ia])
                        .sum::<f64>()
                        * py[0][ib]
                };
                let dy = |k: usize| {
                    (0..=k)
                        .map(|j| binom(k, j) * wy[j] * py[k - j][ib])
                        .sum::<f64>()
                        * px[0][ia]
                };
                a[(r, c)] = dx(3) + dx(1) + dy(3) + dy(1) - sigma * dx(0);
            }
            // base term B = -(λ/3)(y-x)(1-y); its third derivatives vanish
            let b = -lambda / 3.0 * d * (1.0 - y);
            let bx = lambda / 3.0 * (1.0 - y);
            let by = -lambda / 3.0 * (1.0 - 2.0 * y + x);
            rhs[(r, 0)] = -(bx + by - sigma * b);
        }
        let sol = a.col_piv_qr().solve_lstsq(&rhs);
        let coef: Vec<f64> = (0..cols).map(|c| sol[(c, 0)]).collect();
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Convergence {
                residual: f64::INFINITY,
                tolerance: 0.0,
            });
        }
        let mut residual = 0.0f64;
        for r in 0..rows {
            let fit: f64 = (0..cols).map(|c| a[(r, c)] * coef[c]).sum();
            residual = residual.max((fit - rhs[(r, 0)]).abs());
        }
        Ok((
            PolyKernel {
                degree,
                lambda,
                basis,
                coef,
            },
            PolyFit {
                equations: rows,
                unknowns: cols,
                residual,
            },
        ))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = y - x;
        if d == 0.0 || y == 1.0 {
            return 0.0;
        }
        let px = shifted_legendre(self.degree, x, 0);
        let py = shifted_legendre(self.degree, y, 0);
        let r: f64 = self
            .basis
            .iter()
            .zip(&self.coef)
            .map(|(&(a, b), c)| c * px[0][a] * py[0][b])
            .sum();
        d * (1.0 - y) * (-self.lambda / 3.0 + d * r)
    }
}
