//! Sparse linear least squares, backed by faer's sparse QR.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};

/// Row-wise builder for a sparse system `A x ≈ b`.
#[derive(Debug, Default, Clone)]
pub struct SparseSystem {
    ncols: usize,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl SparseSystem {
    pub fn new(ncols: usize) -> Self {
        SparseSystem {
            ncols,
            ..Default::default()
        }
    }

    pub fn nrows(&self) -> usize {
        self.rhs.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Append one equation. Entries with equal column are summed; empty rows are skipped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) {
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (c, v) in entries {
            debug_assert!(c < self.ncols);
            match row.iter_mut().find(|(cc, _)| *cc == c) {
                Some(slot) => slot.1 += v,
                None => row.push((c, v)),
            }
        }
        row.retain(|(_, v)| *v != 0.0);
        if row.is_empty() {
            return;
        }
        let r = self.rhs.len();
        self.triplets
            .extend(row.into_iter().map(|(c, v)| (r, c, v)));
        self.rhs.push(rhs);
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        for &(r, c, v) in &self.triplets {
            y[r] += v * x[c];
        }
        y
    }

    /// `Aᵀ y`
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols];
        for &(r, c, v) in &self.triplets {
            x[c] += v * y[r];
        }
        x
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.triplets.iter().map(|t| t.2 * t.2).sum::<f64>().sqrt()
    }

    /// Least-squares solution with `refinements` (at least one) steps of
    /// iterative refinement.
    pub fn solve(&self, refinements: usize) -> Result<LsqSolution> {
        let (m, n) = (self.nrows(), self.ncols);
        if m < n {
            return Err(Error::invalid(format!(
                "least-squares system is underdetermined ({m} rows, {n} unknowns)"
            )));
        }
        let trips: Vec<Triplet<usize, usize, f64>> = self
            .triplets
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(m, n, &trips)
            .map_err(|e| Error::invalid(format!("sparse assembly failed: {e:?}")))?;
        let qr = a
            .sp_qr()
            .map_err(|e| Error::invalid(format!("sparse QR failed: {e:?}")))?;

        let lstsq = |b: &[f64]| -> Vec<f64> {
            let rhs = Mat::<f64>::from_fn(m, 1, |i, _| b[i]);
            let sol = qr.solve_lstsq(&rhs);
            (0..n).map(|i| sol[(i, 0)]).collect()
        };

        let mut x = lstsq(&self.rhs);
        let mut residual = self.residual(&x);
        let mut correction = 0.0;
        for _ in 0..refinements.max(1) {
            let dx = lstsq(&residual);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            let scale = max_abs(&x);
            correction = if scale > 0.0 {
                max_abs(&dx) / scale
            } else {
                0.0
            };
            residual = self.residual(&x);
        }
        let optimality = self.optimality(&residual);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Convergence {
                residual: f64::INFINITY,
                tolerance: 0.0,
            });
        }
        Ok(LsqSolution {
            x,
            residual,
            optimality,
            correction,
        })
    }

    /// `b - A x`
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.apply(x);
        self.rhs.iter().zip(ax).map(|(b, v)| b - v).collect()
    }

    /// Relative normal-equation residual `‖Aᵀr‖ / (‖A‖_F ‖r‖)`; zero for an exact fit.
    pub fn optimality(&self, residual: &[f64]) -> f64 {
        let rn = norm2(residual);
        if rn == 0.0 {
            return 0.0;
        }
        let atr = self.apply_transpose(residual);
        let fro = self.frobenius_norm();
        if fro == 0.0 {
            return 0.0;
        }
        norm2(&atr) / (fro * rn)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: Vec<f64>,
    /// `b - A x` per equation
    pub residual: Vec<f64>,
    pub optimality: f64,
    /// Size of the last refinement step relative to the solution, max-abs.
    pub correction: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_overdetermined_line() {
        // y = 2 + 3 t sampled with symmetric noise
        let ts = [0.0, 1.0, 2.0, 3.0, 4.0];
        let noise = [0.1, -0.1, 0.0, 0.1, -0.1];
        let mut sys = SparseSystem::new(2);
        for (t, e) in ts.iter().zip(noise) {
            sys.push_row([(0, 1.0), (1, *t)], 2.0 + 3.0 * t + e);
        }
        let sol = sys.solve(1).unwrap();
        // normal equations by hand
        let n = ts.len() as f64;
        let st: f64 = ts.iter().sum();
        let stt: f64 = ts.iter().map(|t| t * t).sum();
        let sy: f64 = ts.iter().zip(noise).map(|(t, e)| 2.0 + 3.0 * t + e).sum();
        let sty: f64 = ts
            .iter()
            .zip(noise)
            .map(|(t, e)| t * (2.0 + 3.0 * t + e))
            .sum();
        let det = n * stt - st * st;
        let a = (stt * sy - st * sty) / det;
        let b = (n * sty - st * sy) / det;
        assert!((sol.x[0] - a).abs() < 1e-12 && (sol.x[1] - b).abs() < 1e-12);
        assert!(sol.optimality < 1e-12);
    }

    #[test]
    fn duplicate_entries_are_summed_and_empty_rows_dropped() {
        let mut sys = SparseSystem::new(1);
        sys.push_row([(0, 1.0), (0, 1.0)], 4.0);
        sys.push_row([(0, 0.0)], 1.0);
        assert_eq!(sys.nrows(), 1);
        let sol = sys.solve(0).unwrap();
        assert!((sol.x[0] - 2.0).abs() < 1e-14);
        assert_eq!(sol.optimality, 0.0);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let mut sys = SparseSystem::new(2);
        sys.push_row([(0, 1.0), (1, 1.0)], 1.0);
        assert!(sys.solve(0).is_err());
    }
}
