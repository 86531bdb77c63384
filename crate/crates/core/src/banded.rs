//! Banded LU factorisation with partial pivoting.
//!
//! Storage follows the LAPACK `gbtrf` layout: a matrix with `kl` sub- and
//! `ku` super-diagonals is kept in `2*kl + ku + 1` rows so row interchanges
//! have room for the extra fill above the diagonal.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    // column-major band: entry (i, j) at ab[j * ldab + (kl + ku + i - j)]
    ab: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        BandedMatrix {
            n,
            kl,
            ku,
            ab: vec![0.0; ldab * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && i + self.ku >= j
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        j * self.ldab() + (self.kl + self.ku + i - j)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.slot(i, j)]
        } else {
            0.0
        }
    }

    /// Add `v` to entry `(i, j)`; panics if outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j));
        let s = self.slot(i, j);
        self.ab[s] = v;
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
        y
    }

    pub fn factor(mut self) -> Result<BandedLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = ku + kl;
        let mut piv = vec![0usize; n];
        // upper bandwidth after pivoting
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            // pivot search in column j, rows j..=j+km
            let mut p = 0usize;
            let mut best = 0.0f64;
            for r in 0..=km {
                let v = self.ab[j * self.ldab() + kv + r].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[j] = j + p;
            if best == 0.0 {
                return Err(Error::Config(format!(
                    "singular banded system: zero pivot in column {j}"
                )));
            }
            ju = ju.max((j + ku + p).min(n - 1));
            if p != 0 {
                for c in j..=ju {
                    let a = self.slot(j, c);
                    let b = self.slot(j + p, c);
                    self.ab.swap(a, b);
                }
            }
            let pivot = self.ab[self.slot(j, j)];
            for r in 1..=km {
                let s = self.slot(j + r, j);
                self.ab[s] /= pivot;
            }
            for c in (j + 1)..=ju {
                let ujc = self.ab[self.slot(j, c)];
                if ujc == 0.0 {
                    continue;
                }
                for r in 1..=km {
                    let l = self.ab[self.slot(j + r, j)];
                    let s = self.slot(j + r, c);
                    self.ab[s] -= l * ujc;
                }
            }
        }
        Ok(BandedLu { m: self, piv })
    }
}

/// Factorised banded matrix, reusable for many right-hand sides.
#[derive(Debug, Clone)]
pub struct BandedLu {
    m: BandedMatrix,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.m;
        let (n, kl, ku) = (m.n, m.kl, m.ku);
        assert_eq!(b.len(), n);
        // L y = P b
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                b.swap(j, p);
            }
            let km = kl.min(n - 1 - j);
            let bj = b[j];
            for r in 1..=km {
                b[j + r] -= m.ab[m.slot(j + r, j)] * bj;
            }
        }
        // U x = y, U has bandwidth kl + ku
        let kv = kl + ku;
        for j in (0..n).rev() {
            b[j] /= m.ab[m.slot(j, j)];
            let bj = b[j];
            let lo = j.saturating_sub(kv);
            for i in lo..j {
                b[i] -= m.ab[m.slot(i, j)] * bj;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
