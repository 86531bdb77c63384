//! Uniform grids on [0, 1], nodal fields, derivative stencils and quadrature.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stencil;

/// Smallest admissible node count.
pub const MIN_NODES: usize = 5;

/// Uniform mesh of `n` nodes on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_NODES {
            return Err(Error::invalid(format!(
                "grid needs at least {MIN_NODES} nodes, got {n}"
            )));
        }
        Ok(Grid {
            n,
            h: 1.0 / (n - 1) as f64,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Node `i`; the last node is exactly 1.
    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            1.0
        } else {
            i as f64 * self.h
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }
}

/// Make a uniform grid with `n` nodes.
pub fn make_grid(n: usize) -> Result<Grid> {
    Grid::new(n)
}

/// Real values sampled at the nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::invalid(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.n()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at node {i}")));
        }
        Ok(Field { grid, values })
    }

    /// Construct without the finiteness check. Callers guarantee length.
    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n());
        Field { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Field::from_vec(grid, vec![0.0; grid.n()])
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field::from_vec(grid, vec![c; grid.n()])
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Field::from_vec(grid, (0..grid.n()).map(|i| f(grid.x(i))).collect())
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Nodewise product.
    pub fn mul_pointwise(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        ))
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        ))
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::invalid(format!(
                "grid mismatch: {} vs {} nodes",
                self.grid.n(),
                other.grid.n()
            )));
        }
        Ok(())
    }

    /// Max-abs difference to another field on the same grid.
    pub fn max_abs_diff(&self, other: &Field) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

impl Add<&Field> for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.axpy(1.0, rhs)
            .expect("grid mismatch in Field addition")
    }
}

impl Sub<&Field> for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.axpy(-1.0, rhs)
            .expect("grid mismatch in Field subtraction")
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, a: f64) -> Field {
        self.map(|v| a * v)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

/// Per-node derivative stencils for one grid and derivative order.
#[derive(Debug, Clone)]
pub struct DiffOperator {
    grid: Grid,
    order: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

impl DiffOperator {
    pub fn new(grid: Grid, order: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::invalid(format!(
                "derivative order must be 1, 2 or 3, got {order}"
            )));
        }
        if grid.n() < 2 * order + 1 {
            return Err(Error::invalid(format!(
                "grid of {} nodes too coarse for derivative order {order}",
                grid.n()
            )));
        }
        let last = grid.n() - 1;
        let rows = (0..grid.n())
            .map(|i| stencil::line_stencil(i, 0, last, order, grid.h()))
            .collect();
        Ok(DiffOperator { grid, order, rows })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Stencil at node `i`: first index and weights.
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let (s, w) = &self.rows[i];
        (*s, w)
    }

    /// Derivative at node `i` only.
    pub fn at(&self, values: &[f64], i: usize) -> f64 {
        let (s, w) = &self.rows[i];
        w.iter().zip(&values[*s..]).map(|(c, v)| c * v).sum()
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        if *f.grid() != self.grid {
            return Err(Error::invalid("field grid differs from operator grid"));
        }
        Ok(Field::from_vec(
            self.grid,
            (0..self.grid.n()).map(|i| self.at(f.values(), i)).collect(),
        ))
    }
}

/// Derivative of order 1, 2 or 3 with second-order stencils: centred in the
/// interior, sliding one-sided windows near the ends.
pub fn diff(f: &Field, order: usize) -> Result<Field> {
    DiffOperator::new(*f.grid(), order)?.apply(f)
}

/// Composite trapezoid rule over [0, 1].
pub fn integrate(f: &Field) -> f64 {
    trapezoid(f.values(), f.grid().h())
}

/// Trapezoid rule over equally spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_basics() {
        let g = make_grid(5).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(101).unwrap();
        assert!((g.h() - 0.01).abs() < 1e-15);
        assert_eq!(g.x(100), 1.0);
        assert!(make_grid(2).is_err());
        assert!(make_grid(4).is_err());
    }

    #[test]
    fn grid_spacing_invariant() {
        for n in [5, 7, 33, 201, 1000] {
            let g = make_grid(n).unwrap();
            assert!((g.h() * (n - 1) as f64 - 1.0).abs() < 1e-14);
            let x = g.nodes();
            assert_eq!(x[0], 0.0);
            assert!(x.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn field_rejects_bad_input() {
        let g = make_grid(5).unwrap();
        assert!(Field::new(g, vec![0.0; 4]).is_err());
        assert!(Field::new(g, vec![0.0, 1.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn diff_polynomial_exactness() {
        let g = make_grid(11).unwrap();
        let sq = Field::from_fn(g, |x| x * x);
        let d = diff(&sq, 1).unwrap();
        for i in 0..g.n() {
            assert!((d.at(i) - 2.0 * g.x(i)).abs() < 1e-12, "node {i}");
        }
        let d2 = diff(&sq, 2).unwrap();
        assert!(d2.values().iter().all(|v| (v - 2.0).abs() < 1e-9));
        let cube = Field::from_fn(g, |x| x * x * x);
        let d3 = diff(&cube, 3).unwrap();
        assert!(d3.values().iter().all(|v| (v - 6.0).abs() < 1e-8));
        let c = Field::constant(g, 3.5);
        for k in 1..=3 {
            assert!(diff(&c, k).unwrap().max_abs() < 1e-8);
        }
    }

    #[test]
    fn diff_rejects_coarse_grid_and_bad_order() {
        let g = make_grid(6).unwrap();
        let f = Field::zeros(g);
        assert!(diff(&f, 3).is_err());
        assert!(diff(&f, 2).is_ok());
        assert!(diff(&f, 4).is_err());
        assert!(diff(&f, 0).is_err());
    }

    #[test]
    fn integrate_values() {
        let g = make_grid(101).unwrap();
        assert!((integrate(&Field::constant(g, 1.0)) - 1.0).abs() < 1e-14);
        assert!((integrate(&Field::from_fn(g, |x| x)) - 0.5).abs() < 1e-14);
        let s = integrate(&Field::from_fn(g, |x| (std::f64::consts::PI * x).sin()));
        assert!((s - 2.0 / std::f64::consts::PI).abs() < 1e-4);
    }

    #[test]
    fn integrate_second_order_refinement() {
        let exact = 2.0 / std::f64::consts::PI;
        let errs: Vec<f64> = [51, 101, 201]
            .iter()
            .map(|&n| {
                let g = make_grid(n).unwrap();
                (integrate(&Field::from_fn(g, |x| (std::f64::consts::PI * x).sin())) - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn diff_second_order_refinement() {
        let f = |x: f64| (2.0 * x).sin();
        let f3 = |x: f64| -8.0 * (2.0 * x).cos();
        let errs: Vec<f64> = [41, 81, 161]
            .iter()
            .map(|&n| {
                let g = make_grid(n).unwrap();
                let d = diff(&Field::from_fn(g, f), 3).unwrap();
                (0..n).fold(0.0f64, |m, i| m.max((d.at(i) - f3(g.x(i))).abs()))
            })
            .collect();
        assert!(
            errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5,
            "{errs:?}"
        );
    }

    proptest! {
        #[test]
        fn diff_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, order in 1usize..=3,
                          c1 in -2.0f64..2.0, c2 in -2.0f64..2.0) {
            let g = make_grid(17).unwrap();
            let f = Field::from_fn(g, |x| (c1 * x).sin() + x * x);
            let h = Field::from_fn(g, |x| (c2 * x).cos() - x);
            let lhs = diff(&(&(&f * a) + &(&h * b)), order).unwrap();
            let rhs = &(&diff(&f, order).unwrap() * a) + &(&diff(&h, order).unwrap() * b);
            let scale = 1.0 + lhs.max_abs();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10 * scale);
        }

        #[test]
        fn integrate_is_positive_and_linear(vals in proptest::collection::vec(0.0f64..10.0, 9),
                                           a in -2.0f64..2.0) {
            let g = make_grid(9).unwrap();
            let f = Field::new(g, vals).unwrap();
            prop_assert!(integrate(&f) >= 0.0);
            let lin = integrate(&(&f * a));
            prop_assert!((lin - a * integrate(&f)).abs() <= 1e-12 * (1.0 + lin.abs()));
        }
    }
}
