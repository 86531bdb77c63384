//! Backstepping gain kernels on the triangle `{0 <= x <= y <= 1}`.
//!
//! All four kernels reduce to one Goursat-type problem. `k` and `l` solve
//!
//! ```text
//! K_xxx + K_yyy + K_x + K_y = s K,   K(x,1) = 0,  K(x,x) = 0,  K_x(x,x) = λ(1-x)/3
//! ```
//!
//! with `s = -λ` for `k` and `s = +λ` for `l`. The observer kernels follow from
//! the reflection `(x, y) -> (1-y, 1-x)`, which maps the triangle and the lattice
//! onto themselves: `p(x,y) = k(1-y, 1-x)` and `r(x,y) = l(1-y, 1-x)`.
//!
//! Two solvers are available. The default fits a polynomial ansatz that
//! satisfies the three boundary conditions exactly and collocates the PDE
//! (see [`crate::poly`]); lattice values are samples of that polynomial. The
//! lattice solver imposes the PDE with finite differences at every unknown
//! lattice node where a five-point window fits in both directions, imposes the
//! diagonal slope with a one-sided stencil transverse to the diagonal,
//! eliminates the homogeneous Dirichlet nodes, and solves the overdetermined
//! system in the least-squares sense.

use std::fmt::Write as _;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{trapezoid, Field, Grid};
use crate::lsq::SparseSystem;
use crate::poly::PolyKernel;
use crate::stencil::{line_stencil, offsets_weights};

/// Uniform lattice on the triangle `0 <= x <= y <= 1` with `m` nodes per side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriGrid {
    m: usize,
    h: f64,
}

impl TriGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 5 {
            return Err(Error::invalid(format!(
                "triangular grid needs at least 5 nodes per side, got {m}"
            )));
        }
        Ok(TriGrid {
            m,
            h: 1.0 / (m - 1) as f64,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of stored nodes, `m (m + 1) / 2`.
    pub fn len(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Packed row-major index of node `(i, j)`, `i <= j`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.m, "node ({i}, {j}) outside triangle");
        j * (j + 1) / 2 + i
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.m {
            1.0
        } else {
            i as f64 * self.h
        }
    }

    /// All nodes `(i, j)` with `i <= j`, in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m).flat_map(|j| (0..=j).map(move |i| (i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    /// `k`: control gains, forward transform of the observer state.
    ControlK,
    /// `p`: output-injection gains, transform of the observer error.
    ObserverP,
    /// `l`: inverse of the `k` transform.
    InverseL,
    /// `r`: inverse of the `p` transform.
    InverseR,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::ControlK,
        KernelKind::ObserverP,
        KernelKind::InverseL,
        KernelKind::InverseR,
    ];

    /// Coefficient `s` in `K_xxx + K_yyy + K_x + K_y = s K`.
    pub fn pde_coefficient(self, lambda: f64) -> f64 {
        match self {
            KernelKind::ControlK | KernelKind::InverseR => -lambda,
            KernelKind::ObserverP | KernelKind::InverseL => lambda,
        }
    }

    /// Prescribed `K_x(x, x)`.
    pub fn diagonal_slope(self, lambda: f64, x: f64) -> f64 {
        match self {
            KernelKind::ControlK | KernelKind::InverseL => lambda * (1.0 - x) / 3.0,
            KernelKind::ObserverP | KernelKind::InverseR => lambda * x / 3.0,
        }
    }

    /// Observer-side kernels are reflections of the control-side problem.
    fn is_reflected(self) -> bool {
        matches!(self, KernelKind::ObserverP | KernelKind::InverseR)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            KernelKind::ControlK => "k",
            KernelKind::ObserverP => "p",
            KernelKind::InverseL => "l",
            KernelKind::InverseR => "r",
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMethod {
    /// Polynomial collocation of total degree `degree`.
    Polynomial { degree: usize },
    /// Finite-difference collocation on the lattice itself.
    Lattice,
}

impl Default for KernelMethod {
    fn default() -> Self {
        KernelMethod::Polynomial { degree: 14 }
    }
}

/// Diagnostics from the least-squares solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: KernelMethod,
    pub equations: usize,
    pub unknowns: usize,
    /// Quantity held to the tolerance: max-abs PDE residual at the collocation
    /// points for the polynomial solver, size of the last refinement step
    /// relative to the solution for the lattice solver.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub method: KernelMethod,
    /// Bound on [`SolveReport::residual`].
    pub tolerance: f64,
    /// Iterative-refinement sweeps after the sparse QR solve (lattice solver).
    pub refinements: usize,
    /// Weight of the diagonal-slope equations relative to the PDE equations
    /// (lattice solver).
    pub slope_weight: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: KernelMethod::default(),
            tolerance: 1e-8,
            refinements: 2,
            slope_weight: 1.0,
        }
    }
}

/// A gain kernel sampled on a [`TriGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    tri: TriGrid,
    values: Vec<f64>,
    kind: KernelKind,
    lambda: f64,
    report: Option<SolveReport>,
    // exact representation when solved by polynomial collocation
    poly: Option<Arc<PolyKernel>>,
}

impl Kernel {
    /// Kernel from explicit lattice values (storage order of [`TriGrid::nodes`]).
    pub fn from_values(
        tri: TriGrid,
        kind: KernelKind,
        lambda: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != tri.len() {
            return Err(Error::invalid(format!(
                "kernel needs {} values, got {}",
                tri.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kernel values must be finite"));
        }
        Ok(Kernel {
            tri,
            values,
            kind,
            lambda,
            report: None,
            poly: None,
        })
    }

    pub fn zero(tri: TriGrid, kind: KernelKind, lambda: f64) -> Self {
        Kernel {
            tri,
            values: vec![0.0; tri.len()],
            kind,
            lambda,
            report: None,
            poly: None,
        }
    }

    fn from_poly(tri: TriGrid, kind: KernelKind, lambda: f64, poly: Arc<PolyKernel>) -> Self {
        let mut k = Kernel {
            tri,
            values: Vec::new(),
            kind,
            lambda,
            report: None,
            poly: Some(poly),
        };
        k.values = tri
            .nodes()
            .map(|(i, j)| k.eval(tri.coord(i), tri.coord(j)))
            .collect();
        k
    }

    pub fn tri(&self) -> &TriGrid {
        &self.tri
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn report(&self) -> Option<&SolveReport> {
        self.report.as_ref()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.tri.index(i, j)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value at an arbitrary point of the triangle. Exact for polynomial
    /// kernels; otherwise bilinear inside lattice cells and linear on the half
    /// cells cut by the diagonal.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match &self.poly {
            Some(p) => {
                let y = y.clamp(0.0, 1.0);
                let x = x.clamp(0.0, y);
                if self.kind.is_reflected() {
                    p.eval(1.0 - y, 1.0 - x)
                } else {
                    p.eval(x, y)
                }
            }
            None => interpolate(&self.tri, &self.values, x, y),
        }
    }

    /// The same kernel on another lattice, sampled exactly when a polynomial
    /// representation exists, by interpolation otherwise.
    pub fn resample(&self, tri: TriGrid) -> Kernel {
        if tri == self.tri {
            return self.clone();
        }
        if let Some(p) = &self.poly {
            let mut k = Kernel::from_poly(tri, self.kind, self.lambda, p.clone());
            k.report = self.report;
            return k;
        }
        let values = tri
            .nodes()
            .map(|(i, j)| self.eval(tri.coord(i), tri.coord(j)))
            .collect();
        Kernel {
            tri,
            values,
            kind: self.kind,
            lambda: self.lambda,
            report: None,
            poly: None,
        }
    }

    /// `K_x` on the lattice from second-order stencils along rows (one-sided at
    /// the diagonal). The single-node row at the corner takes the prescribed slope.
    pub fn x_derivative(&self) -> Vec<f64> {
        let tri = self.tri;
        let h = tri.h();
        tri.nodes()
            .map(|(i, j)| {
                match j {
                    0 => return self.kind.diagonal_slope(self.lambda, 0.0),
                    1 => return (self.at(1, 1) - self.at(0, 1)) / h,
                    _ => {}
                }
                let (s, w) = line_stencil(i, 0, j, 1, h);
                w.iter()
                    .enumerate()
                    .map(|(q, c)| c * self.at(s + q, j))
                    .sum()
            })
            .collect()
    }

    /// Values along a grid: `K(x_i, y_j)` for `i <= j`, resampled onto an
    /// `n`-node lattice matching `grid`.
    pub fn on_grid(&self, grid: &Grid) -> Kernel {
        self.resample(TriGrid::new(grid.n()).expect("grid has at least 5 nodes"))
    }

    fn reflected(&self, kind: KernelKind) -> Kernel {
        let m = self.tri.m();
        let values = self
            .tri
            .nodes()
            .map(|(i, j)| self.at(m - 1 - j, m - 1 - i))
            .collect();
        Kernel {
            tri: self.tri,
            values,
            kind,
            lambda: self.lambda,
            report: self.report,
            poly: self.poly.clone(),
        }
    }
}

fn interpolate(tri: &TriGrid, values: &[f64], x: f64, y: f64) -> f64 {
    let m = tri.m();
    let h = tri.h();
    let y = y.clamp(0.0, 1.0);
    let x = x.clamp(0.0, y);
    let snap = |a: f64| {
        let r = a.round();
        if (a - r).abs() < 1e-9 {
            r
        } else {
            a
        }
    };
    let a = snap(x / h);
    let b = snap(y / h);
    let i0 = (a.floor() as usize).min(m - 2);
    let j0 = (b.floor() as usize).min(m - 2);
    let fx = a - i0 as f64;
    let fy = b - j0 as f64;
    let v = |i: usize, j: usize| values[tri.index(i, j)];
    if i0 < j0 {
        v(i0, j0) * (1.0 - fx) * (1.0 - fy)
            + v(i0 + 1, j0) * fx * (1.0 - fy)
            + v(i0, j0 + 1) * (1.0 - fx) * fy
            + v(i0 + 1, j0 + 1) * fx * fy
    } else {
        // diagonal cell, upper-left half: vertices (i0,j0), (i0,j0+1), (i0+1,j0+1)
        let (fx, fy) = (fx.min(fy), fy);
        v(i0, j0) + fy * (v(i0, j0 + 1) - v(i0, j0)) + fx * (v(i0 + 1, j0 + 1) - v(i0, j0 + 1))
    }
}

/// Solve for one kernel with default solver options.
pub fn solve_kernel(kind: KernelKind, lambda: f64, tri: TriGrid) -> Result<Kernel> {
    solve_kernel_with(kind, lambda, tri, &SolverOptions::default())
}

pub fn solve_kernel_with(
    kind: KernelKind,
    lambda: f64,
    tri: TriGrid,
    opts: &SolverOptions,
) -> Result<Kernel> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    // p and r are reflections of k and l, whose PDE coefficient has the opposite sign
    let base = match kind {
        KernelKind::ControlK | KernelKind::ObserverP => KernelKind::ControlK,
        KernelKind::InverseL | KernelKind::InverseR => KernelKind::InverseL,
    };
    let solved = solve_goursat(base, lambda, tri, opts)?;
    Ok(if kind.is_reflected() {
        solved.reflected(kind)
    } else {
        solved
    })
}

/// Least-squares solve for the `k`/`l` form.
fn solve_goursat(
    kind: KernelKind,
    lambda: f64,
    tri: TriGrid,
    opts: &SolverOptions,
) -> Result<Kernel> {
    debug_assert!(!kind.is_reflected());
    let sigma = kind.pde_coefficient(lambda);
    match opts.method {
        KernelMethod::Polynomial { degree } => {
            let (poly, fit) = PolyKernel::solve(lambda, sigma, degree)?;
            if !(fit.residual <= opts.tolerance) {
                return Err(Error::Convergence {
                    residual: fit.residual,
                    tolerance: opts.tolerance,
                });
            }
            let mut k = Kernel::from_poly(tri, kind, lambda, Arc::new(poly));
            k.report = Some(SolveReport {
                method: opts.method,
                equations: fit.equations,
                unknowns: fit.unknowns,
                residual: fit.residual,
            });
            Ok(k)
        }
        KernelMethod::Lattice => {
            let (values, report) = solve_goursat_problem(
                tri,
                sigma,
                |_, _| 0.0,
                |x| kind.diagonal_slope(lambda, x),
                opts,
            )?;
            Ok(Kernel {
                tri,
                values,
                kind,
                lambda,
                report: Some(report),
                poly: None,
            })
        }
    }
}

/// Finite-difference collocation solve on the lattice of
///
/// ```text
/// K_xxx + K_yyy + K_x + K_y - s K = f(x, y),  K(x,1) = 0,  K(x,x) = 0,  K_x(x,x) = g(x)
/// ```
///
/// returning lattice values in storage order.
pub fn solve_goursat_problem(
    tri: TriGrid,
    sigma: f64,
    forcing: impl Fn(f64, f64) -> f64,
    slope: impl Fn(f64) -> f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let m = tri.m();
    let h = tri.h();

    // unknowns: strictly above the diagonal and below the edge y = 1
    let mut col = vec![usize::MAX; tri.len()];
    let mut unknowns = 0;
    for (i, j) in tri.nodes() {
        if i < j && j + 1 < m {
            col[tri.index(i, j)] = unknowns;
            unknowns += 1;
        }
    }
    let unknown = |i: usize, j: usize| {
        let c = col[tri.index(i, j)];
        (c != usize::MAX).then_some(c)
    };

    let mut sys = SparseSystem::new(unknowns);
    let h3 = h * h * h;
    for j in 1..m - 1 {
        for i in 0..j {
            // both lines need room for a five-point third-derivative window
            if j + 1 < 5 || m - i < 5 {
                continue;
            }
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(20);
            for deriv in [3, 1] {
                let (s, w) = line_stencil(i, 0, j, deriv, h);
                for (q, c) in w.iter().enumerate() {
                    if let Some(u) = unknown(s + q, j) {
                        row.push((u, c * h3));
                    }
                }
                let (s, w) = line_stencil(j, i, m - 1, deriv, h);
                for (q, c) in w.iter().enumerate() {
                    if let Some(u) = unknown(i, s + q) {
                        row.push((u, c * h3));
                    }
                }
            }
            if let Some(u) = unknown(i, j) {
                row.push((u, -sigma * h3));
            }
            sys.push_row(row, forcing(tri.coord(i), tri.coord(j)) * h3);
        }
    }

    // slope on the diagonal, rows scaled by h
    let fwd = offsets_weights(&[0, 1, 2], 1);
    let bwd = offsets_weights(&[0, -1, -2], 1);
    for i in 0..m {
        let wt = opts.slope_weight;
        let g = slope(tri.coord(i)) * h * wt;
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(3);
        if i >= 2 && i + 2 < m {
            // along (-1, +1): d/ds K = -K_x + K_y = -2 K_x on the diagonal
            for q in 0..3 {
                if let Some(u) = unknown(i - q, i + q) {
                    row.push((u, -0.5 * fwd[q] * wt));
                }
            }
        } else if i + 2 < m {
            // K_x = -K_y on the diagonal
            for q in 0..3 {
                if let Some(u) = unknown(i, i + q) {
                    row.push((u, -fwd[q] * wt));
                }
            }
        } else {
            for q in 0..3 {
                if let Some(u) = unknown(i - q, i) {
                    row.push((u, bwd[q] * wt));
                }
            }
        }
        sys.push_row(row, g);
    }

    let sol = sys.solve(opts.refinements)?;
    if !(sol.correction <= opts.tolerance) {
        return Err(Error::Convergence {
            residual: sol.correction,
            tolerance: opts.tolerance,
        });
    }
    let mut values = vec![0.0; tri.len()];
    for (idx, &c) in col.iter().enumerate() {
        if c != usize::MAX {
            values[idx] = sol.x[c];
        }
    }
    let report = SolveReport {
        method: KernelMethod::Lattice,
        equations: sys.nrows(),
        unknowns,
        residual: sol.correction,
    };
    Ok((values, report))
}

/// All four kernels for one λ, from two least-squares solves.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub k: Kernel,
    pub l: Kernel,
    pub p: Kernel,
    pub r: Kernel,
}

impl KernelSet {
    pub fn solve(lambda: f64, tri: TriGrid) -> Result<Self> {
        Self::solve_with(lambda, tri, &SolverOptions::default())
    }

    pub fn solve_with(lambda: f64, tri: TriGrid, opts: &SolverOptions) -> Result<Self> {
        let k = solve_kernel_with(KernelKind::ControlK, lambda, tri, opts)?;
        let l = solve_kernel_with(KernelKind::InverseL, lambda, tri, opts)?;
        let p = k.reflected(KernelKind::ObserverP);
        let r = l.reflected(KernelKind::InverseR);
        Ok(KernelSet { k, l, p, r })
    }

    pub fn lambda(&self) -> f64 {
        self.k.lambda()
    }

    pub fn get(&self, kind: KernelKind) -> &Kernel {
        match kind {
            KernelKind::ControlK => &self.k,
            KernelKind::ObserverP => &self.p,
            KernelKind::InverseL => &self.l,
            KernelKind::InverseR => &self.r,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Kernel> {
        [&self.k, &self.p, &self.l, &self.r].into_iter()
    }

    /// All four kernels resampled onto the lattice matching `grid`.
    pub fn on_grid(&self, grid: &Grid) -> KernelSet {
        KernelSet {
            k: self.k.on_grid(grid),
            l: self.l.on_grid(grid),
            p: self.p.on_grid(grid),
            r: self.r.on_grid(grid),
        }
    }
}

/// Max-abs residual of each boundary condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceResiduals {
    /// `K(x, x) = 0`
    pub diagonal: f64,
    /// `K_x(x, x)` against its prescribed slope
    pub derivative: f64,
    /// `K(x, 1) = 0` for `k`, `l`; `K(0, y) = 0` for `p`, `r`
    pub edge: f64,
}

impl TraceResiduals {
    pub fn max(&self) -> f64 {
        self.diagonal.max(self.derivative).max(self.edge)
    }
}

/// Boundary-condition residuals measured by finite differences along the
/// triangle boundary. The slope is measured along lattice rows (columns near
/// the corners), not with the transverse stencil the solver imposes.
pub fn trace_residuals(kern: &Kernel) -> TraceResiduals {
    let tri = kern.tri;
    let m = tri.m();
    let h = tri.h();
    let diagonal = (0..m).fold(0.0f64, |a, i| a.max(kern.at(i, i).abs()));
    let bwd = offsets_weights(&[0, -1, -2], 1);
    let fwd = offsets_weights(&[0, 1, 2], 1);
    let mut derivative = 0.0f64;
    for i in 0..m {
        let kx = if i >= 2 {
            (0..3).map(|q| bwd[q] * kern.at(i - q, i)).sum::<f64>() / h
        } else {
            -(0..3).map(|q| fwd[q] * kern.at(i, i + q)).sum::<f64>() / h
        };
        derivative =
            derivative.max((kx - kern.kind.diagonal_slope(kern.lambda, tri.coord(i))).abs());
    }
    let edge = if kern.kind.is_reflected() {
        (0..m).fold(0.0f64, |a, j| a.max(kern.at(0, j).abs()))
    } else {
        (0..m).fold(0.0f64, |a, i| a.max(kern.at(i, m - 1).abs()))
    };
    TraceResiduals {
        diagonal,
        derivative,
        edge,
    }
}

/// Residual of the kernel PDE evaluated with centred stencils.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeResidual {
    /// Max over all nodes at least two lattice steps from every side.
    pub interior_max: f64,
    /// Max over the core `x >= 1/8`, `y - x >= 1/8`, `y <= 7/8`.
    pub core_max: f64,
    /// Root-mean-square over the interior nodes.
    pub interior_rms: f64,
}

pub fn pde_residual(kern: &Kernel) -> PdeResidual {
    let tri = kern.tri;
    let m = tri.m();
    let h = tri.h();
    let sigma = kern.kind.pde_coefficient(kern.lambda);
    let d3 = offsets_weights(&[-2, -1, 0, 1, 2], 3);
    let d1 = offsets_weights(&[-1, 0, 1], 1);
    let (mut max, mut core, mut sum, mut count) = (0.0f64, 0.0f64, 0.0, 0usize);
    let margin = (m - 1) as f64 / 8.0;
    for j in 0..m.saturating_sub(2) {
        for i in 2..=j.saturating_sub(2) {
            if j < i + 2 {
                continue;
            }
            let kxxx: f64 =
                (0..5).map(|q| d3[q] * kern.at(i + q - 2, j)).sum::<f64>() / (h * h * h);
            let kyyy: f64 =
                (0..5).map(|q| d3[q] * kern.at(i, j + q - 2)).sum::<f64>() / (h * h * h);
            let kx: f64 = (0..3).map(|q| d1[q] * kern.at(i + q - 1, j)).sum::<f64>() / h;
            let ky: f64 = (0..3).map(|q| d1[q] * kern.at(i, j + q - 1)).sum::<f64>() / h;
            let res = (kxxx + kyyy + kx + ky - sigma * kern.at(i, j)).abs();
            max = max.max(res);
            sum += res * res;
            count += 1;
            let (fi, fj) = (i as f64, j as f64);
            if fi >= margin && fj - fi >= margin && fj <= (m - 1) as f64 - margin {
                core = core.max(res);
            }
        }
    }
    PdeResidual {
        interior_max: max,
        core_max: core,
        interior_rms: if count > 0 {
            (sum / count as f64).sqrt()
        } else {
            0.0
        },
    }
}

/// Max over lattice nodes of `|inv - fwd - ∫_x^y fwd(x,ξ) inv(ξ,y) dξ|` for a
/// matched pair (`k`, `l`) or (`p`, `r`).
pub fn reciprocity_residual(forward: &Kernel, inverse: &Kernel) -> Result<f64> {
    let pair_ok = matches!(
        (forward.kind, inverse.kind),
        (KernelKind::ControlK, KernelKind::InverseL)
            | (KernelKind::ObserverP, KernelKind::InverseR)
    );
    if !pair_ok {
        return Err(Error::invalid(format!(
            "reciprocity needs a (k, l) or (p, r) pair, got ({}, {})",
            forward.kind, inverse.kind
        )));
    }
    check_pair(forward, inverse)?;
    let tri = forward.tri;
    let h = tri.h();
    let mut worst = 0.0f64;
    let mut buf = Vec::with_capacity(tri.m());
    for (i, j) in tri.nodes() {
        buf.clear();
        buf.extend((i..=j).map(|q| forward.at(i, q) * inverse.at(q, j)));
        let integral = trapezoid(&buf, h);
        let res = inverse.at(i, j) - forward.at(i, j) - integral;
        worst = worst.max(res.abs());
    }
    Ok(worst)
}

pub(crate) fn check_pair(a: &Kernel, b: &Kernel) -> Result<()> {
    if a.lambda != b.lambda {
        return Err(Error::invalid(format!(
            "kernels built for different lambda ({} vs {})",
            a.lambda, b.lambda
        )));
    }
    if a.tri != b.tri {
        return Err(Error::invalid(format!(
            "kernels on different lattices ({} vs {} nodes per side)",
            a.tri.m(),
            b.tri.m()
        )));
    }
    Ok(())
}

/// Output-injection gain `p1(x) = p(x, 1)` on `grid`.
pub fn observer_gain_p1(p: &Kernel, grid: &Grid) -> Result<Field> {
    if p.kind != KernelKind::ObserverP {
        return Err(Error::invalid(format!(
            "observer gain needs the p kernel, got {}",
            p.kind
        )));
    }
    Ok(Field::from_fn(*grid, |x| p.eval(x, 1.0)))
}

/// `p̄(x) = p1(x) - ∫_x^1 k(x, y) p1(y) dy`
pub fn composite_gain_pbar(k: &Kernel, p1: &Field) -> Result<Field> {
    if k.kind != KernelKind::ControlK {
        return Err(Error::invalid(format!(
            "composite gain needs the k kernel, got {}",
            k.kind
        )));
    }
    let grid = *p1.grid();
    let kg = k.on_grid(&grid);
    let n = grid.n();
    let mut out = vec![0.0; n];
    let mut buf = Vec::with_capacity(n);
    for (i, o) in out.iter_mut().enumerate() {
        buf.clear();
        buf.extend((i..n).map(|j| kg.at(i, j) * p1.at(j)));
        *o = p1.at(i) - trapezoid(&buf, grid.h());
    }
    Field::new(grid, out)
}

/// Kernel table as CSV with columns `x,y,value`, 17 significant digits.
pub fn kernel_to_csv(kern: &Kernel) -> String {
    let tri = kern.tri;
    let mut s = String::with_capacity(tri.len() * 72);
    s.push_str("x,y,value\n");
    for (i, j) in tri.nodes() {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e}",
            tri.coord(i),
            tri.coord(j),
            kern.at(i, j)
        );
    }
    s
}

/// Parse a table written by [`kernel_to_csv`]. The lattice size is inferred
/// from the row count and the coordinates are checked against it.
pub fn kernel_from_csv(text: &str, kind: KernelKind, lambda: f64) -> Result<Kernel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "x,y,value" => {}
        other => {
            return Err(Error::invalid(format!(
                "expected header 'x,y,value', found {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "row {}: expected 3 columns",
                ln + 1
            )));
        }
        let mut vals = [0.0; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("row {}: {e}", ln + 1)))?;
        }
        rows.push(vals);
    }
    // m (m + 1) / 2 rows
    let m = ((((8 * rows.len() + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if m * (m + 1) / 2 != rows.len() {
        return Err(Error::invalid(format!(
            "{} rows do not form a triangular lattice",
            rows.len()
        )));
    }
    let tri = TriGrid::new(m)?;
    for ((i, j), r) in tri.nodes().zip(&rows) {
        if (r[0] - tri.coord(i)).abs() > 1e-12 || (r[1] - tri.coord(j)).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "unexpected coordinates ({}, {}) for node ({i}, {j})",
                r[0], r[1]
            )));
        }
    }
    Kernel::from_values(tri, kind, lambda, rows.iter().map(|r| r[2]).collect())
}
