//! Volterra transformations and the nonlinear remainder functionals.

use crate::error::{Error, Result};
use crate::grid::{diff, trapezoid, Field, Grid};
use crate::kernel::{check_pair, Kernel, KernelKind, KernelSet};

/// `w(x) + sign * ∫_x^1 kernel(x, y) w(y) dy` on a fixed grid.
///
/// The kernel is resampled once onto the lattice matching the grid, so the
/// quadrature runs over grid nodes `j >= i`.
#[derive(Debug, Clone)]
pub struct VolterraOp {
    grid: Grid,
    kernel: Kernel,
    sign: f64,
}

impl VolterraOp {
    /// Sign follows the kernel: `-` for `k` and `p`, `+` for `l` and `r`.
    pub fn new(kernel: &Kernel, grid: Grid) -> Self {
        let sign = match kernel.kind() {
            KernelKind::ControlK | KernelKind::ObserverP => -1.0,
            KernelKind::InverseL | KernelKind::InverseR => 1.0,
        };
        Self::with_sign(kernel, grid, sign)
    }

    pub fn with_sign(kernel: &Kernel, grid: Grid, sign: f64) -> Self {
        assert!(sign == 1.0 || sign == -1.0, "sign must be +1 or -1");
        VolterraOp {
            grid,
            kernel: kernel.on_grid(&grid),
            sign,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    /// Kernel resampled onto the grid lattice.
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn apply(&self, w: &Field) -> Result<Field> {
        check_grid(&self.grid, w)?;
        let n = self.grid.n();
        let h = self.grid.h();
        let wv = w.values();
        let mut out = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(n);
        for i in 0..n {
            buf.clear();
            buf.extend((i..n).map(|j| self.kernel.at(i, j) * wv[j]));
            out.push(wv[i] + self.sign * trapezoid(&buf, h));
        }
        Ok(Field::from_vec(self.grid, out))
    }
}

pub fn volterra_apply(op: &VolterraOp, w: &Field) -> Result<Field> {
    op.apply(w)
}

fn check_grid(grid: &Grid, w: &Field) -> Result<()> {
    if w.grid() != grid {
        return Err(Error::invalid(format!(
            "field on a {}-node grid, operator on {} nodes",
            w.grid().n(),
            grid.n()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeKind {
    /// `l(x,x) w(x) + ∫_x^1 l_x(x,y) w(y) dy`
    L1,
    /// `p(x,x) w(x) - ∫_x^1 p_x(x,y) w(y) dy`
    P1,
}

impl DerivativeKind {
    fn expected(self) -> KernelKind {
        match self {
            DerivativeKind::L1 => KernelKind::InverseL,
            DerivativeKind::P1 => KernelKind::ObserverP,
        }
    }
}

/// Derivative functional with the kernel and its `x`-derivative cached on a grid.
#[derive(Debug, Clone)]
pub struct DerivativeOp {
    grid: Grid,
    kind: DerivativeKind,
    kernel: Kernel,
    kx: Vec<f64>,
}

impl DerivativeOp {
    pub fn new(kind: DerivativeKind, kernel: &Kernel, grid: Grid) -> Result<Self> {
        if kernel.kind() != kind.expected() {
            return Err(Error::invalid(format!(
                "{kind:?} needs the {} kernel, got {}",
                kind.expected(),
                kernel.kind()
            )));
        }
        let kernel = kernel.on_grid(&grid);
        let kx = kernel.x_derivative();
        Ok(DerivativeOp {
            grid,
            kind,
            kernel,
            kx,
        })
    }

    pub fn apply(&self, w: &Field) -> Result<Field> {
        check_grid(&self.grid, w)?;
        let n = self.grid.n();
        let h = self.grid.h();
        let tri = *self.kernel.tri();
        let sign = match self.kind {
            DerivativeKind::L1 => 1.0,
            DerivativeKind::P1 => -1.0,
        };
        let wv = w.values();
        let mut out = Vec::with_capacity(n);
        let mut buf = Vec::with_capacity(n);
        for i in 0..n {
            buf.clear();
            buf.extend((i..n).map(|j| self.kx[tri.index(i, j)] * wv[j]));
            out.push(self.kernel.at(i, i) * wv[i] + sign * trapezoid(&buf, h));
        }
        Ok(Field::from_vec(self.grid, out))
    }
}

pub fn derivative_functional_apply(
    kind: DerivativeKind,
    kernel: &Kernel,
    w: &Field,
) -> Result<Field> {
    DerivativeOp::new(kind, kernel, *w.grid())?.apply(w)
}

/// `max |inverse(forward(w)) - w|`
pub fn round_trip_error(forward: &VolterraOp, inverse: &VolterraOp, w: &Field) -> Result<f64> {
    let pair_ok = matches!(
        (forward.kernel.kind(), inverse.kernel.kind()),
        (KernelKind::ControlK, KernelKind::InverseL)
            | (KernelKind::ObserverP, KernelKind::InverseR)
    );
    if !pair_ok {
        return Err(Error::invalid(format!(
            "round trip needs a (k, l) or (p, r) pair, got ({}, {})",
            forward.kernel.kind(),
            inverse.kernel.kind()
        )));
    }
    check_pair(&forward.kernel, &inverse.kernel)?;
    let back = inverse.apply(&forward.apply(w)?)?;
    back.max_abs_diff(w)
}

/// All six functionals for one kernel set on one grid.
#[derive(Debug, Clone)]
pub struct Transforms {
    grid: Grid,
    pub k: VolterraOp,
    pub l: VolterraOp,
    pub p: VolterraOp,
    pub r: VolterraOp,
    pub l1: DerivativeOp,
    pub p1: DerivativeOp,
}

impl Transforms {
    pub fn new(set: &KernelSet, grid: Grid) -> Result<Self> {
        Ok(Transforms {
            grid,
            k: VolterraOp::new(&set.k, grid),
            l: VolterraOp::new(&set.l, grid),
            p: VolterraOp::new(&set.p, grid),
            r: VolterraOp::new(&set.r, grid),
            l1: DerivativeOp::new(DerivativeKind::L1, &set.l, grid)?,
            p1: DerivativeOp::new(DerivativeKind::P1, &set.p, grid)?,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `(L[ŵ], ŵ_x + L1[ŵ])`, i.e. the observer state and its slope.
    fn observer_pair(&self, w_hat: &Field) -> Result<(Field, Field)> {
        let u = self.l.apply(w_hat)?;
        let ux = &diff(w_hat, 1)? + &self.l1.apply(w_hat)?;
        Ok((u, ux))
    }

    /// `(P[w̃], w̃_x + P1[w̃])`, i.e. the estimation error and its slope.
    fn error_pair(&self, w_tilde: &Field) -> Result<(Field, Field)> {
        let u = self.p.apply(w_tilde)?;
        let ux = &diff(w_tilde, 1)? + &self.p1.apply(w_tilde)?;
        Ok((u, ux))
    }

    /// `F = K[ L[ŵ] (ŵ_x + L1[ŵ]) ]`
    pub fn f_functional(&self, w_hat: &Field) -> Result<Field> {
        let (u, ux) = self.observer_pair(w_hat)?;
        self.k.apply(&u.mul_pointwise(&ux)?)
    }

    /// Remainder of the error target system,
    /// `G = R[ P[w̃](w̃_x + P1[w̃]) + P[w̃](ŵ_x + L1[ŵ]) + L[ŵ](w̃_x + P1[w̃]) ]`,
    /// which is `R[u u_x - û û_x]` written in target coordinates.
    pub fn g_functional(&self, w_hat: &Field, w_tilde: &Field) -> Result<Field> {
        w_hat.check_same_grid(w_tilde)?;
        let (uh, uhx) = self.observer_pair(w_hat)?;
        let (ut, utx) = self.error_pair(w_tilde)?;
        let mut inner = ut.mul_pointwise(&utx)?;
        inner = &inner + &ut.mul_pointwise(&uhx)?;
        inner = &inner + &uh.mul_pointwise(&utx)?;
        self.r.apply(&inner)
    }

    /// Four-term form with the extra `- R[ L[ŵ](ŵ_x + L1[ŵ]) ]`.
    pub fn g_functional_four_term(&self, w_hat: &Field, w_tilde: &Field) -> Result<Field> {
        let g = self.g_functional(w_hat, w_tilde)?;
        let (uh, uhx) = self.observer_pair(w_hat)?;
        let extra = self.r.apply(&uh.mul_pointwise(&uhx)?)?;
        Ok(&g - &extra)
    }
}

pub fn f_functional(w_hat: &Field, kernels: &KernelSet) -> Result<Field> {
    Transforms::new(kernels, *w_hat.grid())?.f_functional(w_hat)
}

pub fn g_functional(w_hat: &Field, w_tilde: &Field, kernels: &KernelSet) -> Result<Field> {
    Transforms::new(kernels, *w_hat.grid())?.g_functional(w_hat, w_tilde)
}
