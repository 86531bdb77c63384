//! Norms, Lyapunov functionals, decay-rate fits and target-system residuals.

use serde::{Deserialize, Serialize};

use crate::closed_loop::Trajectory;
use crate::dynamics::{measure_uxx1, slope_at_left, TimeScheme};
use crate::error::{Error, Result};
use crate::grid::{trapezoid, DiffOperator, Field};
use crate::transforms::Transforms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Sup,
    L1,
    L2,
    H1,
    H2,
    H3,
}

impl NormKind {
    pub const ALL: [NormKind; 6] = [
        NormKind::Sup,
        NormKind::L1,
        NormKind::L2,
        NormKind::H1,
        NormKind::H2,
        NormKind::H3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormKind::Sup => "sup",
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::H1 => "h1",
            NormKind::H2 => "h2",
            NormKind::H3 => "h3",
        }
    }

    fn sobolev_order(self) -> Option<usize> {
        match self {
            NormKind::H1 => Some(1),
            NormKind::H2 => Some(2),
            NormKind::H3 => Some(3),
            _ => None,
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn l2_sq(v: &[f64], h: f64) -> f64 {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    trapezoid(&sq, h)
}

/// `H_i = sqrt(Σ_{j≤i} ‖∂^j f‖²)`; integrals by the trapezoid rule.
pub fn norm(f: &Field, kind: NormKind) -> Result<f64> {
    if !f.is_finite() {
        return Err(Error::invalid("norm of a non-finite field"));
    }
    let h = f.grid().h();
    let v = f.values();
    Ok(match kind {
        NormKind::Sup => f.max_abs(),
        NormKind::L1 => {
            let a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            trapezoid(&a, h)
        }
        NormKind::L2 => l2_sq(v, h).sqrt(),
        _ => {
            let order = kind.sobolev_order().unwrap_or(0);
            let need = 2 * order + 3;
            if f.len() < need {
                return Err(Error::invalid(format!(
                    "{kind} needs at least {need} nodes, grid has {}",
                    f.len()
                )));
            }
            let mut total = l2_sq(v, h);
            for j in 1..=order {
                let d = DiffOperator::new(*f.grid(), j)?.apply(f)?;
                total += l2_sq(d.values(), h);
            }
            total.sqrt()
        }
    })
}

/// Norm of each field in a series.
pub fn norm_series(states: &[Field], kind: NormKind) -> Result<Vec<f64>> {
    states.iter().map(|f| norm(f, kind)).collect()
}

/// Agmon-type constant in `‖f‖_∞ ≤ c (‖f‖ + ‖f_x‖)` on the unit interval.
pub const AGMON_CONSTANT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub l1: f64,
    pub l2: f64,
    pub sup: f64,
    pub dx_l2: f64,
    /// `‖f‖_1 / ‖f‖_2`
    pub l1_over_l2: f64,
    /// `‖f‖_2 / ‖f‖_∞`
    pub l2_over_sup: f64,
    /// `‖f‖_∞ / (c (‖f‖ + ‖f_x‖))`
    pub agmon_ratio: f64,
    pub passed: bool,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// Checks `L1 ≤ L2 ≤ Sup` and the Agmon bound; ratios above 1 fail.
pub fn norm_inequality_check(f: &Field) -> Result<NormReport> {
    let l1 = norm(f, NormKind::L1)?;
    let l2 = norm(f, NormKind::L2)?;
    let sup = norm(f, NormKind::Sup)?;
    let dx = DiffOperator::new(*f.grid(), 1)?.apply(f)?;
    let dx_l2 = norm(&dx, NormKind::L2)?;
    let l1_over_l2 = ratio(l1, l2);
    let l2_over_sup = ratio(l2, sup);
    let agmon_ratio = ratio(sup, AGMON_CONSTANT * (l2 + dx_l2));
    // slack for rounding in the quadrature of constant fields
    let tol = 1.0 + 1e-12;
    Ok(NormReport {
        l1,
        l2,
        sup,
        dx_l2,
        l1_over_l2,
        l2_over_sup,
        agmon_ratio,
        passed: l1_over_l2 <= tol && l2_over_sup <= tol && agmon_ratio <= tol,
    })
}

fn check_weights(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(Error::invalid(format!(
            "Lyapunov weights must be positive, got A = {a}, B = {b}"
        )));
    }
    Ok(())
}

/// `A/2 ∫ŵ² + B/2 ∫w̃² + B/2 ∫w̃_t²`
pub fn lyapunov_v(
    w_hat: &Field,
    w_tilde: &Field,
    w_tilde_t: &Field,
    a: f64,
    b: f64,
) -> Result<f64> {
    check_weights(a, b)?;
    w_hat.check_same_grid(w_tilde)?;
    w_hat.check_same_grid(w_tilde_t)?;
    let h = w_hat.grid().h();
    Ok(0.5 * a * l2_sq(w_hat.values(), h)
        + 0.5 * b * l2_sq(w_tilde.values(), h)
        + 0.5 * b * l2_sq(w_tilde_t.values(), h))
}

/// `A/2 ∫ŵ² + A/2 ∫η̂² + B/2 ∫w̃² + B/2 ∫η̃²`
pub fn lyapunov_w(
    w_hat: &Field,
    eta_hat: &Field,
    w_tilde: &Field,
    eta_tilde: &Field,
    a: f64,
    b: f64,
) -> Result<f64> {
    check_weights(a, b)?;
    for f in [eta_hat, w_tilde, eta_tilde] {
        w_hat.check_same_grid(f)?;
    }
    let h = w_hat.grid().h();
    Ok(
        0.5 * a * (l2_sq(w_hat.values(), h) + l2_sq(eta_hat.values(), h))
            + 0.5 * b * (l2_sq(w_tilde.values(), h) + l2_sq(eta_tilde.values(), h)),
    )
}

/// Target coordinates `ŵ = K[û]`, `w̃ = R[u - û]` of every record.
pub fn target_states(traj: &Trajectory, tr: &Transforms) -> Result<(Vec<Field>, Vec<Field>)> {
    if !traj.has_observer() {
        return Err(Error::invalid(
            "target coordinates need an observer trajectory",
        ));
    }
    let mut hat = Vec::with_capacity(traj.len());
    let mut tilde = Vec::with_capacity(traj.len());
    for (u, uh) in traj.plant_states.iter().zip(&traj.observer_states) {
        hat.push(tr.k.apply(uh)?);
        tilde.push(tr.r.apply(&(u - uh))?);
    }
    Ok((hat, tilde))
}

/// Backward differences `(f_i - f_{i-1}) / (t_i - t_{i-1})`; the first entry
/// repeats the second.
pub fn backward_differences(times: &[f64], fields: &[Field]) -> Result<Vec<Field>> {
    if fields.len() < 2 || times.len() != fields.len() {
        return Err(Error::invalid("time differences need at least two records"));
    }
    let mut out: Vec<Field> = (1..fields.len())
        .map(|i| &(&fields[i] - &fields[i - 1]) * (1.0 / (times[i] - times[i - 1])))
        .collect();
    out.insert(0, out[0].clone());
    Ok(out)
}

/// `V` at every record, with `w̃_t` by backward differences.
pub fn lyapunov_v_series(traj: &Trajectory, tr: &Transforms, a: f64, b: f64) -> Result<Vec<f64>> {
    let (hat, tilde) = target_states(traj, tr)?;
    let tilde_t = backward_differences(&traj.times, &tilde)?;
    (0..traj.len())
        .map(|i| lyapunov_v(&hat[i], &tilde[i], &tilde_t[i], a, b))
        .collect()
}

/// `W` at every record, with `η = ω_t` by backward differences.
pub fn lyapunov_w_series(traj: &Trajectory, tr: &Transforms, a: f64, b: f64) -> Result<Vec<f64>> {
    let (hat, tilde) = target_states(traj, tr)?;
    let hat_t = backward_differences(&traj.times, &hat)?;
    let tilde_t = backward_differences(&traj.times, &tilde)?;
    (0..traj.len())
        .map(|i| lyapunov_w(&hat[i], &hat_t[i], &tilde[i], &tilde_t[i], a, b))
        .collect()
}

/// `values ≈ c e^{-rate t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub rate: f64,
    pub samples: usize,
}

/// Least-squares line through `log(values)` on `t_a ≤ t ≤ t_b`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::invalid("times and values differ in length"));
    }
    let (ta, tb) = window;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= ta && **t <= tb)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 10 {
        return Err(Error::invalid(format!(
            "decay fit needs at least 10 samples in [{ta}, {tb}], got {}",
            pts.len()
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "decay fit needs positive values, got {v} at t = {t}"
        )));
    }
    let k = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ym = pts.iter().map(|p| p.1.ln()).sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in &pts {
        let dt = t - tm;
        sxy += dt * (v.ln() - ym);
        sxx += dt * dt;
    }
    if sxx == 0.0 {
        return Err(Error::invalid("decay fit window has a single time"));
    }
    let slope = sxy / sxx;
    Ok(DecayFit {
        c: (ym - slope * tm).exp(),
        rate: -slope,
        samples: pts.len(),
    })
}

/// Fit over the second half of the recorded times.
pub fn fit_last_half(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    let t_end = times.last().copied().unwrap_or(0.0);
    let t0 = times.first().copied().unwrap_or(0.0);
    fit_decay_rate(times, values, (0.5 * (t0 + t_end), t_end))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetResidual {
    /// Max-abs residual of the observer target equation.
    pub hat: f64,
    /// Max-abs residual of the error target equation.
    pub tilde: f64,
}

impl TargetResidual {
    pub fn max(&self) -> f64 {
        self.hat.max(self.tilde)
    }
}

/// Residuals of
/// `ŵ_t + ŵ_x + ŵ_xxx + λŵ + p̄ w̃_xx(1) + F = 0` and
/// `w̃_t + w̃_x + w̃_xxx + λw̃ + G = 0` at record `index`, with time
/// derivatives by central differences and `F`, `G` included for the
/// nonlinear loop. Max over nodes `1..n-2`.
pub fn target_residual(
    traj: &Trajectory,
    tr: &Transforms,
    pbar: &Field,
    index: usize,
) -> Result<TargetResidual> {
    if !traj.has_observer() {
        return Err(Error::invalid(
            "target residual needs an observer trajectory",
        ));
    }
    if index == 0 || index + 1 >= traj.len() {
        return Err(Error::invalid(format!(
            "record {index} has no neighbours on both sides"
        )));
    }
    let cfg = &traj.config;
    if cfg.plant_nonlinear != cfg.observer_nonlinear {
        return Err(Error::invalid(
            "target residual needs plant and observer with the same model",
        ));
    }
    let grid = traj.grid;
    if tr.grid() != &grid {
        return Err(Error::invalid(
            "transforms and trajectory use different grids",
        ));
    }
    let lambda = tr.k.kernel().lambda();
    let at = |i: usize| -> Result<(Field, Field)> {
        let u = &traj.plant_states[i];
        let uh = &traj.observer_states[i];
        Ok((tr.k.apply(uh)?, tr.r.apply(&(u - uh))?))
    };
    let (hm, tm) = at(index - 1)?;
    let (h0, t0) = at(index)?;
    let (hp, tp) = at(index + 1)?;
    let span = traj.times[index + 1] - traj.times[index - 1];
    let d1 = DiffOperator::new(grid, 1)?;
    let d3 = DiffOperator::new(grid, 3)?;
    let (f, g) = if cfg.plant_nonlinear {
        (
            Some(tr.f_functional(&h0)?),
            Some(tr.g_functional(&h0, &t0)?),
        )
    } else {
        (None, None)
    };
    let wxx1 = measure_uxx1(&t0);
    let n = grid.n();
    let (mut res_hat, mut res_tilde) = (0.0f64, 0.0f64);
    for i in 1..n - 1 {
        let wh = h0.values();
        let rh = (hp.at(i) - hm.at(i)) / span
            + d1.at(wh, i)
            + d3.at(wh, i)
            + lambda * wh[i]
            + pbar.at(i) * wxx1
            + f.as_ref().map_or(0.0, |f| f.at(i));
        let wt = t0.values();
        let rt = (tp.at(i) - tm.at(i)) / span
            + d1.at(wt, i)
            + d3.at(wt, i)
            + lambda * wt[i]
            + g.as_ref().map_or(0.0, |g| g.at(i));
        res_hat = res_hat.max(rh.abs());
        res_tilde = res_tilde.max(rt.abs());
    }
    Ok(TargetResidual {
        hat: res_hat,
        tilde: res_tilde,
    })
}

/// `‖w̃_t‖ / ‖w̃‖_{H³}` at every record (zero where `w̃` vanishes).
pub fn error_equivalence_ratios(traj: &Trajectory, tr: &Transforms) -> Result<Vec<f64>> {
    let (_, tilde) = target_states(traj, tr)?;
    let tilde_t = backward_differences(&traj.times, &tilde)?;
    tilde
        .iter()
        .zip(&tilde_t)
        .map(|(w, wt)| Ok(ratio(norm(wt, NormKind::L2)?, norm(w, NormKind::H3)?)))
        .collect()
}

/// One step of the energy identity `dE/dt = -½ u_x(0)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBalance {
    pub t: f64,
    /// `∫ uⁿ δₜuⁿ` with the integrator's own difference quotient.
    pub rate: f64,
    /// `-½ u_x(0)²` at the same level.
    pub flux: f64,
    pub slope: f64,
}

/// Per-step energy balance of an uncontrolled BDF2 run recorded at every
/// step. The difference quotient is backward Euler on the first step and
/// BDF2 afterwards, matching the integrator.
pub fn energy_balance(traj: &Trajectory) -> Result<Vec<EnergyBalance>> {
    let cfg = &traj.config;
    if cfg.scheme != TimeScheme::Bdf2 || cfg.record_every != 1 {
        return Err(Error::invalid(
            "energy balance needs a BDF2 run recorded at every step",
        ));
    }
    if traj.control.iter().any(|&u| u != 0.0) {
        return Err(Error::invalid(
            "energy balance needs a homogeneous left boundary",
        ));
    }
    let dt = cfg.dt;
    let h = traj.grid.h();
    let u = &traj.plant_states;
    let mut out = Vec::with_capacity(u.len().saturating_sub(1));
    let mut buf = vec![0.0; traj.grid.n()];
    for k in 1..u.len() {
        let cur = u[k].values();
        let prev = u[k - 1].values();
        for (i, b) in buf.iter_mut().enumerate() {
            let ut = if k == 1 {
                (cur[i] - prev[i]) / dt
            } else {
                (3.0 * cur[i] - 4.0 * prev[i] + u[k - 2].at(i)) / (2.0 * dt)
            };
            *b = cur[i] * ut;
        }
        let slope = slope_at_left(&u[k]);
        out.push(EnergyBalance {
            t: traj.times[k],
            rate: trapezoid(&buf, h),
            flux: -0.5 * slope * slope,
            slope,
        });
    }
    Ok(out)
}
