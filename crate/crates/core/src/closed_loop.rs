//! Plant, observer and boundary control law stepped together.
//!
//! Each step is solved jointly at the new time level: the plant state, the
//! observer state, the control value `U` and the measured innovation
//! `Z = ũ_xx(1)` all belong to the same implicit system. The step matrix is
//! shared by plant and observer, so the coupled solve reduces to the
//! unforced solutions plus two scalar unknowns found by superposition.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    check_compatibility, measure_uxx1, picard, KdvStepper, SimState, StepParams, TimeScheme,
};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::kernel::{
    observer_gain_p1, Kernel, KernelKind, KernelMethod, KernelSet, SolverOptions, TriGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[serde(alias = "Uncontrolled")]
    Uncontrolled,
    #[serde(alias = "StateFeedback")]
    StateFeedback,
    #[default]
    #[serde(alias = "OutputFeedback")]
    OutputFeedback,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Uncontrolled => "uncontrolled",
            Mode::StateFeedback => "state_feedback",
            Mode::OutputFeedback => "output_feedback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(alias = "Zero")]
    Zero,
    /// `a x² (1-x)²`
    #[default]
    #[serde(alias = "Bump")]
    Bump,
    /// `a sin(πx) (1-x)`
    #[serde(alias = "SineBump")]
    SineBump,
}

/// Named analytic initial profile with amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCondition {
    pub family: Family,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl InitialCondition {
    pub fn zero() -> Self {
        InitialCondition {
            family: Family::Zero,
            amplitude: 0.0,
        }
    }

    pub fn bump(amplitude: f64) -> Self {
        InitialCondition {
            family: Family::Bump,
            amplitude,
        }
    }

    pub fn sine_bump(amplitude: f64) -> Self {
        InitialCondition {
            family: Family::SineBump,
            amplitude,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = self.amplitude;
        match self.family {
            Family::Zero => 0.0,
            Family::Bump => a * x * x * (1.0 - x) * (1.0 - x),
            Family::SineBump => a * (std::f64::consts::PI * x).sin() * (1.0 - x),
        }
    }

    pub fn sample(&self, grid: Grid) -> Field {
        Field::from_fn(grid, |x| self.eval(x))
    }
}

/// Relative tolerance for the boundary compatibility of initial data.
pub const COMPATIBILITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub plant_nonlinear: bool,
    pub observer_nonlinear: bool,
    pub lambda: f64,
    /// Spatial nodes.
    pub n: usize,
    /// Kernel lattice size.
    pub m: usize,
    pub dt: f64,
    pub t_end: f64,
    pub u0: InitialCondition,
    pub uhat0: InitialCondition,
    pub record_every: usize,
    pub scheme: TimeScheme,
    pub theta: f64,
    pub kernel_method: KernelMethod,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::OutputFeedback,
            plant_nonlinear: true,
            observer_nonlinear: true,
            lambda: 8.0,
            n: 201,
            m: 81,
            dt: 1e-3,
            t_end: 4.0,
            u0: InitialCondition::bump(1.0),
            uhat0: InitialCondition::zero(),
            record_every: 10,
            scheme: TimeScheme::Bdf2,
            theta: 0.5,
            kernel_method: KernelMethod::default(),
        }
    }
}

impl ScenarioConfig {
    /// Linear plant and observer.
    pub fn linear(mut self) -> Self {
        self.plant_nonlinear = false;
        self.observer_nonlinear = false;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn step_params(&self, nonlinear: bool) -> StepParams {
        StepParams {
            dt: self.dt,
            scheme: self.scheme,
            theta: self.theta,
            nonlinear,
            ..StepParams::new(self.dt)
        }
    }

    /// Number of time steps; `t_end` must be a whole multiple of `dt`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be > 0, got {}", self.t_end));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        let steps = self.t_end / self.dt;
        if steps.round() < 1.0 || (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
            return bad(format!(
                "t_end = {} is not a whole number of steps dt = {}",
                self.t_end, self.dt
            ));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if self.n < 7 {
            return bad(format!("n must be >= 7, got {}", self.n));
        }
        if self.m < 5 {
            return bad(format!("m must be >= 5, got {}", self.m));
        }
        for (name, ic) in [("u0", &self.u0), ("uhat0", &self.uhat0)] {
            if !ic.amplitude.is_finite() {
                return bad(format!("{name}.amplitude must be finite"));
            }
        }
        self.step_params(false)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

/// Recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config: ScenarioConfig,
    pub grid: Grid,
    pub times: Vec<f64>,
    pub plant_states: Vec<Field>,
    /// Empty for uncontrolled runs.
    pub observer_states: Vec<Field>,
    /// Boundary value `U` at each recorded time.
    pub control: Vec<f64>,
    /// `y = u_xx(1)` at each recorded time.
    pub measurement: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_observer(&self) -> bool {
        !self.observer_states.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// `∫ k(0, y) û(y) dy` by the trapezoid rule on the grid of `u_hat`.
pub fn control_law(k: &Kernel, u_hat: &Field) -> Result<f64> {
    let w = control_weights(k, u_hat.grid())?;
    Ok(dot(&w, u_hat.values()))
}

/// Quadrature weights `w_j` with `U = Σ w_j û_j`.
pub fn control_weights(k: &Kernel, grid: &Grid) -> Result<Vec<f64>> {
    if k.kind() != KernelKind::ControlK {
        return Err(Error::invalid(format!(
            "control law needs the k kernel, got {}",
            k.kind()
        )));
    }
    let n = grid.n();
    let h = grid.h();
    Ok((0..n)
        .map(|j| {
            let q = if j == 0 || j == n - 1 { 0.5 * h } else { h };
            q * k.eval(0.0, grid.x(j))
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pointwise `u - û` at a recorded index.
pub fn observer_error(traj: &Trajectory, index: usize) -> Result<Field> {
    if !traj.has_observer() {
        return Err(Error::invalid("trajectory has no observer"));
    }
    if index >= traj.len() {
        return Err(Error::invalid(format!(
            "index {index} out of range (trajectory has {} records)",
            traj.len()
        )));
    }
    Ok(&traj.plant_states[index] - &traj.observer_states[index])
}

/// Everything fixed for a run: grid, kernels and factored steppers.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    config: ScenarioConfig,
    grid: Grid,
    kernels: KernelSet,
    plant: KdvStepper,
    observer: KdvStepper,
    weights: Vec<f64>,
    gain: Field,
}

/// Plant and observer at one time level.
#[derive(Debug, Clone)]
pub struct LoopState {
    pub plant: SimState,
    pub observer: SimState,
}

impl ClosedLoop {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let tri = TriGrid::new(config.m)?;
        let opts = SolverOptions {
            method: config.kernel_method,
            ..SolverOptions::default()
        };
        let kernels = KernelSet::solve_with(config.lambda, tri, &opts)?;
        Self::with_kernels(config, kernels)
    }

    /// Uses precomputed kernels; their λ must match the configuration.
    pub fn with_kernels(config: ScenarioConfig, kernels: KernelSet) -> Result<Self> {
        config.validate()?;
        if kernels.lambda() != config.lambda {
            return Err(Error::invalid(format!(
                "kernels were solved for lambda = {}, configuration has {}",
                kernels.lambda(),
                config.lambda
            )));
        }
        let grid = Grid::new(config.n)?;
        let plant = KdvStepper::new(grid, config.step_params(config.plant_nonlinear))?;
        let observer = KdvStepper::new(grid, config.step_params(config.observer_nonlinear))?;
        let weights = control_weights(&kernels.k, &grid)?;
        let gain = observer_gain_p1(&kernels.p, &grid)?;
        Ok(ClosedLoop {
            config,
            grid,
            kernels,
            plant,
            observer,
            weights,
            gain,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    /// Observer output-injection gain `p(x, 1)`.
    pub fn gain(&self) -> &Field {
        &self.gain
    }

    fn feedback(&self, u: &Field, u_hat: &Field) -> f64 {
        match self.config.mode {
            Mode::Uncontrolled => 0.0,
            Mode::StateFeedback => dot(&self.weights, u.values()),
            Mode::OutputFeedback => dot(&self.weights, u_hat.values()),
        }
    }

    fn injection(&self, z: f64) -> Option<Field> {
        (self.config.mode != Mode::Uncontrolled).then(|| &self.gain * z)
    }

    /// Initial level from the configured profiles. Both states start from
    /// the feedback value; a mismatch with `u0(0)` is absorbed by the first
    /// step.
    pub fn initial_state(&self) -> Result<LoopState> {
        let u0 = self.config.u0.sample(self.grid);
        let uh0 = self.config.uhat0.sample(self.grid);
        check_compatibility(&u0, COMPATIBILITY_TOL)
            .map_err(|e| Error::Config(format!("u0: {e}")))?;
        check_compatibility(&uh0, COMPATIBILITY_TOL)
            .map_err(|e| Error::Config(format!("uhat0: {e}")))?;
        self.state_from(u0, uh0)
    }

    /// Level from explicit plant and observer profiles at `t = 0`.
    pub fn state_from(&self, u: Field, u_hat: Field) -> Result<LoopState> {
        u.check_same_grid(&Field::zeros(self.grid))?;
        u.check_same_grid(&u_hat)?;
        let bc = self.feedback(&u, &u_hat);
        let z = measure_uxx1(&u) - measure_uxx1(&u_hat);
        let mut plant = SimState::new(u);
        plant.bc_left = bc;
        let mut observer = SimState::new(u_hat);
        observer.bc_left = bc;
        observer.injection = self.injection(z);
        Ok(LoopState { plant, observer })
    }

    /// One coupled step.
    pub fn step(&self, s: &LoopState) -> Result<LoopState> {
        let n = self.grid.n();
        let (ps, os) = (&s.plant, &s.observer);
        let t_next = ps.t + self.config.dt;
        let bp = self.plant.base_rhs(ps);
        let bo = self.observer.base_rhs(os);
        let b = self.plant.boundary_response(ps);
        let c = self.observer.source_response(os, self.gain.values());
        let (wb, wc) = (dot(&self.weights, b), dot(&self.weights, &c));
        let sc = measure(&c, &self.grid);
        let mode = self.config.mode;

        let params = self.config.step_params(true);
        let linear = !(self.config.plant_nonlinear
            || (mode != Mode::Uncontrolled && self.config.observer_nonlinear));
        let mut init = ps.u.values().to_vec();
        init.extend_from_slice(os.u.values());
        let mut scalars = (0.0, 0.0);
        let sol = picard(&params, t_next, linear, init, |cur| {
            let (cu, co) = cur.split_at(n);
            let mut ap = bp.clone();
            self.plant.add_convective(ps, &mut ap, cu);
            self.plant.solve_in_place(ps, &mut ap);
            let mut ao = bo.clone();
            self.observer.add_convective(os, &mut ao, co);
            self.observer.solve_in_place(os, &mut ao);
            let (u_bc, z) = match mode {
                Mode::Uncontrolled => (0.0, 0.0),
                Mode::StateFeedback => {
                    let u_bc = dot(&self.weights, &ap) / (1.0 - wb);
                    let z = (measure(&ap, &self.grid) - measure(&ao, &self.grid)) / (1.0 + sc);
                    (u_bc, z)
                }
                Mode::OutputFeedback => {
                    let z = (measure(&ap, &self.grid) - measure(&ao, &self.grid)) / (1.0 + sc);
                    let u_bc = (dot(&self.weights, &ao) + z * wc) / (1.0 - wb);
                    (u_bc, z)
                }
            };
            scalars = (u_bc, z);
            let mut out = ap;
            for i in 0..n {
                out[i] += u_bc * b[i];
            }
            out.reserve(n);
            for i in 0..n {
                out.push(ao[i] + u_bc * b[i] + z * c[i]);
            }
            Ok(out)
        })?;
        let (u_bc, z) = scalars;
        let (u, uh) = sol.split_at(n);
        let plant = self.plant.advance(ps, u.to_vec(), u_bc, None)?;
        let observer = self
            .observer
            .advance(os, uh.to_vec(), u_bc, self.injection(z))?;
        Ok(LoopState { plant, observer })
    }

    /// Runs the observer alone from `u_hat0`, driven by the measurement
    /// sequence `y` (one value per step, starting at `t = 0`), and returns
    /// the control sequence it produces. Output feedback only.
    pub fn replay_observer(&self, u_hat0: Field, y: &[f64]) -> Result<Vec<f64>> {
        if self.config.mode != Mode::OutputFeedback {
            return Err(Error::invalid("observer replay needs output feedback"));
        }
        if y.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.grid.n();
        u_hat0.check_same_grid(&Field::zeros(self.grid))?;
        let u0 = dot(&self.weights, u_hat0.values());
        let z0 = y[0] - measure_uxx1(&u_hat0);
        let mut os = SimState::new(u_hat0);
        os.bc_left = u0;
        os.injection = self.injection(z0);
        let mut controls = vec![u0];
        let params = self.config.step_params(true);
        for &y_next in &y[1..] {
            let bo = self.observer.base_rhs(&os);
            let b = self.observer.boundary_response(&os);
            let c = self.observer.source_response(&os, self.gain.values());
            let (wb, wc) = (dot(&self.weights, b), dot(&self.weights, &c));
            let (sb, sc) = (measure(b, &self.grid), measure(&c, &self.grid));
            let mut scalars = (0.0, 0.0);
            let sol = picard(
                &params,
                os.t + self.config.dt,
                !self.config.observer_nonlinear,
                os.u.values().to_vec(),
                |cur| {
                    let mut ao = bo.clone();
                    self.observer.add_convective(&os, &mut ao, cur);
                    self.observer.solve_in_place(&os, &mut ao);
                    // U (1 - w·b) - Z w·c = w·a,  U s·b + Z (1 + s·c) = y - s·a
                    let r1 = dot(&self.weights, &ao);
                    let r2 = y_next - measure(&ao, &self.grid);
                    let det = (1.0 - wb) * (1.0 + sc) + wc * sb;
                    let u_bc = (r1 * (1.0 + sc) + wc * r2) / det;
                    let z = ((1.0 - wb) * r2 - sb * r1) / det;
                    scalars = (u_bc, z);
                    Ok((0..n).map(|i| ao[i] + u_bc * b[i] + z * c[i]).collect())
                },
            )?;
            let (u_bc, z) = scalars;
            os = self.observer.advance(&os, sol, u_bc, self.injection(z))?;
            controls.push(u_bc);
        }
        Ok(controls)
    }

    /// Time loop from `state`, recording every `record_every` steps.
    pub fn run_from(&self, mut state: LoopState) -> Result<Trajectory> {
        let cfg = &self.config;
        let steps = cfg.steps();
        let observed = cfg.mode != Mode::Uncontrolled;
        let mut traj = Trajectory {
            config: cfg.clone(),
            grid: self.grid,
            times: Vec::new(),
            plant_states: Vec::new(),
            observer_states: Vec::new(),
            control: Vec::new(),
            measurement: Vec::new(),
        };
        let mut record = |k: usize, s: &LoopState| {
            traj.times.push(k as f64 * cfg.dt);
            traj.plant_states.push(s.plant.u.clone());
            if observed {
                traj.observer_states.push(s.observer.u.clone());
            }
            traj.control.push(s.plant.bc_left);
            traj.measurement.push(measure_uxx1(&s.plant.u));
        };
        record(0, &state);
        for k in 1..=steps {
            state = self.step(&state)?;
            if k % cfg.record_every == 0 || k == steps {
                record(k, &state);
            }
        }
        Ok(traj)
    }

    pub fn run(&self) -> Result<Trajectory> {
        self.run_from(self.initial_state()?)
    }
}

fn measure(v: &[f64], grid: &Grid) -> f64 {
    let n = v.len();
    let h = grid.h();
    (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / (h * h)
}

/// Solves the kernels once and runs the configured experiment.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Trajectory> {
    ClosedLoop::new(cfg.clone())?.run()
}
