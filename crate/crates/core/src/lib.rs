//! Output-feedback backstepping for the Korteweg-de Vries equation on `[0, 1]`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod closed_loop;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod lsq;
pub mod poly;
pub mod stencil;
pub mod transforms;

pub use closed_loop::{
    control_law, control_weights, observer_error, run_scenario, ClosedLoop, Family,
    InitialCondition, LoopState, Mode, ScenarioConfig, Trajectory,
};
pub use diagnostics::{
    energy_balance, fit_decay_rate, fit_last_half, lyapunov_v, lyapunov_w, norm,
    norm_inequality_check, norm_series, target_residual, DecayFit, EnergyBalance, NormKind,
    NormReport, TargetResidual,
};
pub use dynamics::{
    check_compatibility, discrete_energy, measure_uxx1, picard, slope_at_left, slope_at_right,
    spatial_operator, step, KdvStepper, SimState, StepParams, TimeScheme,
};
pub use error::{Error, Result};
pub use grid::{diff, integrate, make_grid, DiffOperator, Field, Grid};
pub use kernel::{
    composite_gain_pbar, kernel_from_csv, kernel_to_csv, observer_gain_p1, pde_residual,
    reciprocity_residual, solve_kernel, solve_kernel_with, trace_residuals, Kernel, KernelKind,
    KernelMethod, KernelSet, PdeResidual, SolveReport, SolverOptions, TraceResiduals, TriGrid,
};
pub use transforms::{
    derivative_functional_apply, f_functional, g_functional, round_trip_error, volterra_apply,
    DerivativeKind, DerivativeOp, Transforms, VolterraOp,
};
