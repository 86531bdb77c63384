use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kdv_core::{
    ClosedLoop, Field, Grid, InitialCondition, KdvStepper, ScenarioConfig, SimState, StepParams,
};
use std::hint::black_box;

fn plant_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("plant_step");
    for nonlinear in [false, true] {
        for n in [201usize, 401] {
            let grid = Grid::new(n).unwrap();
            let stepper =
                KdvStepper::new(grid, StepParams::new(1e-3).nonlinear(nonlinear)).unwrap();
            let u = Field::from_fn(grid, |x| 0.1 * x * x * (1.0 - x) * (1.0 - x));
            let id = BenchmarkId::new(if nonlinear { "nonlinear" } else { "linear" }, n);
            group.bench_with_input(id, &u, |b, u| {
                let s0 = SimState::new(u.clone());
                b.iter(|| stepper.step(black_box(&s0), 0.0, None).unwrap())
            });
        }
    }
    group.finish();
}

fn closed_loop_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("closed_loop_step");
    for nonlinear in [false, true] {
        let mut cfg = ScenarioConfig {
            u0: InitialCondition::bump(0.1),
            ..ScenarioConfig::default()
        };
        cfg.plant_nonlinear = nonlinear;
        cfg.observer_nonlinear = nonlinear;
        let lp = ClosedLoop::new(cfg).unwrap();
        let s0 = lp.initial_state().unwrap();
        let s1 = lp.step(&s0).unwrap();
        let name = if nonlinear { "nonlinear" } else { "linear" };
        group.bench_function(name, |b| b.iter(|| lp.step(black_box(&s1)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, plant_step, closed_loop_step);
criterion_main!(benches);
