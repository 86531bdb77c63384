//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use kdv_cli::{batch, load_config, run_scenario_to_dir};
use kdv_core::{
    composite_gain_pbar, diff, discrete_energy, energy_balance, fit_decay_rate, fit_last_half,
    integrate, measure_uxx1, norm, norm_series, observer_error, pde_residual, reciprocity_residual,
    round_trip_error, run_scenario, target_residual, trace_residuals, ClosedLoop, Field, Grid,
    InitialCondition, KernelSet, Mode, NormKind, ScenarioConfig, TargetResidual, Transforms,
    TriGrid, VolterraOp,
};

struct Check {
    name: String,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Report {
    checks: Vec<(usize, Check)>,
}

impl Report {
    fn add(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!(
            "{} [{id:>2}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.checks.push((
            id,
            Check {
                name: name.to_string(),
                pass,
                detail,
            },
        ));
    }
}

fn ratios(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[0] / w[1]).collect()
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_ratios(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", parts.join(", "))
}

fn linear(mode: Mode, lambda: f64) -> ScenarioConfig {
    ScenarioConfig {
        mode,
        lambda,
        n: 201,
        dt: 1e-3,
        t_end: 4.0,
        u0: InitialCondition::bump(1.0),
        uhat0: InitialCondition::zero(),
        record_every: 10,
        ..ScenarioConfig::default()
    }
    .linear()
}

fn plant_l2_rate(cfg: &ScenarioConfig) -> f64 {
    let tr = run_scenario(cfg).expect("run");
    let l2 = norm_series(&tr.plant_states, NormKind::L2).expect("norms");
    fit_last_half(&tr.times, &l2).expect("fit").rate
}

const MS: [usize; 3] = [41, 81, 161];

fn kernel_correctness(rep: &mut Report) {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for lambda in [0.0, 4.0, 8.0] {
        let sets: Vec<KernelSet> = MS
            .iter()
            .map(|&m| KernelSet::solve(lambda, TriGrid::new(m).unwrap()).expect("kernel solve"))
            .collect();
        for kind in kdv_core::KernelKind::ALL {
            let pde: Vec<f64> = sets
                .iter()
                .map(|s| pde_residual(s.get(kind)).interior_max)
                .collect();
            let trace: Vec<f64> = sets
                .iter()
                .map(|s| trace_residuals(s.get(kind)).max())
                .collect();
            let solve = sets
                .iter()
                .map(|s| s.get(kind).report().map_or(0.0, |r| r.residual))
                .fold(0.0f64, f64::max);
            let good = if lambda == 0.0 {
                pde.iter().chain(&trace).all(|&r| r < 1e-8)
            } else {
                solve <= 1e-8
                    && ratios(&pde).iter().all(|&r| r >= 3.5)
                    && ratios(&trace).iter().all(|&r| r >= 3.5)
            };
            if !good || lambda == 8.0 {
                notes.push(format!(
                    "{kind}(lambda={lambda}) pde {} trace {} ratios {} {}",
                    fmt_list(&pde),
                    fmt_list(&trace),
                    fmt_ratios(&ratios(&pde)),
                    fmt_ratios(&ratios(&trace))
                ));
            }
            ok &= good;
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed <= Duration::from_secs(120);
    rep.add(
        1,
        "kernel correctness",
        ok,
        format!("{elapsed:.2?} total; {}", notes.join("; ")),
    );
}

fn reciprocity(rep: &mut Report) {
    let mut kl = Vec::new();
    let mut pr = Vec::new();
    for m in MS {
        let s = KernelSet::solve(8.0, TriGrid::new(m).unwrap()).unwrap();
        kl.push(reciprocity_residual(&s.k, &s.l).unwrap());
        pr.push(reciprocity_residual(&s.p, &s.r).unwrap());
    }
    let zero = KernelSet::solve(0.0, TriGrid::new(81).unwrap()).unwrap();
    let z = reciprocity_residual(&zero.k, &zero.l).unwrap()
        + reciprocity_residual(&zero.p, &zero.r).unwrap();
    let ok = ratios(&kl).iter().chain(&ratios(&pr)).all(|&r| r >= 3.5) && z == 0.0;
    rep.add(
        2,
        "reciprocity oracle",
        ok,
        format!(
            "k/l {} ratios {}, p/r {} ratios {}, lambda=0 residual {z:e}",
            fmt_list(&kl),
            fmt_ratios(&ratios(&kl)),
            fmt_list(&pr),
            fmt_ratios(&ratios(&pr))
        ),
    );
}

fn round_trip(rep: &mut Report) {
    let (mut kl, mut pr) = (Vec::new(), Vec::new());
    for m in MS {
        let s = KernelSet::solve(8.0, TriGrid::new(m).unwrap()).unwrap();
        let grid = Grid::new(m).unwrap();
        let w = Field::from_fn(grid, |x| (PI * x).sin());
        kl.push(
            round_trip_error(
                &VolterraOp::new(&s.k, grid),
                &VolterraOp::new(&s.l, grid),
                &w,
            )
            .unwrap(),
        );
        pr.push(
            round_trip_error(
                &VolterraOp::new(&s.p, grid),
                &VolterraOp::new(&s.r, grid),
                &w,
            )
            .unwrap(),
        );
    }
    let ok =
        kl[2] <= 1e-3 && pr[2] <= 1e-3 && ratios(&kl).iter().chain(&ratios(&pr)).all(|&r| r >= 3.5);
    rep.add(
        3,
        "transform round trip",
        ok,
        format!(
            "(k,l) {} ratios {}, (p,r) {} ratios {}",
            fmt_list(&kl),
            fmt_ratios(&ratios(&kl)),
            fmt_list(&pr),
            fmt_ratios(&ratios(&pr))
        ),
    );
}

fn energy_law(rep: &mut Report) {
    let cfg = ScenarioConfig {
        t_end: 2.0,
        record_every: 1,
        ..linear(Mode::Uncontrolled, 8.0)
    };
    let tr = run_scenario(&cfg).unwrap();
    let e: Vec<f64> = tr.plant_states.iter().map(discrete_energy).collect();
    let rises = e.windows(2).filter(|w| w[1] > w[0]).count();
    let bal = energy_balance(&tr).unwrap();
    let (mut worst, mut worst_t, mut used) = (0.0f64, 0.0, 0usize);
    for b in &bal {
        if b.slope.abs() > 1e-3 {
            used += 1;
            let rel = ((b.rate - b.flux) / b.flux).abs();
            if rel > worst {
                worst = rel;
                worst_t = b.t;
            }
        }
    }
    let ok = rises == 0 && used > 0 && worst <= 0.05;
    rep.add(
        4,
        "solver energy law",
        ok,
        format!(
            "{} steps, {rises} energy increases; dE/dt vs -u_x(0)^2/2 worst relative error {worst:.3e} at t={worst_t:.3} over {used} steps with |u_x(0)| > 1e-3",
            bal.len()
        ),
    );
}

fn closed_loop_decay(rep: &mut Report) {
    let start = Instant::now();
    let cfg = linear(Mode::OutputFeedback, 8.0);
    let tr = run_scenario(&cfg).unwrap();
    let l2 = norm_series(&tr.plant_states, NormKind::L2).unwrap();
    let rate = fit_last_half(&tr.times, &l2).unwrap().rate;
    let free = plant_l2_rate(&linear(Mode::Uncontrolled, 8.0));
    let e0 = norm(&observer_error(&tr, 0).unwrap(), NormKind::L2).unwrap();
    let e1 = norm(&observer_error(&tr, tr.len() - 1).unwrap(), NormKind::L2).unwrap();
    let elapsed = start.elapsed();
    let ok = rate > 0.0
        && rate > free
        && e1 <= 1e-3 * e0
        && elapsed <= Duration::from_secs(60)
        && (tr.final_time() - 4.0).abs() < 1e-12;
    rep.add(
        5,
        "closed-loop decay (linear)",
        ok,
        format!(
            "plant rate {rate:.4} vs uncontrolled {free:.4}; observer error {e0:.3e} -> {e1:.3e} (ratio {:.3e}) at t={}; {elapsed:.2?}",
            e1 / e0,
            tr.final_time()
        ),
    );
}

fn nonlinear_stability(rep: &mut Report) {
    let mut ok = true;
    let mut notes = Vec::new();
    for a in [0.05, 0.1] {
        let cfg = ScenarioConfig {
            mode: Mode::OutputFeedback,
            plant_nonlinear: true,
            observer_nonlinear: true,
            lambda: 8.0,
            u0: InitialCondition::bump(a),
            uhat0: InitialCondition::zero(),
            ..ScenarioConfig::default()
        };
        let tr = run_scenario(&cfg).unwrap();
        let hp = norm_series(&tr.plant_states, NormKind::H3).unwrap();
        let ho = norm_series(&tr.observer_states, NormKind::H3).unwrap();
        let rp = fit_last_half(&tr.times, &hp).unwrap().rate;
        let ro = fit_last_half(&tr.times, &ho).unwrap().rate;
        ok &= rp > 0.0 && ro > 0.0;
        notes.push(format!(
            "a={a}: plant H3 rate {rp:.4}, observer H3 rate {ro:.4}"
        ));
    }
    rep.add(
        6,
        "nonlinear local stability (H3 rates)",
        ok,
        notes.join("; "),
    );

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reproduction");
    let out = tempfile::tempdir().unwrap();
    let b = batch(&dir, out.path(), None).unwrap();
    assert!(b.error.is_none(), "reproduction batch failed");
    let ratio = |name: &str| {
        let e = b
            .entries
            .iter()
            .find(|e| e.name == name)
            .expect("batch entry");
        e.plant_l2_final.unwrap() / e.plant_l2_initial.unwrap()
    };
    let ctrl = ratio("output_feedback");
    let free = ratio("uncontrolled");
    let t_end = load_config(&dir.join("uncontrolled.toml")).unwrap().t_end;
    rep.add(
        6,
        "reproduction batch: controlled below 5%",
        ctrl < 0.05,
        format!("controlled L2 final/initial {ctrl:.3e} at t={t_end}"),
    );
    rep.add(
        6,
        "reproduction batch: uncontrolled above 5%",
        free > 0.05,
        format!(
            "uncontrolled L2 final/initial {free:.3e} at t={t_end}; the uncontrolled plant on [0,1] is itself exponentially stable"
        ),
    );
}

const LEVELS: [(usize, f64); 3] = [(51, 4e-3), (101, 2e-3), (201, 1e-3)];

fn target_residual_at(nonlinear: bool, n: usize, dt: f64, t_star: f64) -> TargetResidual {
    let mut cfg = ScenarioConfig {
        mode: Mode::OutputFeedback,
        lambda: 8.0,
        n,
        m: n,
        dt,
        t_end: t_star + 2.0 * dt,
        record_every: 1,
        u0: InitialCondition::bump(if nonlinear { 10.0 } else { 1.0 }),
        uhat0: InitialCondition::zero(),
        ..ScenarioConfig::default()
    };
    cfg.plant_nonlinear = nonlinear;
    cfg.observer_nonlinear = nonlinear;
    let lp = ClosedLoop::new(cfg).unwrap();
    let tr = lp.run().unwrap();
    let trf = Transforms::new(lp.kernels(), *lp.grid()).unwrap();
    let pbar = composite_gain_pbar(&lp.kernels().k, lp.gain()).unwrap();
    let idx = (t_star / dt).round() as usize;
    target_residual(&tr, &trf, &pbar, idx).unwrap()
}

fn target_oracle(rep: &mut Report) {
    for nonlinear in [false, true] {
        let res: Vec<TargetResidual> = LEVELS
            .iter()
            .map(|&(n, dt)| target_residual_at(nonlinear, n, dt, 0.1))
            .collect();
        let hat: Vec<f64> = res.iter().map(|r| r.hat).collect();
        let tilde: Vec<f64> = res.iter().map(|r| r.tilde).collect();
        let ok = ratios(&hat)
            .iter()
            .chain(&ratios(&tilde))
            .all(|&r| r >= 3.0);
        let name = if nonlinear {
            "target-system residual (nonlinear, a=10, F and G included)"
        } else {
            "target-system residual (linear)"
        };
        rep.add(
            7,
            name,
            ok,
            format!(
                "t=0.1, (n, dt) = (51, 4e-3) -> (201, 1e-3): hat {} ratios {}, tilde {} ratios {}",
                fmt_list(&hat),
                fmt_ratios(&ratios(&hat)),
                fmt_list(&tilde),
                fmt_ratios(&ratios(&tilde))
            ),
        );
    }
}

fn lambda_monotonicity(rep: &mut Report) {
    let rates: Vec<f64> = [4.0, 8.0, 16.0]
        .iter()
        .map(|&l| plant_l2_rate(&linear(Mode::OutputFeedback, l)))
        .collect();
    let ok = rates.windows(2).all(|w| w[1] >= w[0]);
    rep.add(
        8,
        "lambda monotonicity",
        ok,
        format!("rates at lambda = 4, 8, 16: {rates:.4?}"),
    );
}

type Poly = fn(f64) -> f64;

fn micro_oracles(rep: &mut Report) {
    let mut notes = Vec::new();
    // stencils reproduce low-degree polynomials up to rounding
    let mut poly_ok = true;
    for n in [11, 201] {
        let g = Grid::new(n).unwrap();
        let h = g.h();
        let cases: [(usize, Poly, Poly); 4] = [
            (1, |x| x * x, |x| 2.0 * x),
            (1, |x| 3.0 * x - 1.0, |_| 3.0),
            (2, |x| x * x - x, |_| 2.0),
            (3, |x| x * x * x + x, |_| 6.0),
        ];
        for (order, f, df) in cases {
            let d = diff(&Field::from_fn(g, f), order).unwrap();
            let err = (0..n).fold(0.0f64, |a, i| a.max((d.at(i) - df(g.x(i))).abs()));
            let tol = 1e3 * f64::EPSILON * 4.0 / h.powi(order as i32);
            poly_ok &= err <= tol;
        }
        let lin = integrate(&Field::from_fn(g, |x| 2.0 * x + 1.0));
        poly_ok &= (lin - 2.0).abs() <= 1e-14;
    }
    notes.push(format!("diff/integrate exact: {poly_ok}"));

    let g = Grid::new(201).unwrap();
    let l2 = norm(&Field::from_fn(g, |x| (PI * x).sin()), NormKind::L2).unwrap();
    let l2_ok = (l2 - 0.5f64.sqrt()).abs() <= 1e-4;
    notes.push(format!(
        "L2(sin) = {l2:.10} (error {:.2e})",
        (l2 - 0.5f64.sqrt()).abs()
    ));

    let t: Vec<f64> = (0..=50).map(|k| k as f64 * 0.02).collect();
    let mut fit_ok = true;
    for (c, rate) in [(1.0, 2.0), (3.5, 0.7), (0.01, 40.0)] {
        let v: Vec<f64> = t.iter().map(|t| c * (-rate * t).exp()).collect();
        let f = fit_decay_rate(&t, &v, (0.0, 1.0)).unwrap();
        fit_ok &= ((f.rate - rate) / rate).abs() <= 1e-10 && ((f.c - c) / c).abs() <= 1e-10;
    }
    notes.push(format!("planted exponentials recovered: {fit_ok}"));

    let g = Grid::new(257).unwrap();
    let y = measure_uxx1(&Field::from_fn(g, |x| (1.0 - x) * (1.0 - x)));
    notes.push(format!("u_xx(1) of (1-x)^2 at n=257: {y:?}"));

    rep.add(
        9,
        "analytic micro-oracles",
        poly_ok && l2_ok && fit_ok && y == 2.0,
        notes.join("; "),
    );
}

fn determinism(rep: &mut Report) {
    let cfg = ScenarioConfig {
        t_end: 0.5,
        u0: InitialCondition::bump(0.1),
        uhat0: InitialCondition::sine_bump(0.02),
        ..ScenarioConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let a = run_scenario_to_dir(&cfg, None, &dir.path().join("a"), true).unwrap();
    let b = run_scenario_to_dir(&cfg, None, &dir.path().join("b"), true).unwrap();
    let mut ok = true;
    let mut names = Vec::new();
    for art in &a.manifest.artifacts {
        let other = b.manifest.artifact(&art.name).expect("same artifacts");
        let bytes_a = std::fs::read(dir.path().join("a").join(&art.name)).unwrap();
        let bytes_b = std::fs::read(dir.path().join("b").join(&art.name)).unwrap();
        ok &= art == other && bytes_a == bytes_b;
        names.push(format!("{} {}", art.name, &art.sha256[..12]));
    }
    rep.add(
        10,
        "determinism",
        ok,
        format!("identical bytes: {}", names.join(", ")),
    );
}

fn main() {
    let start = Instant::now();
    let mut rep = Report::default();
    kernel_correctness(&mut rep);
    reciprocity(&mut rep);
    round_trip(&mut rep);
    energy_law(&mut rep);
    closed_loop_decay(&mut rep);
    nonlinear_stability(&mut rep);
    target_oracle(&mut rep);
    lambda_monotonicity(&mut rep);
    micro_oracles(&mut rep);
    determinism(&mut rep);

    let failed: Vec<&(usize, Check)> = rep.checks.iter().filter(|(_, c)| !c.pass).collect();
    println!(
        "acceptance: {} of {} checks passed in {:.2?}",
        rep.checks.len() - failed.len(),
        rep.checks.len(),
        start.elapsed()
    );
    if !failed.is_empty() {
        for (id, c) in &failed {
            println!("failed [{id}] {}: {}", c.name, c.detail);
        }
        std::process::exit(1);
    }
}
