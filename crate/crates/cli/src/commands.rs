//! The `run`, `batch`, `compare` and `kernels` verbs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use kdv_core::{
    kernel_to_csv, ClosedLoop, Error, KernelMethod, KernelSet, Mode, ScenarioConfig, SolverOptions,
    TriGrid,
};
use serde::{Deserialize, Serialize};

use crate::config::{config_to_toml, load_config};
use crate::error::{CliError, Result};
use crate::output::{
    kernel_summary, norms_csv, read_json, read_l2_series, summarize, trajectory_csv, KernelSummary,
    RunManifest, Summary, CONFIG_TOML, NORMS_CSV, PLOT_SVG, SUMMARY_JSON, TRAJECTORY_CSV,
};
use crate::plot::{log_plot, Series};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("value serializes to JSON") + "\n"
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: Summary,
    pub times: Vec<f64>,
    pub plant_l2: Vec<f64>,
}

/// Runs one scenario and writes every artifact into `outdir`.
pub fn run_scenario_to_dir(
    cfg: &ScenarioConfig,
    config_path: Option<&Path>,
    outdir: &Path,
    plot: bool,
) -> Result<RunOutcome> {
    create_dir(outdir)?;
    let lp = ClosedLoop::new(cfg.clone())?;
    let traj = lp.run()?;
    let summary = summarize(&lp, &traj)?;

    let mut manifest = RunManifest::new(config_path, outdir);
    manifest.write(CONFIG_TOML, config_to_toml(cfg).as_bytes())?;
    manifest.write(TRAJECTORY_CSV, trajectory_csv(&traj).as_bytes())?;
    let norms = norms_csv(&traj)?;
    manifest.write(NORMS_CSV, norms.as_bytes())?;
    manifest.write(SUMMARY_JSON, json(&summary).as_bytes())?;

    let times = traj.times.clone();
    let plant_l2 = traj
        .plant_states
        .iter()
        .map(|f| kdv_core::norm(f, kdv_core::NormKind::L2))
        .collect::<Result<Vec<_>, _>>()?;
    if plot {
        let svg = log_plot(
            &format!(
                "plant L2 norm, {} (lambda = {})",
                cfg.mode.name(),
                cfg.lambda
            ),
            &[Series {
                label: cfg.mode.name(),
                times: &times,
                values: &plant_l2,
            }],
        );
        manifest.write(PLOT_SVG, svg.as_bytes())?;
    }
    manifest.save()?;
    Ok(RunOutcome {
        manifest,
        summary,
        times,
        plant_l2,
    })
}

pub fn run(config_path: &Path, outdir: &Path, plot: bool) -> Result<RunOutcome> {
    let cfg = load_config(config_path)?;
    run_scenario_to_dir(&cfg, Some(config_path), outdir, plot)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchEntry {
    pub name: String,
    pub mode: String,
    pub status: String,
    pub plant_l2_rate: Option<f64>,
    pub plant_l2_initial: Option<f64>,
    pub plant_l2_final: Option<f64>,
}

pub struct BatchOutcome {
    pub entries: Vec<BatchEntry>,
    pub plot: bool,
    /// First failure, if any run failed.
    pub error: Option<CliError>,
}

/// `*.toml` files of a directory in name order.
pub fn config_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "toml") && p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(
            Error::InvalidArgument(format!("no .toml configs in {}", dir.display())).into(),
        );
    }
    Ok(files)
}

/// Runs every config of `config_dir` into `outdir/<stem>/`, several at a time.
/// All configs are parsed before anything runs.
pub fn batch(config_dir: &Path, outdir: &Path, workers: Option<usize>) -> Result<BatchOutcome> {
    let files = config_files(config_dir)?;
    let jobs: Vec<(String, PathBuf, ScenarioConfig)> = files
        .into_iter()
        .map(|p| {
            let cfg = load_config(&p)?;
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Ok((name, p, cfg))
        })
        .collect::<Result<_>>()?;
    create_dir(outdir)?;

    let workers = workers
        .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
        .unwrap_or(1)
        .clamp(1, jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunOutcome>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((name, path, cfg)) = jobs.get(k) else {
                    break;
                };
                let r = run_scenario_to_dir(cfg, Some(path), &outdir.join(name), false);
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });

    let mut entries = Vec::new();
    let mut error = None;
    let mut curves = Vec::new();
    for ((name, _, cfg), r) in jobs.iter().zip(results.into_inner().unwrap()) {
        let r = r.expect("every job ran");
        let entry = match r {
            Ok(out) => {
                let e = BatchEntry {
                    name: name.clone(),
                    mode: cfg.mode.name().to_string(),
                    status: "ok".into(),
                    plant_l2_rate: out.summary.plant_rate(),
                    plant_l2_initial: Some(out.summary.plant_l2_initial),
                    plant_l2_final: Some(out.summary.plant_l2_final),
                };
                curves.push((name.clone(), cfg.mode, out.times, out.plant_l2));
                e
            }
            Err(err) => {
                let e = BatchEntry {
                    name: name.clone(),
                    mode: cfg.mode.name().to_string(),
                    status: format!("failed: {err}"),
                    plant_l2_rate: None,
                    plant_l2_initial: None,
                    plant_l2_final: None,
                };
                if error
                    .as_ref()
                    .is_none_or(|old: &CliError| err.exit_code() > old.exit_code())
                {
                    error = Some(err);
                }
                e
            }
        };
        entries.push(entry);
    }

    let has_free = curves.iter().any(|c| c.1 == Mode::Uncontrolled);
    let has_ctrl = curves.iter().any(|c| c.1 != Mode::Uncontrolled);
    let plot = has_free && has_ctrl;
    if plot {
        let series: Vec<Series> = curves
            .iter()
            .map(|(name, _, t, v)| Series {
                label: name,
                times: t,
                values: v,
            })
            .collect();
        let svg = log_plot("plant L2 norm, controlled vs uncontrolled", &series);
        let p = outdir.join(PLOT_SVG);
        std::fs::write(&p, svg).map_err(|e| CliError::io(&p, e))?;
    }
    let p = outdir.join("batch.json");
    std::fs::write(&p, json(&entries)).map_err(|e| CliError::io(&p, e))?;
    Ok(BatchOutcome {
        entries,
        plot,
        error,
    })
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    pub dir: PathBuf,
    pub summary: Summary,
    pub times: Vec<f64>,
    pub plant_l2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    /// Plant L² rate of `a` minus that of `b`, when both are defined.
    pub fn rate_difference(&self, a: usize, b: usize) -> Option<f64> {
        Some(self.rows[a].summary.plant_rate()? - self.rows[b].summary.plant_rate()?)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>16} {:>8} {:>14} {:>14} {:>12}",
            "run", "mode", "lambda", "plant rate", "error rate", "final/initial"
        );
        let fmt = |r: Option<f64>| r.map_or("undefined".to_string(), |r| format!("{r:.6}"));
        for row in &self.rows {
            let sm = &row.summary;
            let ratio = if sm.plant_l2_initial > 0.0 {
                format!("{:.3e}", sm.plant_l2_final / sm.plant_l2_initial)
            } else {
                "undefined".into()
            };
            let _ = writeln!(
                s,
                "{:<28} {:>16} {:>8} {:>14} {:>14} {:>12}",
                row.dir.display(),
                sm.mode,
                sm.lambda,
                fmt(sm.plant_rate()),
                fmt(sm.error_rate()),
                ratio
            );
        }
        for a in 0..self.rows.len() {
            for b in a + 1..self.rows.len() {
                let (da, db) = (self.rows[a].dir.display(), self.rows[b].dir.display());
                let line = match self.rate_difference(a, b) {
                    None => format!("{da} vs {db}: rate undefined, no verdict"),
                    Some(d) if d > 0.0 => format!("{da} decays faster than {db} by {d:.6}"),
                    Some(d) if d < 0.0 => format!("{db} decays faster than {da} by {:.6}", -d),
                    Some(_) => format!("{da} and {db} decay at the same rate"),
                };
                let _ = writeln!(s, "{line}");
            }
        }
        s
    }

    /// Plant L² series side by side, one column per run.
    pub fn series_csv(&self) -> Result<String> {
        let t = &self.rows[0].times;
        if self.rows.iter().any(|r| r.times.len() != t.len()) {
            return Err(
                Error::InvalidArgument("runs were recorded at different times".into()).into(),
            );
        }
        let mut s = String::from("t");
        for (k, _) in self.rows.iter().enumerate() {
            let _ = write!(s, ",run{k}");
        }
        s.push('\n');
        for (i, ti) in t.iter().enumerate() {
            let _ = write!(s, "{ti:.16e}");
            for r in &self.rows {
                let _ = write!(s, ",{:.16e}", r.plant_l2[i]);
            }
            s.push('\n');
        }
        Ok(s)
    }
}

/// Loads run directories and checks they share grid and horizon.
pub fn compare(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(
            Error::InvalidArgument("compare needs at least two run directories".into()).into(),
        );
    }
    let mut rows = Vec::new();
    for d in dirs {
        let summary: Summary = read_json(&d.join(SUMMARY_JSON))?;
        let (times, plant_l2) = read_l2_series(&d.join(NORMS_CSV))?;
        rows.push(CompareRow {
            dir: d.clone(),
            summary,
            times,
            plant_l2,
        });
    }
    let first = &rows[0].summary;
    for r in &rows[1..] {
        if r.summary.n != first.n || r.summary.t_end != first.t_end {
            return Err(Error::InvalidArgument(format!(
                "{} (n = {}, t_end = {}) is not comparable with {} (n = {}, t_end = {})",
                r.dir.display(),
                r.summary.n,
                r.summary.t_end,
                rows[0].dir.display(),
                first.n,
                first.t_end
            ))
            .into());
        }
    }
    Ok(Comparison { rows })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelResiduals {
    pub lambda: f64,
    pub method: KernelMethod,
    #[serde(flatten)]
    pub summary: KernelSummary,
}

/// Solves the four kernels and writes `k.csv`, `p.csv`, `l.csv`, `r.csv` and
/// `residuals.json`.
pub fn kernels(
    lambda: f64,
    m: usize,
    method: KernelMethod,
    outdir: &Path,
) -> Result<KernelResiduals> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")).into());
    }
    let opts = SolverOptions {
        method,
        ..SolverOptions::default()
    };
    let set = KernelSet::solve_with(lambda, TriGrid::new(m)?, &opts)?;
    create_dir(outdir)?;
    let mut manifest = RunManifest::new(None, outdir);
    for kern in set.iter() {
        let name = format!("{}.csv", kern.kind().symbol());
        manifest.write(&name, kernel_to_csv(kern).as_bytes())?;
    }
    let res = KernelResiduals {
        lambda,
        method,
        summary: kernel_summary(&set)?,
    };
    manifest.write("residuals.json", json(&res).as_bytes())?;
    manifest.save()?;
    Ok(res)
}
