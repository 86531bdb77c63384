//! Run artifacts: CSV tables, summary, manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kdv_core::{
    composite_gain_pbar, fit_last_half, norm, observer_error, pde_residual, reciprocity_residual,
    target_residual, trace_residuals, ClosedLoop, Field, KernelSet, NormKind, Trajectory,
    Transforms,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const NORMS_CSV: &str = "norms.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_TOML: &str = "config.toml";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const PLOT_SVG: &str = "plot.svg";

/// Records used for the target-residual sample.
const TARGET_SAMPLES: usize = 9;

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.grid.n();
    let mut s = String::with_capacity(traj.len() * n * 120);
    s.push_str("t,x,u,u_hat,U,y_meas\n");
    for k in 0..traj.len() {
        let t = traj.times[k];
        let u = traj.plant_states[k].values();
        let uh = traj.observer_states.get(k).map(|f| f.values());
        for (i, ui) in u.iter().enumerate() {
            let _ = write!(s, "{:.16e},{:.16e},{:.16e},", t, traj.grid.x(i), ui);
            if let Some(uh) = uh {
                let _ = write!(s, "{:.16e}", uh[i]);
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", traj.control[k], traj.measurement[k]);
        }
    }
    s
}

/// Norm kinds the grid can resolve.
fn norm_kinds(traj: &Trajectory) -> Vec<NormKind> {
    let probe = Field::zeros(traj.grid);
    NormKind::ALL
        .into_iter()
        .filter(|&k| norm(&probe, k).is_ok())
        .collect()
}

pub fn norms_csv(traj: &Trajectory) -> Result<String> {
    let kinds = norm_kinds(traj);
    let mut s = String::new();
    s.push_str("t,kind,plant,observer,error\n");
    for k in 0..traj.len() {
        let err = if traj.has_observer() {
            Some(observer_error(traj, k)?)
        } else {
            None
        };
        for &kind in &kinds {
            let _ = write!(
                s,
                "{:.16e},{},{:.16e},",
                traj.times[k],
                kind,
                norm(&traj.plant_states[k], kind)?
            );
            match (&err, traj.observer_states.get(k)) {
                (Some(e), Some(o)) => {
                    let _ = writeln!(s, "{:.16e},{:.16e}", norm(o, kind)?, norm(e, kind)?);
                }
                _ => s.push_str(",\n"),
            }
        }
    }
    Ok(s)
}

/// Fitted exponential rate, or the reason there is none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub rate: Option<f64>,
    pub c: Option<f64>,
    pub reason: Option<String>,
}

impl Rate {
    fn fit(times: &[f64], values: &[f64]) -> Rate {
        match fit_last_half(times, values) {
            Ok(f) if f.rate.is_finite() => Rate {
                rate: Some(f.rate),
                c: Some(f.c),
                reason: None,
            },
            Ok(_) => Rate::undefined("fit produced a non-finite rate"),
            Err(e) => Rate::undefined(e.to_string()),
        }
    }

    fn undefined(reason: impl Into<String>) -> Rate {
        Rate {
            rate: None,
            c: None,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub trace_max: f64,
    pub pde_interior_max: f64,
    pub pde_core_max: f64,
    pub solve_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub m: usize,
    pub kernels: BTreeMap<String, KernelReport>,
    pub reciprocity_kl: f64,
    pub reciprocity_pr: f64,
}

pub fn kernel_summary(set: &KernelSet) -> Result<KernelSummary> {
    let mut kernels = BTreeMap::new();
    for kern in set.iter() {
        let pde = pde_residual(kern);
        kernels.insert(
            kern.kind().symbol().to_string(),
            KernelReport {
                trace_max: trace_residuals(kern).max(),
                pde_interior_max: pde.interior_max,
                pde_core_max: pde.core_max,
                solve_residual: kern.report().map(|r| r.residual),
            },
        );
    }
    Ok(KernelSummary {
        m: set.k.tri().m(),
        kernels,
        reciprocity_kl: reciprocity_residual(&set.k, &set.l)?,
        reciprocity_pr: reciprocity_residual(&set.p, &set.r)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub hat: Option<f64>,
    pub tilde: Option<f64>,
    /// Record times at which the residuals were evaluated.
    pub times: Vec<f64>,
    pub reason: Option<String>,
}

impl TargetSummary {
    fn undefined(reason: impl Into<String>) -> Self {
        TargetSummary {
            hat: None,
            tilde: None,
            times: Vec::new(),
            reason: Some(reason.into()),
        }
    }
}

fn target_summary(lp: &ClosedLoop, traj: &Trajectory) -> Result<TargetSummary> {
    let cfg = lp.config();
    if !traj.has_observer() {
        return Ok(TargetSummary::undefined("no observer in this run"));
    }
    if cfg.record_every != 1 {
        return Ok(TargetSummary::undefined(
            "needs consecutive time levels (record_every = 1)",
        ));
    }
    if cfg.plant_nonlinear != cfg.observer_nonlinear {
        return Ok(TargetSummary::undefined(
            "plant and observer use different models",
        ));
    }
    if traj.len() < 3 {
        return Ok(TargetSummary::undefined("fewer than three records"));
    }
    let tr = Transforms::new(lp.kernels(), *lp.grid())?;
    let pbar = composite_gain_pbar(&lp.kernels().k, lp.gain())?;
    let inner = traj.len() - 2;
    let mut idx: Vec<usize> = (0..TARGET_SAMPLES)
        .map(|q| 1 + q * (inner - 1) / (TARGET_SAMPLES - 1).max(1))
        .collect();
    idx.dedup();
    let (mut hat, mut tilde) = (0.0f64, 0.0f64);
    for &k in &idx {
        let r = target_residual(traj, &tr, &pbar, k)?;
        hat = hat.max(r.hat);
        tilde = tilde.max(r.tilde);
    }
    Ok(TargetSummary {
        hat: Some(hat),
        tilde: Some(tilde),
        times: idx.iter().map(|&k| traj.times[k]).collect(),
        reason: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub lambda: f64,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub records: usize,
    pub plant_l2_initial: f64,
    pub plant_l2_final: f64,
    pub error_l2_initial: Option<f64>,
    pub error_l2_final: Option<f64>,
    pub rates: BTreeMap<String, Rate>,
    pub kernels: KernelSummary,
    pub target_residual: TargetSummary,
}

impl Summary {
    pub fn plant_rate(&self) -> Option<f64> {
        self.rates.get("plant_l2").and_then(|r| r.rate)
    }

    pub fn error_rate(&self) -> Option<f64> {
        self.rates.get("error_l2").and_then(|r| r.rate)
    }
}

fn series(states: &[Field], kind: NormKind) -> Result<Vec<f64>> {
    Ok(states
        .iter()
        .map(|f| norm(f, kind))
        .collect::<Result<_, _>>()?)
}

pub fn summarize(lp: &ClosedLoop, traj: &Trajectory) -> Result<Summary> {
    let cfg = lp.config();
    let t = &traj.times;
    let plant_l2 = series(&traj.plant_states, NormKind::L2)?;
    let mut rates = BTreeMap::new();
    rates.insert("plant_l2".to_string(), Rate::fit(t, &plant_l2));
    let h3_ok = norm(&Field::zeros(traj.grid), NormKind::H3).is_ok();
    if h3_ok {
        let h3 = series(&traj.plant_states, NormKind::H3)?;
        rates.insert("plant_h3".to_string(), Rate::fit(t, &h3));
    }
    let (mut e0, mut e1) = (None, None);
    if traj.has_observer() {
        let errs: Vec<Field> = (0..traj.len())
            .map(|k| observer_error(traj, k))
            .collect::<Result<_, _>>()?;
        let err_l2 = series(&errs, NormKind::L2)?;
        e0 = err_l2.first().copied();
        e1 = err_l2.last().copied();
        rates.insert("error_l2".to_string(), Rate::fit(t, &err_l2));
        if h3_ok {
            let h3 = series(&traj.observer_states, NormKind::H3)?;
            rates.insert("observer_h3".to_string(), Rate::fit(t, &h3));
        }
    }
    Ok(Summary {
        mode: cfg.mode.name().to_string(),
        lambda: cfg.lambda,
        n: cfg.n,
        dt: cfg.dt,
        t_end: cfg.t_end,
        records: traj.len(),
        plant_l2_initial: plant_l2.first().copied().unwrap_or(0.0),
        plant_l2_final: plant_l2.last().copied().unwrap_or(0.0),
        error_l2_initial: e0,
        error_l2_final: e1,
        rates,
        kernels: kernel_summary(lp.kernels())?,
        target_residual: target_summary(lp, traj)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub outdir: PathBuf,
    /// No random inputs anywhere in the pipeline.
    pub deterministic: bool,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(config_path: Option<&Path>, outdir: &Path) -> Self {
        RunManifest {
            config_path: config_path.map(Path::to_path_buf),
            outdir: outdir.to_path_buf(),
            deterministic: true,
            artifacts: Vec::new(),
        }
    }

    /// Writes `contents` under the output directory and records its checksum.
    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.outdir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(Artifact {
            name: name.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }

    pub fn save(&self) -> Result<()> {
        let path = self.outdir.join(MANIFEST_JSON);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))
}

/// Plant L² series from a `norms.csv`.
pub fn read_l2_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(CliError::parse(
                path,
                format!("line {}: expected 5 columns", lineno + 1),
            ));
        }
        if cols[1] != NormKind::L2.name() {
            continue;
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| CliError::parse(path, format!("line {}: {e}", lineno + 1)))
        };
        t.push(num(cols[0])?);
        v.push(num(cols[2])?);
    }
    Ok((t, v))
}
