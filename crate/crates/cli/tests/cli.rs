use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kdv_cli::{compare, parse_config, RunManifest, Summary};

fn kdv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdv"))
        .args(args)
        .output()
        .expect("spawn kdv")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SHORT: &str = r#"
mode = "output_feedback"
lambda = 8.0
n = 61
m = 41
dt = 0.002
t_end = 0.2
record_every = 5
u0 = { family = "bump", amplitude = 0.5 }
uhat0 = { family = "zero" }
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_documented_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", SHORT);
    let out = dir.path().join("run");
    let o = kdv(&["run", s(&cfg), "-o", s(&out), "--plot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x,u,u_hat,U,y_meas\n"));
    // 21 records of 61 nodes plus the header
    assert_eq!(traj.lines().count(), 21 * 61 + 1);
    let norms = std::fs::read_to_string(out.join("norms.csv")).unwrap();
    assert!(norms.starts_with("t,kind,plant,observer,error\n"));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.deterministic);
    for name in [
        "config.toml",
        "trajectory.csv",
        "norms.csv",
        "summary.json",
        "plot.svg",
    ] {
        let a = manifest.artifact(name).expect(name);
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(a.bytes, bytes.len() as u64);
        assert_eq!(a.sha256, kdv_cli::output::sha256_hex(&bytes));
    }
    // the echoed config re-parses to the original
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(parse_config(&echoed).unwrap(), parse_config(SHORT).unwrap());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.toml", SHORT);
    for k in ["1", "2"] {
        let o = kdv(&["run", s(&cfg), "-o", s(&dir.path().join(k))]);
        assert!(o.status.success());
    }
    for name in ["trajectory.csv", "norms.csv", "summary.json", "config.toml"] {
        let a = std::fs::read(dir.path().join("1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("2").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}

#[test]
fn zero_data_gives_zero_output_and_undefined_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "z.toml",
        "mode = \"uncontrolled\"\nn = 31\nt_end = 0.1\nrecord_every = 2\nu0 = { family = \"zero\" }\n",
    );
    let out = dir.path().join("z");
    assert!(kdv(&["run", s(&cfg), "-o", s(&out)]).status.success());
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    for line in traj.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[3], "");
    }
    let summary: Summary =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let rate = &summary.rates["plant_l2"];
    assert!(rate.rate.is_none() && rate.reason.is_some());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cases = [
        ("lambda = -1.0\n", 1),
        ("lamda = 1.0\n", 1),
        ("mode = \"OutputFeedback\"\n", 1),
        ("n = \"many\"\n", 1),
        // incompatible initial data
        ("mode = \"uncontrolled\"\nu0 = { family = \"zero\" }\nn = 5\n", 1),
        // blows up within a few steps
        (
            "mode = \"uncontrolled\"\ndt = 0.01\nt_end = 0.5\nn = 101\nu0 = { family = \"bump\", amplitude = 1e5 }\n",
            2,
        ),
    ];
    for (k, (text, code)) in cases.iter().enumerate() {
        let cfg = write(dir.path(), &format!("c{k}.toml"), text);
        let o = kdv(&["run", s(&cfg), "-o", s(&out)]);
        assert_eq!(
            o.status.code(),
            Some(*code),
            "{text}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert_eq!(
        kdv(&["run", "/nonexistent/x.toml", "-o", s(&out)])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(kdv(&["no-such-verb"]).status.code(), Some(1));
    assert_eq!(kdv(&["--help"]).status.code(), Some(0));
}

#[test]
fn compare_checks_grids_and_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", SHORT);
    let b = write(dir.path(), "b.toml", &SHORT.replace("n = 61", "n = 81"));
    let free = write(
        dir.path(),
        "f.toml",
        &SHORT.replace("\"output_feedback\"", "\"uncontrolled\""),
    );
    let (ra, rb, rf) = (
        dir.path().join("ra"),
        dir.path().join("rb"),
        dir.path().join("rf"),
    );
    for (c, o) in [(&a, &ra), (&b, &rb), (&free, &rf)] {
        assert!(kdv(&["run", s(c), "-o", s(o)]).status.success());
    }
    let same = compare(&[ra.clone(), ra.clone()]).unwrap();
    assert_eq!(same.rate_difference(0, 1), Some(0.0));
    let pair = compare(&[ra.clone(), rf.clone()]).unwrap();
    assert!(pair.rate_difference(0, 1).unwrap() > 0.0);

    let o = kdv(&["compare", s(&ra), s(&rf)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("decays faster than"), "{text}");

    let o = kdv(&["compare", s(&ra), s(&rb)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(kdv(&["compare", s(&ra)]).status.code(), Some(1));
}

#[test]
fn batch_runs_each_config_and_plots_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfgs = dir.path().join("cfg");
    std::fs::create_dir(&cfgs).unwrap();
    write(&cfgs, "controlled.toml", SHORT);
    write(
        &cfgs,
        "free.toml",
        &SHORT.replace("\"output_feedback\"", "\"uncontrolled\""),
    );
    write(&cfgs, "notes.txt", "ignored");
    let out = dir.path().join("out");
    let o = kdv(&["batch", s(&cfgs), "-o", s(&out), "-j", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["controlled", "free"] {
        assert!(out.join(name).join("trajectory.csv").is_file());
    }
    assert!(out.join("plot.svg").is_file());
    assert!(out.join("batch.json").is_file());

    // a bad config aborts the batch before anything runs
    write(&cfgs, "bad.toml", "lambda = -3.0\n");
    let out2 = dir.path().join("out2");
    let o = kdv(&["batch", s(&cfgs), "-o", s(&out2)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out2.exists());
}

#[test]
fn kernels_verb_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = kdv(&["kernels", "--lambda", "8", "--m", "21", "-o", s(&out)]);
    assert!(o.status.success());
    for kind in ["k", "l", "p", "r"] {
        let text = std::fs::read_to_string(out.join(format!("{kind}.csv"))).unwrap();
        assert!(text.starts_with("x,y,value\n"));
        assert_eq!(text.lines().count(), 21 * 22 / 2 + 1);
    }
    let res: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("residuals.json")).unwrap())
            .unwrap();
    assert_eq!(res["lambda"], 8.0);
    assert!(res["reciprocity_kl"].as_f64().unwrap() < 1e-2);
    let o = kdv(&["kernels", "--lambda", "-1", "--m", "21", "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}
