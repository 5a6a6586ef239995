//! End-to-end checks of the command-line surface: run/analyze/diagnose,
//! the file formats, determinism, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gluesim"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn ou_config() -> String {
    r#"
[units]
temperature = 1.0

[schedule]
n_steps = 100
dt = 0.01

[potential]
kind = "quadratic"
kappa = 1.0
center = [0.0]

[sampler]
kind = "em"
batch = 4

[output]
prefix = "ou"
"#
    .to_string()
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("gluesim-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Workdir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

#[test]
fn run_row_count_and_determinism() {
    let w = Workdir::new("run");
    let cfg = w.path("ou.toml");
    write(&cfg, &ou_config());

    for out in ["a", "b"] {
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", "7", "--out-dir"])
            .arg(w.path(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(w.path("a").join("ou_traj.csv")).unwrap();
    let b = std::fs::read(w.path("b").join("ou_traj.csv")).unwrap();
    assert_eq!(a, b, "identical config + seed must produce identical files");

    let text = String::from_utf8(a).unwrap();
    assert!(
        text.starts_with("# manifest "),
        "files begin with the manifest hash comment"
    );
    let data_rows = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("step"))
        .count();
    assert_eq!(data_rows, 400, "N=100, B=4 -> 400 rows");

    // Different seed changes the data.
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "8", "--out-dir"])
        .arg(w.path("c"))
        .status()
        .unwrap();
    assert!(status.success());
    let c = std::fs::read(w.path("c").join("ou_traj.csv")).unwrap();
    assert_ne!(text.as_bytes(), &c[..]);
}

#[test]
fn unknown_config_key_is_exit_2_naming_the_key() {
    let w = Workdir::new("badkey");
    let cfg = w.path("bad.toml");
    write(&cfg, &ou_config().replace("dt = 0.01", "stifness = 50.0"));
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(w.path("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("stifness"),
        "message must name the offending key: {stderr}"
    );
}

#[test]
fn usage_errors_and_missing_files() {
    let w = Workdir::new("usage");
    // Unknown suite -> usage error (2).
    let out = bin()
        .args(["diagnose", "--suite", "nonsense", "--out-dir"])
        .arg(w.path("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Missing trajectory file -> I/O error (3).
    let out = bin()
        .args(["analyze", "--traj"])
        .arg(w.path("missing.csv"))
        .arg("--rg")
        .arg("--out-dir")
        .arg(w.path("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn analyze_produces_expected_tables() {
    let w = Workdir::new("analyze");
    let cfg = w.path("ou3d.toml");
    // A 3-atom chain in 3D so the radius of gyration applies (9 coords).
    write(
        &cfg,
        r#"
[units]
temperature = 1.0

[schedule]
n_steps = 200
dt = 0.02

[potential]
kind = "quadratic"
kappa = 1.0
center = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]

[sampler]
kind = "harmonic"
batch = 3

[output]
prefix = "chain"
"#,
    );
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "3", "--out-dir"])
        .arg(w.path("out"))
        .status()
        .unwrap();
    assert!(status.success());

    let traj = w.path("out").join("chain_traj.csv");
    let status = bin()
        .args(["analyze", "--traj"])
        .arg(&traj)
        .args([
            "--rg",
            "--acf-col",
            "0",
            "--angle-acf-col",
            "0",
            "--max-lag",
            "32",
            "--corr-coord",
            "0",
            "--dist-matrix",
            "aligned",
        ])
        .arg("--out-dir")
        .arg(w.path("out"))
        .status()
        .unwrap();
    assert!(status.success());

    // Rg table has one row per trajectory row.
    let rg = std::fs::read_to_string(w.path("out").join("chain_traj_rg.csv")).unwrap();
    assert_eq!(
        rg.lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("step"))
            .count(),
        600
    );

    // ACF tables carry both lag axes and C(0) = 1.
    let acf = std::fs::read_to_string(w.path("out").join("chain_traj_circacf_coord0.csv")).unwrap();
    let first = acf.lines().find(|l| l.starts_with("0,")).unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields[0], "0");
    assert_eq!(fields[1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0);

    // Matrix files start with the shape line matching the batch size.
    let m = std::fs::read_to_string(w.path("out").join("chain_traj_corr_coord0.mat")).unwrap();
    let shape = m.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(shape, "3 3");
    let d = std::fs::read_to_string(w.path("out").join("chain_traj_dist.mat")).unwrap();
    let shape = d.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(shape, "3 3");
}

#[test]
fn analyze_rejects_malformed_rows_with_line_number() {
    let w = Workdir::new("malformed");
    let traj = w.path("bad.csv");
    write(
        &traj,
        "# manifest 0\nstep,replica,time,coord_0\n1,0,0.01,1.0\n2,0,xyz,1.0\n",
    );
    let out = bin()
        .args(["analyze", "--traj"])
        .arg(&traj)
        .args(["--acf-col", "0"])
        .arg("--out-dir")
        .arg(w.path("out"))
        .output()
        .unwrap();
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("line 4"),
        "error names the offending line: {stderr}"
    );
}

#[test]
fn diagnose_cheap_suites_pass() {
    let w = Workdir::new("diag");
    for suite in ["kl-budget", "noise-fusion"] {
        let out = bin()
            .args(["diagnose", "--suite", suite, "--out-dir"])
            .arg(w.path("out"))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "suite {suite}: {out:?}");
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("PASS"));
        let report =
            std::fs::read_to_string(w.path("out").join(format!("diagnose_{suite}.csv"))).unwrap();
        assert!(report.starts_with("check,measured,lo,hi,verdict"));
    }
}

#[test]
fn lattice_run_is_worker_independent() {
    let w = Workdir::new("lattice");
    let cfg = w.path("lat.toml");
    write(
        &cfg,
        r#"
[units]
temperature = 1.0

[schedule]
n_steps = 20
dt = 0.05

[potential]
kind = "quadratic"
kappa = 1.0
center = [0.0, 0.0]

[sampler]
kind = "em"

[lattice]
slices = 6
replicas = 4
iterations = 20
horizontal = "adjacent-glue"

[output]
prefix = "lat"
"#,
    );
    let mut outputs = Vec::new();
    for (tag, workers) in [("w1", "1"), ("w4", "4")] {
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", "5", "--workers", workers, "--out-dir"])
            .arg(w.path(tag))
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(w.path(tag).join("lat_traj.csv")).unwrap());
    }
    assert_eq!(
        outputs[0], outputs[1],
        "lattice output depends on worker count"
    );
}

#[test]
fn underdamped_run_writes_velocities() {
    let w = Workdir::new("under");
    let cfg = w.path("u.toml");
    write(
        &cfg,
        r#"
[units]
temperature = 1.0

[schedule]
n_steps = 50
dt = 0.01

[potential]
kind = "quadratic"
kappa = 1.0
center = [0.0]

[sampler]
kind = "underdamped"
gamma = 2.0
batch = 2

[output]
prefix = "u"
"#,
    );
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(w.path("out"))
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(w.path("out").join("u_traj.csv")).unwrap();
    let header = text.lines().find(|l| l.starts_with("step")).unwrap();
    assert!(header.contains("vel_0"));
}

#[test]
fn radial_stack_run_with_glued_target() {
    let w = Workdir::new("radial");
    let cfg = w.path("r.toml");
    write(
        &cfg,
        r#"
[units]
temperature = 1.0

[schedule]
n_steps = 200
dt = 0.01

[potential]
kind = "quadratic"
kappa = 1.0
center = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]

[sampler]
kind = "em"

[exactness]
mh_enabled = true
mh_target = "glued"

[glue]
kind = "radial-rmin"
k = 0.5
r_min = 1.0
neighbors = 2
rho = 0.6

[lattice]
slices = 5
replicas = 1
iterations = 0

[output]
prefix = "r"
"#,
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(w.path("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let summary = std::fs::read_to_string(w.path("out").join("r_summary.txt")).unwrap();
    assert!(summary.contains("mh acceptance rate"), "{summary}");
}

#[test]
fn lattice_arex_run_reports_swap_rate() {
    let w = Workdir::new("arex");
    let cfg = w.path("arex.toml");
    write(
        &cfg,
        r#"
[units]
temperature = 1.0

[schedule]
n_steps = 10
dt = 0.05

[potential]
kind = "quadratic"
kappa = 1.0
center = [0.0]

[sampler]
kind = "em"

[exactness]
arex_enabled = true
lambda_intervals = 3

[lattice]
slices = 4
replicas = 4
iterations = 30
horizontal = "potential"

[output]
prefix = "arex"
"#,
    );
    let mut outputs = Vec::new();
    for (tag, workers) in [("w1", "1"), ("w3", "3")] {
        let status = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--seed", "13", "--workers", workers, "--out-dir"])
            .arg(w.path(tag))
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(w.path(tag).join("arex_traj.csv")).unwrap());
    }
    assert_eq!(
        outputs[0], outputs[1],
        "arex lattice run depends on worker count"
    );
    let summary = std::fs::read_to_string(w.path("w1").join("arex_summary.txt")).unwrap();
    assert!(summary.contains("arex swaps:"), "{summary}");

    // Mismatched ladder length is a config error.
    let bad = w.path("bad.toml");
    write(
        &bad,
        &std::fs::read_to_string(&cfg)
            .unwrap()
            .replace("lambda_intervals = 3", "lambda_intervals = 5"),
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&bad)
        .arg("--out-dir")
        .arg(w.path("bad_out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
