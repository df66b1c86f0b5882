use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_repaint-plus"));
    cmd.env_remove("REPAINT_PLUS_OUT");
    cmd
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn toy_output_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["toy", "--record-trajectory", "--seed", "3", "--set", "n=200"];
    assert!(run(&args, a.path()).status.success());
    let mut threaded = args.to_vec();
    threaded.extend(["--workers", "4"]);
    assert!(run(&threaded, b.path()).status.success());
    for name in ["samples.csv", "trajectory.csv", "rmse.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn csv_headers_and_line_endings() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["toy", "--set", "n=5", "--set", "R=3", "--record-trajectory"], dir.path())
        .status
        .success());
    let samples = read(dir.path(), "samples.csv");
    assert!(samples.starts_with("method,sample_id,coord_index,value,kind\n"));
    assert!(!samples.contains('\r'));
    // 5 samples x 2 coords x (true, prior, 3 methods)
    assert_eq!(samples.lines().count(), 1 + 5 * 2 * 5);
    let traj = read(dir.path(), "trajectory.csv");
    assert!(traj.starts_with("method,round,mean_error\n"));
    assert_eq!(traj.lines().count(), 1 + 3 * 3);
    let rmse = read(dir.path(), "rmse.csv");
    let methods: Vec<&str> = rmse.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["repaint", "repaint_plus_special", "repaint_then_reverse"]);
    assert!(read(dir.path(), "config.resolved").contains("R = 3\n"));
}

#[test]
fn empty_runs_write_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["toy", "--set", "n=0"], dir.path()).status.success());
    assert_eq!(read(dir.path(), "samples.csv"), "method,sample_id,coord_index,value,kind\n");
    assert_eq!(read(dir.path(), "trajectory.csv"), "method,round,mean_error\n");
    let rmse = read(dir.path(), "rmse.csv");
    assert!(rmse.lines().skip(1).all(|l| l.ends_with(",0.0,0.0,0")), "{rmse}");

    let gen = tempfile::tempdir().unwrap();
    assert!(run(&["generate", "--set", "n=0"], gen.path()).status.success());
    assert_eq!(read(gen.path(), "samples.csv"), "method,sample_id,coord_index,value,kind\n");
}

#[test]
fn origin_latent_is_recovered() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["toy", "--set", "n=1", "--set", "z0=0"], dir.path()).status.success());
    for line in read(dir.path(), "rmse.csv").lines().skip(1) {
        let rmse: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        // what remains is the geometric transient from the random start
        assert!(rmse < 1e-12, "{line}");
    }
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\nn = 4\nR = 7 # rounds\nseed = 1\n").unwrap();
    let out = dir.path().join("out");
    let status = run(
        &["toy", "--config", cfg.to_str().unwrap(), "--seed", "9", "--set", "n=2"],
        &out,
    )
    .status;
    assert!(status.success());
    let resolved = read(&out, "config.resolved");
    assert!(resolved.contains("n = 2\n"));
    assert!(resolved.contains("R = 7\n"));
    assert!(resolved.contains("seed = 9\n"));

    // the sidecar reproduces the run
    let again = dir.path().join("again");
    assert!(run(&["toy", "--config", out.join("config.resolved").to_str().unwrap()], &again)
        .status
        .success());
    assert_eq!(read(&out, "samples.csv"), read(&again, "samples.csv"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["toy", "--set", "nonsense=1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonsense"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "n = 3\nbeta = 1.5\n").unwrap();
    let out = run(&["toy", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));

    fs::write(&cfg, "n = 3\nmask = 012\n").unwrap();
    let out = run(&["toy", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn verify_passes_and_negative_controls_fail() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["verify", "--seed", "7"], dir.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    let table = read(dir.path(), "verify.csv");
    assert!(table.starts_with("check,passed,measured,threshold,detail\n"));
    assert!(!table.contains(",false,"));

    let drift = run(&["verify", "--seed", "7", "--set", "verify_omega=1"], dir.path());
    assert_eq!(drift.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&drift.stdout).contains("FAIL pathwise_bound"));

    let mask = run(&["verify", "--seed", "7", "--set", "mask=11"], dir.path());
    assert_eq!(mask.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&mask.stdout);
    let line = stdout.lines().find(|l| l.contains("mask_validity")).unwrap();
    assert!(line.starts_with("FAIL") && line.contains("assumption violated"), "{line}");
}

#[test]
fn bound_reports_budget_and_admissible_delta() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["bound"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("required R: 107"), "{stdout}");
    assert!(stdout.contains("error ceiling: 0e0"), "{stdout}");

    let out = run(
        &["bound", "--set", "epsilon=0.01", "--set", "lambda_hat_max=0.832", "--set", "kappa=1"],
        dir.path(),
    );
    assert!(out.status.success());
    let csv = read(dir.path(), "bound.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let delta: f64 = row[4].parse().unwrap();
    assert!((delta - 1.68e-3).abs() < 1e-12, "{delta}");
}

#[test]
fn generate_and_train_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--set", "n=300"], dir.path());
    assert!(out.status.success());
    let samples = read(dir.path(), "samples.csv");
    assert!(samples.contains("forward,0,0,"));
    assert!(samples.contains(",recovered\n"));

    let out = run(&["train", "--set", "iterations=3000"], dir.path());
    assert!(out.status.success());
    assert!(!read(dir.path(), "model.txt").is_empty());
}

#[test]
fn inpaint_runs_a_single_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["inpaint", "--set", "z0=1.5"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sample 0"));
    assert!(!stdout.contains("sample 1"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["toy", "--set", "n=2"])
        .env("REPAINT_PLUS_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("rmse.csv").exists());
}
