//! End-to-end behavior of the `pmh` binary: exit codes, artifacts,
//! config diagnostics and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pmh")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).expect("write config");
    path
}

fn run(args: &[&str], extra_env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    cmd.env_remove("PMH_THREADS");
    for (k, v) in extra_env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn pmh")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn missing_required_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "medium.a = 1.0\n");
    let out = run(
        &["effective-flux", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    let err = stderr_text(&out);
    println!("exit {}, stderr: {}", exit_code(&out), err.trim());
    assert_eq!(exit_code(&out), 2);
    assert!(err.contains("medium.kind"), "diagnostic should name the missing key");
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "medium.kind = two_atom\nflux.nodes = 65\nflux.typo_key = 3\n",
    );
    let out = run(
        &["effective-flux", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    let err = stderr_text(&out);
    println!("exit {}, stderr: {}", exit_code(&out), err.trim());
    assert_eq!(exit_code(&out), 2);
    assert!(err.contains("flux.typo_key"), "diagnostic should name the unknown key");
}

#[test]
fn missing_config_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["effective-flux", "--out", dir.path().to_str().unwrap()], &[]);
    println!("exit {}, stderr: {}", exit_code(&out), stderr_text(&out).trim());
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn effective_flux_two_atom_writes_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "medium.kind = two_atom\nflux.p_max = 4\nflux.nodes = 513\nflux.probes = 1.0\n",
    );
    let out = run(
        &["effective-flux", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    println!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let table = std::fs::read_to_string(dir.path().join("gbar.csv")).expect("gbar.csv");
    assert!(table.starts_with("p,gbar,stderr"), "table header, got: {}", &table[..table.len().min(40)]);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .expect("summary.json parses");
    let fbar1 = summary["fbar_probes"][0]["fbar"].as_f64().unwrap();
    println!("fbar(1) = {fbar1}");
    assert!((fbar1 - 16.0 / 9.0).abs() < 1e-6, "two-atom closed form");
    assert!(summary["properties"]["monotone"].as_bool().unwrap());
}

#[test]
fn effective_flux_constant_medium_matches_pointwise_flux() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "medium.kind = constant\nmedium.a = 2.0\nmedium.b = 0.5\nmedium.gamma = 1.0\n\
         flux.p_max = 4\nflux.nodes = 257\nflux.probes = 1.0\n",
    );
    let out = run(
        &["effective-flux", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    // For a deterministic medium fbar is the pointwise flux: 2*1*1 + 0.5,
    // reproduced up to the table's local interpolation error at 257 nodes.
    let fbar1 = summary["fbar_probes"][0]["fbar"].as_f64().unwrap();
    println!("constant-medium fbar(1) = {fbar1}");
    assert!((fbar1 - 2.5).abs() < 1e-6);
}

#[test]
fn solve_stationary_state_is_preserved_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "medium.kind = two_atom\nmedium.seed = 3\n\
         solver.domain_length = 1.0\nsolver.cells = 64\nsolver.epsilon = 0.125\n\
         solver.dt = 1e-3\nsolver.t_end = 0.05\nsolver.snapshots = 5\n\
         experiment.profile = constant\nexperiment.level = 0.8\n",
    );
    let out = run(
        &["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    println!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let masses: Vec<f64> = manifest["snapshots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["mass"].as_f64().unwrap())
        .collect();
    println!("masses: {masses:?}");
    assert!(masses.len() >= 2);
    for m in &masses {
        assert!((m - masses[0]).abs() < 1e-12, "constant data stays stationary");
    }

    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.lines().count() > 5, "trajectory rows present");
}

#[test]
fn under_resolved_oscillation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // 32 cells on length 1 gives h = 1/32; epsilon = 0.1 is under 8 cells.
    let cfg = write_config(
        dir.path(),
        "medium.kind = two_atom\n\
         solver.domain_length = 1.0\nsolver.cells = 32\nsolver.epsilon = 0.1\n\
         solver.dt = 1e-3\nsolver.t_end = 0.01\n",
    );
    let out = run(
        &["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    let err = stderr_text(&out);
    println!("exit {}, stderr: {}", exit_code(&out), err.trim());
    assert_eq!(exit_code(&out), 2);
    assert!(err.contains("cells"), "diagnostic mentions resolution");
}

fn tiny_homogenize_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "medium.kind = periodic\nmedium.period = 1.0\nmedium.a_range = 1.0, 3.0\n\
         medium.modes = 2\n\
         experiment.domain_length = 2.0\nexperiment.eps_list = 0.25, 0.0625\n\
         experiment.seeds_per_eps = 2\nexperiment.cells_per_eps = 16\n\
         experiment.hom_cells = 256\n\
         solver.dt = 2e-3\nsolver.t_end = 0.1\nsolver.snapshots = 4\n\
         flux.mc_samples = 2048\nflux.nodes = 129\n",
    )
}

#[test]
fn homogenize_writes_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_homogenize_config(dir.path());
    let out = run(
        &[
            "homogenize",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--plot",
        ],
        &[],
    );
    println!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));

    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    println!("report.csv:\n{csv}");
    assert!(csv.starts_with("epsilon,E_mean,E_stderr,W,n_cells,n_seeds_ok,pass"));
    assert_eq!(csv.lines().count(), 3, "header plus two scale rows");
    assert!(!csv.contains("wall"), "timing stays out of the reproducible artifact");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["report"]["rows"].as_array().unwrap().len(), 2);

    let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
    assert!(svg.starts_with("<?xml"), "svg preamble");
    assert_eq!(svg.matches("<polyline").count(), 2, "one polyline per error curve");
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn homogenize_report_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_homogenize_config(dir.path());

    let mut reports: Vec<Vec<u8>> = Vec::new();
    for (label, threads) in [("a", "1"), ("b", "4"), ("c", "1"), ("d", "4")] {
        let out_dir = dir.path().join(label);
        std::fs::create_dir_all(&out_dir).unwrap();
        let out = run(
            &[
                "homogenize",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--threads",
                threads,
            ],
            &[],
        );
        assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
        reports.push(std::fs::read(out_dir.join("report.csv")).unwrap());
    }
    for r in &reports[1..] {
        assert_eq!(r, &reports[0], "report.csv must not depend on run or thread count");
    }
    println!(
        "4 runs x (1,4) threads produced identical report.csv ({} bytes)",
        reports[0].len()
    );
}

#[test]
fn kinetic_check_passes_on_bump_and_fails_under_inflation() {
    let dir = tempfile::tempdir().unwrap();
    let base = "medium.kind = two_atom\nmedium.seed = 1\n\
         solver.domain_length = 1.0\nsolver.cells = 64\nsolver.epsilon = 0.125\n\
         solver.dt = 5e-4\nsolver.t_end = 0.05\n\
         experiment.profile = bump\nexperiment.amplitude = 1.0\n\
         kinetic.bins = 24\n";

    let cfg = write_config(dir.path(), base);
    let out = run(
        &["kinetic-check", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    println!("stdout:\n{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    assert!(dir.path().join("defect.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["defect"]["passed"].as_bool().unwrap());
    assert!(summary["kinetic_residual"].as_f64().unwrap().is_finite());

    // Doubling the measured defect must break the bound.
    let inflated = write_config(dir.path(), &format!("{base}kinetic.inflation = 2.0\n"));
    let out = run(
        &["kinetic-check", "--config", inflated.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[],
    );
    println!("inflated exit {}", exit_code(&out));
    assert_eq!(exit_code(&out), 4, "inflated defect must fail the property check");
}

#[test]
fn bad_threads_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "medium.kind = two_atom\n");
    let out = run(
        &["effective-flux", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()],
        &[("PMH_THREADS", "many")],
    );
    println!("exit {}, stderr: {}", exit_code(&out), stderr_text(&out).trim());
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("PMH_THREADS"));
}
