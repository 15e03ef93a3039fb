use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msflow_core::io::{format_pgm, write_pgm};
use msflow_core::reference::{disk_cells, dumbbell_cells, dumbbell_config};

fn msflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small disk input plus a config; returns (config, init).
fn disk_inputs(dir: &Path, n_steps: usize) -> (PathBuf, PathBuf) {
    let init = dir.join("disk.pgm");
    write_pgm(&init, &disk_cells(24, 6.0)).unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        format!("h = 2e-3\nn_steps = {n_steps}\nkernel = none\nouter_iters = 10\n"),
    )
    .unwrap();
    (cfg, init)
}

fn run_disk(dir: &Path, n_steps: usize, extra: &[&str]) -> (Output, PathBuf) {
    let (cfg, init) = disk_inputs(dir, n_steps);
    let out = dir.join("out");
    let mut args = vec!["run", "--config", s(&cfg), "--init", s(&init), "--out", s(&out)];
    args.extend_from_slice(extra);
    (msflow(&args), out)
}

#[test]
fn missing_init_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = disk_inputs(dir.path(), 1);
    let missing = dir.path().join("absent.pgm");
    let o = msflow(&["run", "--config", s(&cfg), "--init", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.pgm"));
}

#[test]
fn bad_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, init) = disk_inputs(dir.path(), 1);
    std::fs::write(&cfg, "h = -1\n").unwrap();
    let o = msflow(&["run", "--config", s(&cfg), "--init", s(&init), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("h must be positive"));
}

#[test]
fn zero_steps_write_the_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_disk(dir.path(), 0, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 2);
    assert!(out.join("state_000000.pgm").is_file());
}

#[test]
fn run_writes_a_consistent_manifest_and_passes_check() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_disk(dir.path(), 2, &["--dump-plan", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ledger = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 4);
    let plan = std::fs::read_to_string(out.join("plan_000001.csv")).unwrap();
    assert_eq!(plan.lines().next(), Some("src_i,src_j,dst_i,dst_j,mass"));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    for name in ["config.txt", "ledger.csv", "solver.csv", "state_000002.pgm", "plan_000001.csv"] {
        assert!(outputs.iter().any(|o| o["path"] == name), "{name} missing from manifest");
    }
    for o in outputs {
        let bytes = std::fs::read(out.join(o["path"].as_str().unwrap())).unwrap();
        use sha2::Digest;
        assert_eq!(hex::encode(sha2::Sha256::digest(&bytes)), o["sha256"].as_str().unwrap());
    }
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);

    let report = dir.path().join("report.csv");
    let c = msflow(&["check", "--ledger", s(&out), "--report", s(&report)]);
    assert_eq!(c.status.code(), Some(0), "{}", String::from_utf8_lossy(&c.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().next(), Some("check,param,value,bound,provenance,pass"));
    assert!(text.contains("one_step_dissipation"));
}

#[test]
fn tampered_ledger_fails_the_dissipation_check() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_disk(dir.path(), 2, &[]);
    assert_eq!(o.status.code(), Some(0));
    let path = out.join("ledger.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // raise the total energy of the last row by one
    let mut cols: Vec<String> = lines[3].split(',').map(String::from).collect();
    let e: f64 = cols[5].parse().unwrap();
    cols[5] = (e + 1.0).to_string();
    lines[3] = cols.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let c = msflow(&["check", "--ledger", s(&out), "--report", s(&dir.path().join("r.csv"))]);
    assert_ne!(c.status.code(), Some(0));
    let err = String::from_utf8_lossy(&c.stderr);
    assert!(err.contains("one_step_dissipation"), "{err}");
}

#[test]
fn empty_or_missing_ledger_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.csv");
    let c = msflow(&["check", "--ledger", s(dir.path()), "--report", s(&report)]);
    assert_eq!(c.status.code(), Some(1));
    std::fs::write(dir.path().join("ledger.csv"), format!("{}\n", msflow_core::ledger::LEDGER_HEADER)).unwrap();
    std::fs::write(dir.path().join("config.txt"), "h = 1e-3\n").unwrap();
    let c = msflow(&["check", "--ledger", s(dir.path()), "--report", s(&report)]);
    assert_eq!(c.status.code(), Some(1));
}

#[test]
fn repeated_runs_give_identical_ledgers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, out_a) = run_disk(a.path(), 2, &[]);
    let (ob, out_b) = run_disk(b.path(), 2, &[]);
    assert!(oa.status.success() && ob.status.success());
    assert_eq!(
        std::fs::read(out_a.join("ledger.csv")).unwrap(),
        std::fs::read(out_b.join("ledger.csv")).unwrap()
    );
}

#[test]
fn refine_writes_one_row_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, init) = disk_inputs(dir.path(), 1);
    let out = dir.path().join("refine");
    let o = msflow(&["refine", "--config", s(&cfg), "--init", s(&init), "--out", s(&out), "--levels", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(out.join("level_1/ledger.csv").is_file());
    let level1 = std::fs::read_to_string(out.join("level_1/config.txt")).unwrap();
    assert!(level1.contains("n_steps = 2") && level1.contains("grid.nx = 48"));
    let curves = std::fs::read_to_string(out.join("energy_curves.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some("t,level_0,level_1"));
}

#[test]
fn version_flag() {
    let o = msflow(&["--version"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn shipped_reference_inputs_match_the_library() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let pgm = std::fs::read_to_string(root.join("dumbbell.pgm")).unwrap();
    assert_eq!(pgm, format_pgm(&dumbbell_cells(128)));
    let cfg = msflow_core::config::FlowConfig::load(&root.join("dumbbell.cfg")).unwrap();
    assert_eq!(cfg, dumbbell_config(50));
}
