use std::fs;
use std::process::Command;

use diffkernel::dump::read_kernel;
use diffkernel::harness::{parse_report_csv, ConvergenceReport};

fn diffkernel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_diffkernel"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn kernel_writes_readable_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = diffkernel(&[
        "kernel",
        "--out",
        out,
        "--m-min",
        "2",
        "--m-max",
        "2",
        "--t",
        "0.1",
        "--schemes",
        "semidiscrete,euler",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    for scheme in ["semidiscrete", "euler"] {
        let stem = dir.path().join(format!("kernel_m2_t0_{scheme}"));
        let k = read_kernel(&stem.with_extension("csv"), &stem.with_extension("json")).unwrap();
        assert_eq!(k.dim(), 8);
        k.check_markov().unwrap();
    }
}

#[test]
fn converge_report_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = diffkernel(&[
        "converge", "--out", out, "--m-min", "3", "--m-max", "6", "--family", "trig",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("gamma_hat"));
    let report = ConvergenceReport::from_json(&fs::read_to_string(dir.path().join("report_t0.json")).unwrap()).unwrap();
    let rows = parse_report_csv(&fs::read_to_string(dir.path().join("report_t0.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), report.levels.len());
    assert_eq!(rows[0].sup_diff_kernel, Some(report.pairs[0].kernel_diff));
    assert_eq!(rows[0].gamma_hat, report.kernel_fit.map(|f| f.gamma_hat));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let pass = diffkernel(&["verify", "--out", out, "--only", "lattice,trig"]);
    assert_eq!(pass.status.code(), Some(0), "{}", String::from_utf8_lossy(&pass.stderr));
    assert!(dir.path().join("verify.json").exists());
    let fail = diffkernel(&["verify", "--out", out, "--only", "lattice", "--tol-scale", "0"]);
    assert_eq!(fail.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&fail.stderr).contains("FAIL"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(
        diffkernel(&["converge", "--out", out, "--m-min", "5", "--m-max", "6"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        diffkernel(&["verify", "--out", out, "--only", "nonsense"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(diffkernel(&["kernel", "--bogus"]).status.code(), Some(2));
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"m_min": 3, "colour": "blue"}"#).unwrap();
    assert_eq!(
        diffkernel(&["kernel", "--config", config.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
