use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpmu(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpmu"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let base =
        fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.txt"))
            .unwrap();
    let path = dir.join("cfg.txt");
    fs::write(&path, format!("{base}\n{extra}\n")).unwrap();
    path
}

#[test]
fn unknown_key_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cpmu.gama=3");
    let out = cpmu(&["train"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cpmu.gama"));
}

#[test]
fn missing_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cpmu(&["train"], &tmp.path().join("nope.txt"), tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "train.lr=1e300\ntrain.momentum=0");
    let out = cpmu(&["train"], &cfg, tmp.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn verbs_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let dir = tmp.path().join("run");
    for verb in [&["gen-data"][..], &["train"], &["unlearn"], &["evaluate"]] {
        let out = cpmu(verb, &cfg, &dir);
        assert!(
            out.status.success(),
            "{verb:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in [
        "data_seed0.txt",
        "theta_o_seed0.params",
        "theta_u_seed0.params",
        "trace_seed0.tsv",
        "calibration_seed0.txt",
    ] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(dir.join("metrics_seed0_c4_d4.txt")).unwrap();
    assert!(metrics.contains("\"h_ce\""));

    let audit = dir.join("calibration_seed0.txt");
    let ok = cpmu(
        &["evaluate", "--audit", audit.to_str().unwrap()],
        &cfg,
        &dir,
    );
    assert!(ok.status.success());
    // the original model calibrates to a different threshold
    let theta_o = dir.join("theta_o_seed0.params");
    let bad = cpmu(
        &[
            "evaluate",
            "--params",
            theta_o.to_str().unwrap(),
            "--audit",
            audit.to_str().unwrap(),
        ],
        &cfg,
        &dir,
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("audit mismatch"));
}
