use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_policy-compress"))
}

const BANDIT: &str = r#"{"format_version": 1, "n_states": 1, "n_actions": 3, "discount": 0.9,
  "init_dist": [1.0], "transition": [1.0, 1.0, 1.0]}"#;

#[test]
fn sigma_below_one_is_a_usage_error() {
    let out = bin().args(["compress", "--sigma", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["compress", "--nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn malformed_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\"format_version\": 1,").unwrap();
    let out = bin().arg("compress").arg("--cmp-file").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(65));
    let out = bin().arg("inspect").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn compress_writes_stable_outputs_and_inspect_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bandit.json");
    fs::write(&model, BANDIT).unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        let status = bin()
            .arg("compress")
            .arg("--cmp-file")
            .arg(&model)
            .args(["--sigma", "3.5", "--seed", "4", "--out"])
            .arg(&out_dir)
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        let report = fs::read(out_dir.join("report-seed4.json")).unwrap();
        let trace = fs::read_to_string(out_dir.join("trace-seed4.csv")).unwrap();
        assert!(trace.starts_with("k,lp_value,cover_bound,z_estimate\n"));
        bytes.push(report);
    }
    assert_eq!(bytes[0], bytes[1]);

    let out = bin()
        .arg("inspect")
        .arg(dir.path().join("run0/report-seed4.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("K = 1"));
    assert!(text.contains("0.333 0.333 0.333"));
}

#[test]
fn non_convergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("bandit.json");
    fs::write(&model, BANDIT).unwrap();
    let status = bin()
        .arg("compress")
        .arg("--cmp-file")
        .arg(&model)
        .args(["--sigma", "2.0", "--max-k", "1", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(dir.path().join("report-seed0.json").exists());
}

#[test]
fn optimize_and_evaluate_run_from_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["compress", "--env", "river-swim", "--max-k", "2", "--seed", "1", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(matches!(status.code(), Some(0) | Some(2)));
    let report = dir.path().join("report-seed1.json");
    let status = bin()
        .args(["optimize", "--iterations", "5", "--samples", "200", "--seeds", "1,2", "--report"])
        .arg(&report)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert!(curves.starts_with("set,seed,iteration,chosen,value,ci_low,ci_high\n"));
    assert_eq!(curves.lines().count(), 1 + 3 * 2 * 5);

    let status = bin()
        .args(["evaluate", "--trajectories", "50", "--seeds", "3", "--report"])
        .arg(&report)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let eval = fs::read_to_string(dir.path().join("evaluation.csv")).unwrap();
    assert!(eval.lines().any(|l| l.contains(",on_policy,target,")));
    assert!(eval.lines().any(|l| l.contains(",mis,cover,")));
}
