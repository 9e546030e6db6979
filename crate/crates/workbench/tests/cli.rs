use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn workbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_workbench")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("exp.cfg");
    fs::write(
        &path,
        "# tiny run\ntrain_n = 6\ntrain_count = 6\neval_sizes = 6, 8\neval_count = 2\nmax_epochs = 2\nbatch = 4\n",
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn run_then_report_and_eval_only_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out").display().to_string();
    let run = workbench(&["run", "--config", &cfg, "--out", &out]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let stored = fs::read_to_string(dir.path().join("out/report.md")).unwrap();
    let report = workbench(&["report", "--config", &cfg, "--out", &out]);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(String::from_utf8(report.stdout).unwrap(), stored);
    let eval = workbench(&["eval", "--config", &cfg, "--out", &out]);
    assert_eq!(eval.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("out/report.md")).unwrap(), stored);
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("staged").display().to_string();
    for cmd in ["generate", "trace", "train"] {
        let o = workbench(&[cmd, "--config", &cfg, "--out", &out]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("staged/data/eval_grid_8.jsonl").is_file());
    assert!(dir.path().join("staged/traces/train_dijkstra.jsonl").is_file());
    assert!(dir.path().join("staged/model.ckpt.json").is_file());
}

#[test]
fn user_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o").display().to_string();
    assert_eq!(workbench(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(workbench(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(workbench(&["run", "--config", "/no/such/file", "--out", &out]).status.code(), Some(1));
    assert_eq!(workbench(&["run", "--set", "train_n=zero", "--out", &out]).status.code(), Some(1));
    assert_eq!(workbench(&["report", "--out", &out]).status.code(), Some(1));
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed = 1\nnot a pair\n").unwrap();
    let o = workbench(&["generate", "--config", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(workbench(&["--help"]).status.code(), Some(0));
}
