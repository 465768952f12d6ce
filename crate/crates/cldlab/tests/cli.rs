//! Drives the `cldlab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cldlab"));
    c.env_remove("CLDLAB_OUT");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

const QUICK: &str = r#"{"family": "CANON-D", "seed": 5, "trainer": {"steps": 40}, "eval": {"every": 20}}"#;

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn train_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), QUICK);
    let o = run(&["train", "--config", "config.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("o");
    for f in ["results.csv", "summary.json", "checkpoint.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(out.join("configs")).unwrap().count(), 1);
    let csv = String::from_utf8(read(out.join("results.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    let o = run(&["train", "--config", "config.json", "--out", "j", "--format", "json"], dir.path());
    assert_eq!(code(&o), 0);
    let rows: serde_json::Value = serde_json::from_slice(&read(dir.path().join("j/results.json"))).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), QUICK);
    assert_eq!(code(&run(&["train", "--config", "config.json", "--out", "a", "--seed", "11"], dir.path())), 0);
    let s: serde_json::Value = serde_json::from_slice(&read(dir.path().join("a/summary.json"))).unwrap();
    assert_eq!(s["seed"], 11);
}

#[test]
fn out_env_overrides_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), QUICK);
    let o = bin()
        .args(["train", "--config", "config.json", "--out", "flag"])
        .env("CLDLAB_OUT", "from_env")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("from_env/results.csv").is_file());
    assert!(!dir.path().join("flag").exists());
}

#[test]
fn evaluate_and_ci_index_read_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), QUICK);
    assert_eq!(code(&run(&["train", "--config", "config.json", "--out", "o"], dir.path())), 0);
    let o =
        run(&["evaluate", "--config", "config.json", "--checkpoint", "o/checkpoint.json", "--out", "e"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let eval = String::from_utf8(read(dir.path().join("e/evaluation.csv"))).unwrap();
    let trained = String::from_utf8(read(dir.path().join("o/results.csv"))).unwrap();
    // the final training rows and the evaluation agree exactly
    let tail: Vec<&str> = trained.lines().skip(5).collect();
    assert_eq!(eval.lines().skip(1).collect::<Vec<_>>(), tail);

    let o =
        run(&["ci-index", "--config", "config.json", "--checkpoint", "o/checkpoint.json", "--out", "c"], dir.path());
    assert_eq!(code(&o), 0);
    let ci = String::from_utf8(read(dir.path().join("c/ci_index.csv"))).unwrap();
    assert_eq!(ci.lines().next(), Some("domain_id,exact,estimate,stderr,n_pairs,reps"));
    assert_eq!(ci.lines().count(), 3);

    let o = run(&["evaluate", "--config", "config.json", "--checkpoint", "missing.json", "--out", "e"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn generate_writes_data_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), QUICK);
    let o = run(&["generate", "--config", "config.json", "--samples", "30", "--out", "g"], dir.path());
    assert_eq!(code(&o), 0);
    let g = dir.path().join("g");
    let data: serde_json::Value = serde_json::from_slice(&read(g.join("data_0.json"))).unwrap();
    assert_eq!(data["records"].as_array().unwrap().len(), 30);
    let pairs = String::from_utf8(read(g.join("pairs.jsonl"))).unwrap();
    assert_eq!(pairs.lines().count(), 200);
    assert!(g.join("family.json").is_file());
    // the written family verifies like the fixture it came from
    let o = run(&["verify", "--family", "g/family.json", "--out", "v"], dir.path());
    assert_eq!(code(&o), 0);
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--family", "CANON-D", "--out", "d"], dir.path());
    assert_eq!(code(&o), 0);
    let o = run(&["verify", "--family", "CANON-N", "--out", "n"], dir.path());
    assert_eq!(code(&o), 0);
    let report = String::from_utf8(read(dir.path().join("n/report.json"))).unwrap();
    assert!(report.contains("NOT-APPLICABLE"));

    // a "CLD2" target whose core marginal moved breaks risk matching
    let bad = r#"{
      "spaces": {"n_core": 2, "n_noncore": 2, "n_obs": 4, "n_classes": 2},
      "p_x_given_cn": [[[1,0,0,0],[0,1,0,0]],[[0,0,1,0],[0,0,0,1]]],
      "p_y_given_c": [[0.75,0.25],[0.25,0.75]],
      "domains": [
        {"variant": "CLD2", "p_cn": [[0.475,0.025],[0.025,0.475]]},
        {"variant": "CLD2", "p_cn": [[0.7,0.1],[0.1,0.1]]}
      ]
    }"#;
    std::fs::write(dir.path().join("bad.json"), bad).unwrap();
    let o = run(&["verify", "--family", "bad.json", "--out", "b"], dir.path());
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_slice(&read(dir.path().join("b/report.json"))).unwrap();
    let p4 = report["claims"].as_array().unwrap().iter().find(|c| c["id"] == "P4").unwrap();
    assert_eq!(p4["status"], "FAIL");

    let o = run(&["verify", "--family", "NO-SUCH-FIXTURE", "--out", "x"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn config_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["train", "--config", "absent.json"], dir.path())), 2);
    write_config(dir.path(), r#"{"family": "CANON-D"}"#);
    let o = run(&["train", "--config", "config.json"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    write_config(dir.path(), r#"{"family": "CANON-D", "seed": 1, "trainer": {"lr": -1}}"#);
    assert_eq!(code(&run(&["train", "--config", "config.json"], dir.path())), 2);
    write_config(dir.path(), "not json");
    assert_eq!(code(&run(&["train", "--config", "config.json"], dir.path())), 2);
}

#[test]
fn divergent_training_exits_3_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"family": "CANON-D", "seed": 1, "trainer": {"lr": 1e300, "steps": 50, "optimizer": "sgd"}}"#,
    );
    let o = run(&["train", "--config", "config.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("o/diagnostic.json").is_file());
}

#[test]
fn sweep_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), r#"{"family": "CANON-D", "seed": 0, "trainer": {"steps": 5}}"#);
    let o = run(&["sweep", "--config", "config.json", "--out", "s1"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(read(dir.path().join("s1/sweep.csv"))).unwrap().lines().count(), 2);

    std::fs::write(
        dir.path().join("grid.json"),
        r#"{"objective.lambda": [0.1, 1, 10, 100], "trainer.lr": [0.1, 0.05]}"#,
    )
    .unwrap();
    let o = run(&["sweep", "--config", "config.json", "--grid", "grid.json", "--out", "s2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(read(dir.path().join("s2/sweep.csv"))).unwrap();
    assert_eq!(table.lines().count(), 9);
    assert_eq!(std::fs::read_dir(dir.path().join("s2/configs")).unwrap().count(), 8);
}
