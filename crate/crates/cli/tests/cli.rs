use std::path::Path;
use std::process::{Command, Output};

fn lfd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfd"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_BACKTRACE", "0")
        .env_remove("LFD_RUNS_DIR")
        .output()
        .expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn unknown_command_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfd(&["frobnicate"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("unrecognized subcommand"));
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seeds = []\n").unwrap();
    let o = lfd(&["train", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("seeds:"), "{}", text(&o));

    std::fs::write(dir.path().join("bad.toml"), "[a3c]\nworkers = 0\n").unwrap();
    let o = lfd(&["train", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("a3c:"), "{}", text(&o));
}

#[test]
fn pretrained_mode_without_classifier_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfd(&["train", "--mode", "pmfa3c_tb", "--runs-dir", "runs"], dir.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("paths.pretrained"), "{}", text(&o));
}

#[test]
fn proxy_stats_and_small_train() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path();
    let o = lfd(&["proxy", "--game", "mini_catch", "--out", "demos", "--games", "1"], cwd);
    assert!(o.status.success(), "{}", text(&o));

    let o = lfd(&["stats", "demos", "--json"], cwd);
    assert!(o.status.success(), "{}", text(&o));
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats[0]["game"], "mini_catch");
    assert!(stats[0]["states"].as_u64().unwrap() > 0);

    let o = lfd(
        &[
            "train",
            "--budget",
            "400",
            "--eval-interval",
            "200",
            "--eval-steps",
            "50",
            "--workers",
            "2",
            "--runs-dir",
            "runs",
            "--log",
            "warn",
        ],
        cwd,
    );
    assert!(o.status.success(), "{}", text(&o));
    let run = std::fs::read_dir(cwd.join("runs")).unwrap().next().unwrap().unwrap().path();
    for f in ["config.toml", "run.json", "report.json", "curves_a3c.csv", "model_a3c_seed0.snap", "model_a3c_seed0_step0.snap", "model_a3c_seed0_step400.snap"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"][0]["points"], 3);

    let model = run.join("model_a3c_seed0.snap");
    let o = lfd(&["eval", "--model", model.to_str().unwrap(), "--eval-steps", "50"], cwd);
    assert!(o.status.success(), "{}", text(&o));
    let result: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(result["steps"], 50);

    let o = lfd(&["eval", "--model", model.to_str().unwrap(), "--game", "mini_pong"], cwd);
    assert!(!o.status.success());
    assert!(text(&o).contains("game"), "{}", text(&o));
}

#[test]
fn run_dir_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lfd"))
        .args(["pretrain", "--proxy-games", "1", "--iterations", "5", "--runs-dir", "flag", "--log", "warn"])
        .current_dir(dir.path())
        .env("LFD_RUNS_DIR", "env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(dir.path().join("flag").exists());
    assert!(!dir.path().join("env").exists());
}
