use std::path::Path;
use std::process::{Command, Output};

fn symhnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symhnn"))
        .args(args)
        .env_remove("SYMHNN_OUT_DIR")
        .env_remove("SYMHNN_THREADS")
        .output()
        .expect("binary runs")
}

#[test]
fn every_subcommand_has_help() {
    for sub in [None, Some("generate-data"), Some("train"), Some("evaluate"), Some("rollout"), Some("run")] {
        let out = match sub {
            Some(s) => symhnn(&[s, "--help"]),
            None => symhnn(&["--help"]),
        };
        assert!(out.status.success(), "{sub:?}");
        assert!(!out.stdout.is_empty());
    }
}

const SYSTEM: &str = "[system]\nname = \"cart-pendulum\"\nm = 1.0\nm0 = 1.0\nl = 1.0\ng = 9.81\n";

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{SYSTEM}[train]\nepochz = 3\n")).unwrap();
    let out = symhnn(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("o").exists(), "no work before validation");
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = symhnn(&[
        "train",
        "--dataset",
        dir.path().join("none.csv").to_str().unwrap(),
        "--mode",
        "hnn",
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn run_ok(args: &[&str]) {
    let out = symhnn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_train_evaluate_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    run_ok(&["generate-data", "--system", "cart-pendulum", "--count", "6", "--seed", "1", "--out", &p("d/data.csv")]);
    assert!(Path::new(&p("d/data.meta.json")).exists());
    for mode in ["basenn", "symhnn"] {
        run_ok(&[
            "--threads", "1", "train", "--dataset", &p("d/data.csv"), "--mode", mode, "--epochs", "5",
            "--hidden", "8,8", "--batch-size", "64", "--out", &p(&format!("{mode}.json")),
        ]);
        assert!(Path::new(&p(&format!("{mode}.history.csv"))).exists());
    }
    run_ok(&[
        "evaluate", "--models", &p("basenn.json"), &p("symhnn.json"), "--dataset", &p("d/data.csv"),
        "--report-dir", &p("report"), "--rollout-horizon", "1", "--grid-res", "3", "--samples", "20",
    ]);
    assert!(Path::new(&p("report/manifest.json")).exists());
    run_ok(&[
        "rollout", "--system", "cart-pendulum", "--z0", "0,2.34,0.49,-1.54", "--horizon", "1",
        "--step", "0.1", "--out", &p("roll.csv"),
    ]);
    let text = std::fs::read_to_string(p("roll.csv")).unwrap();
    assert_eq!(text.lines().count(), 12);
}
