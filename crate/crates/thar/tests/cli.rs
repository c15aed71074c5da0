use std::path::Path;
use std::process::{Command, Output};

fn thar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thar"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) {
    let out = dir.to_str().unwrap();
    let o = thar(&[
        "synth",
        "--subjects",
        "2",
        "--sessions",
        "2",
        "--duration",
        "60",
        "--out",
        out,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_lists_subcommands_and_units() {
    let o = thar(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in [
        "synth",
        "train",
        "quantize",
        "eval",
        "bench",
        "sweep",
        "mcu-check",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let text = stdout(&thar(&["synth", "--help"]));
    assert!(text.contains("--duration <SECONDS>"));
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(
        thar(&["train", "--group", "g42", "--data", "x"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(thar(&["no-such-command"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.thar");
    let o = thar(&[
        "mcu-check",
        "--model",
        missing.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
}

#[test]
fn synth_is_deterministic_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a);
    synth(&b);
    assert_eq!(dir_bytes(&a.join("dataset")), dir_bytes(&b.join("dataset")));
    let echo = std::fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echo.contains("command = \"synth\""));
    assert!(echo.contains("seed = \"7\""));
    assert!(echo.contains("duration = \"60\""));
}

#[test]
fn run_dirs_are_created_under_runs_root() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("runs");
    let r = root.to_str().unwrap();
    for _ in 0..2 {
        let o = thar(&[
            "synth",
            "--subjects",
            "1",
            "--sessions",
            "1",
            "--duration",
            "10",
            "--runs-dir",
            r,
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let dirs: Vec<_> = std::fs::read_dir(&root).unwrap().collect();
    assert_eq!(dirs.len(), 2);
}

#[test]
fn train_quantize_eval_and_mcu_check() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_str().unwrap().to_string();
    synth(&tmp.path().join("synth"));
    let data = t("synth/dataset");
    let split = ["--held-out-session", "2", "--max-train-windows", "64"];

    let mut args = vec!["train", "--data", &data, "--epochs", "1", "--out"];
    let train_dir = t("train");
    args.push(&train_dir);
    args.extend(split);
    let o = thar(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "model.thar",
        "history.csv",
        "stats.json",
        "report.csv",
        "report.md",
        "config.toml",
    ] {
        assert!(tmp.path().join("train").join(f).is_file(), "{f}");
    }

    let model = t("train/model.thar");
    let q_dir = t("quant");
    let mut args = vec![
        "quantize", "--model", &model, "--data", &data, "--out", &q_dir,
    ];
    args.extend(split);
    let o = thar(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let float_len = std::fs::metadata(&model).unwrap().len() as f64;
    let int8_len = std::fs::metadata(t("quant/model_int8.thar")).unwrap().len() as f64;
    assert!((3.0..=4.5).contains(&(float_len / int8_len)));

    let int8 = t("quant/model_int8.thar");
    let e_dir = t("eval");
    let mut args = vec!["eval", "--model", &int8, "--data", &data, "--out", &e_dir];
    args.extend(split);
    let o = thar(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(t("eval/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("mc-cnn,g23,23,N1,128,int8,"));

    let m_dir = t("mcu");
    let o = thar(&[
        "mcu-check",
        "--model",
        &format!("{model},{int8}"),
        "--profile",
        "nrf52840",
        "--out",
        &m_dir,
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.matches("nRF52840: feasible").count(), 2, "{text}");
    assert!(tmp.path().join("mcu/mcu_check.csv").is_file());
}

#[test]
fn float_n3_is_infeasible_on_nrf52840() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |p: &str| tmp.path().join(p).to_str().unwrap().to_string();
    synth(&tmp.path().join("synth"));
    let o = thar(&[
        "train",
        "--data",
        &t("synth/dataset"),
        "--level",
        "N3",
        "--epochs",
        "1",
        "--held-out-session",
        "2",
        "--max-train-windows",
        "8",
        "--max-test-windows",
        "8",
        "--out",
        &t("train"),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = thar(&[
        "mcu-check",
        "--model",
        &t("train/model.thar"),
        "--out",
        &t("mcu"),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(
        text.contains("nRF52840: infeasible (flash exceeded)"),
        "{text}"
    );
    assert!(text.contains("MIMXRT1062: feasible"), "{text}");
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("thar.toml");
    std::fs::write(
        &cfg,
        "seed = 3\n[synth]\nsubjects = 1\nsessions = 1\nduration = 10\n",
    )
    .unwrap();
    let out = tmp.path().join("run");
    let o = thar(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--duration",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(echo.contains("seed = \"3\""), "{echo}");
    assert!(echo.contains("subjects = \"1\""), "{echo}");
    assert!(echo.contains("duration = \"20\""), "{echo}");
}
