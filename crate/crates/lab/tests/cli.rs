use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ntk_core::fit::loglog_fit;
use ntk_lab::io::Table;
use ntk_lab::Config;

const SMALL_RATES: &str = r#"{
  "spectrum": {"source": "power_law", "grid_size": 64, "decay": 1.5, "scale": 0.5},
  "rates": {"n_grid": [64, 128, 256, 512], "reps": 3, "mode": "kernel"}
}"#;

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntk-lab"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn meta_files(dir: &Path, sweep: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            name.starts_with(&format!("{sweep}-")) && name.ends_with(".json")
        })
        .collect();
    v.sort();
    v
}

#[test]
fn four_point_grid_gives_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RATES);
    let out = lab(&["rates", "-c", cfg.to_str().unwrap(), "-o", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/rates.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rates.csv"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RATES);
    let c = cfg.to_str().unwrap();
    assert!(lab(&["rates", "-c", c, "-o", "a"], dir.path()).status.success());
    assert!(lab(&["rates", "-c", c, "-o", "b"], dir.path()).status.success());
    let a = std::fs::read(dir.path().join("a/rates.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/rates.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RATES);
    let c = cfg.to_str().unwrap();
    assert!(lab(&["rates", "-c", c, "-o", "a"], dir.path()).status.success());
    assert!(lab(&["rates", "-c", c, "-o", "b", "--threads", "3"], dir.path()).status.success());
    let a = std::fs::read(dir.path().join("a/rates.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/rates.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_key_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rates": {"n_gird": [1, 2]}}"#);
    let out = lab(&["rates", "-c", cfg.to_str().unwrap(), "-o", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_gird"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_override_exits_one_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["rates", "--set", "rates.colour=3", "-o", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rates.colour"));
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"spectrum": {"source": "power_law", "grid_size": 64},
            "network": {"width": 16},
            "data": {"n": 64},
            "train": {"alpha": 200.0, "steps": 200}}"#,
    );
    let out = lab(&["train", "-c", cfg.to_str().unwrap(), "-o", "out"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn empty_sweep_writes_header_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(&["weights", "--set", "weights.t_grid=[]", "-o", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/weights.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("T,width"));
    assert_eq!(meta_files(&dir.path().join("out"), "weights").len(), 1);
}

#[test]
fn slope_recomputed_from_csv_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RATES);
    assert!(lab(&["rates", "-c", cfg.to_str().unwrap(), "-o", "out"], dir.path()).status.success());
    let out = dir.path().join("out");
    let table = Table::read(&out.join("rates.csv")).unwrap();
    let n = table.column("n").unwrap();
    let risk = table.column("median_kernel_risk").unwrap();
    let fit = loglog_fit(&n, &risk).unwrap();
    let metas = meta_files(&out, "rates");
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metas[0]).unwrap()).unwrap();
    let reported = meta["slopes"]["kernel"]["slope"].as_f64().unwrap();
    assert!((fit.slope - reported).abs() <= 1e-12, "{} vs {reported}", fit.slope);
    assert!(meta["slopes"]["kernel"]["points"].as_u64().unwrap() >= 4);
    assert!(!meta["seeds"].as_array().unwrap().is_empty());
}

#[test]
fn file_name_carries_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL_RATES);
    let out = lab(
        &["rates", "-c", cfg_path.to_str().unwrap(), "-o", "out", "--seed", "7", "--set", "rates.reps=2"],
        dir.path(),
    );
    assert!(out.status.success());
    let cfg = Config::from_json(SMALL_RATES)
        .unwrap()
        .with_overrides(&["rates.reps=2".to_string()])
        .unwrap();
    let cfg = Config { seed: 7, ..cfg };
    let expected = dir.path().join(format!("out/rates-{}.json", cfg.hash()));
    assert_eq!(meta_files(&dir.path().join("out"), "rates"), vec![expected]);
}

#[test]
fn nothing_is_written_outside_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_RATES);
    assert!(lab(&["rates", "-c", cfg.to_str().unwrap(), "-o", "out"], dir.path()).status.success());
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .collect();
    names.sort();
    assert_eq!(names, ["config.json", "out"]);
}
