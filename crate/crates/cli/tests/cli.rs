use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonsym"))
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn check_command_passes_on_nn() {
    let dir = std::env::temp_dir().join("nonsym_cli_check");
    fs::create_dir_all(&dir).unwrap();
    let cfg = write_cfg(
        &dir,
        "cfg.toml",
        "schema_version = 1\nmodel = \"nn\"\nn_grid = [8, 16]\n",
    );
    let out = dir.join("out");
    let status = bin()
        .args(["check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"check\""));
    assert!(manifest.contains("checks.csv"));
    let csv = fs::read_to_string(out.join("checks.csv")).unwrap();
    assert!(csv.contains("K1 true A=0"));
    assert!(csv.contains("K2 true"));
}

#[test]
fn decreasing_grid_exits_2() {
    let dir = std::env::temp_dir().join("nonsym_cli_bad");
    fs::create_dir_all(&dir).unwrap();
    let cfg = write_cfg(
        &dir,
        "cfg.toml",
        "schema_version = 1\nmodel = \"nn\"\nn_grid = [16, 8]\n",
    );
    let status = bin()
        .args(["check", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_model_exits_2() {
    let dir = std::env::temp_dir().join("nonsym_cli_unknown");
    fs::create_dir_all(&dir).unwrap();
    let cfg = write_cfg(
        &dir,
        "cfg.toml",
        "schema_version = 1\nmodel = \"no_such\"\nn_grid = [8]\n",
    );
    let status = bin()
        .args(["build", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn exit_times_reports_continuum_value() {
    let dir = std::env::temp_dir().join("nonsym_cli_exit");
    fs::create_dir_all(&dir).unwrap();
    let cfg = write_cfg(
        &dir,
        "cfg.toml",
        "schema_version = 1\nmodel = \"nn\"\nn_grid = [32]\npaths = 20000\nhorizon = 40.0\nradius = 0.5\nwindow_extent = 1.25\n",
    );
    let out = dir.join("out");
    let status = bin()
        .args(["exit-times", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = fs::read_to_string(out.join("exit_times.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let mean: f64 = row.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((mean - 0.125).abs() < 0.05 * 0.125, "mean {mean}");
}

#[test]
fn simulate_exports_reproducible_trajectories() {
    let dir = std::env::temp_dir().join("nonsym_cli_sim");
    fs::create_dir_all(&dir).unwrap();
    let cfg = write_cfg(
        &dir,
        "cfg.toml",
        "schema_version = 1\nmodel = \"nn\"\nn_grid = [8]\npaths = 4\nhorizon = 1.0\nseed = 11\n",
    );
    for out in ["out_a", "out_b"] {
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.join(out))
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let a = fs::read_to_string(dir.join("out_a/trajectory_0.csv")).unwrap();
    let b = fs::read_to_string(dir.join("out_b/trajectory_0.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("0 0"));
}
