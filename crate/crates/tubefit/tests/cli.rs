//! End-to-end checks of the command-line surface: exit codes, error
//! reporting, output formats, and presets.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tubefit"))
}

fn cylinder_csv(path: &Path, n: usize) {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = String::new();
    for _ in 0..n {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        let r = rng.random::<f64>().sqrt();
        let z = 6.0 * rng.random::<f64>();
        s.push_str(&format!(
            "{},{},{},1.0\n",
            r * theta.cos(),
            r * theta.sin(),
            z
        ));
    }
    std::fs::write(path, s).unwrap();
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_documents_exit_codes() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    for code in ["EXIT CODES", "2 ", "3 ", "4 ", "5 "] {
        assert!(text.contains(code), "help missing {code:?}");
    }
}

#[test]
fn usage_error_exits_2() {
    let out = bin().args(["fit-curve", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_3_and_names_path() {
    let out = bin()
        .args([
            "fit-curve",
            "--input",
            "definitely_absent.csv",
            "--start",
            "0,0,0",
            "--end",
            "0,0,1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("definitely_absent.csv"), "stderr: {err}");
    assert!(err.contains("code=3"), "stderr: {err}");
}

#[test]
fn malformed_csv_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    std::fs::write(&input, "0,0,0\n1,1\n").unwrap();
    let out = bin()
        .args([
            "fit-curve",
            "--input",
            input.to_str().unwrap(),
            "--start",
            "0,0,0",
            "--end",
            "0,0,1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = stderr(&out);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn too_few_points_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tiny.csv");
    std::fs::write(&input, "0,0,0\n1,1,1\n2,2,2\n").unwrap();
    let out = bin()
        .args([
            "fit-curve",
            "--input",
            input.to_str().unwrap(),
            "--start",
            "0,0,0",
            "--end",
            "2,2,2",
            "--df",
            "8",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "stderr: {}", stderr(&out));
}

#[test]
fn unwritable_output_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.csv");
    cylinder_csv(&input, 300);
    let out = bin()
        .args([
            "fit-curve",
            "--input",
            input.to_str().unwrap(),
            "--start",
            "0,0,0",
            "--end",
            "0,0,6",
            "--df",
            "4",
            "--out-dir",
            "/proc/definitely/not/writable",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5), "stderr: {}", stderr(&out));
}

#[test]
fn unsupported_tube_version_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let tube = dir.path().join("tube.json");
    std::fs::write(&tube, r#"{"version": 99, "tube": {}}"#).unwrap();
    let input = dir.path().join("cloud.csv");
    cylinder_csv(&input, 50);
    let out = bin()
        .args([
            "profile",
            "--tube",
            tube.to_str().unwrap(),
            "--input",
            input.to_str().unwrap(),
            "--kind",
            "sum",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("version"), "stderr: {}", stderr(&out));
}

#[test]
fn fit_tube_outputs_embed_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.csv");
    cylinder_csv(&input, 800);
    let out = bin()
        .args([
            "fit-tube",
            "--input",
            input.to_str().unwrap(),
            "--start",
            "0,0,0",
            "--end",
            "0,0,6",
            "--df",
            "4",
            "--seed",
            "42",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let curve_json = std::fs::read_to_string(dir.path().join("curve.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&curve_json).unwrap();
    assert_eq!(parsed["config"]["seed"], 42);
    assert!(parsed["config"]["final_df"].is_number());

    let tube_json = std::fs::read_to_string(dir.path().join("tube.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&tube_json).unwrap();
    assert_eq!(parsed["version"], 1);
    assert!(parsed["tube"]["config"]["alpha"].is_number());

    let sections = std::fs::read_to_string(dir.path().join("sections.csv")).unwrap();
    assert!(sections.starts_with("# tubefit fit-tube"));
    assert!(sections.contains("seed=42"));
    assert!(sections.contains("t0,distance,semi_major,semi_minor,area,gap"));

    let obj = std::fs::read_to_string(dir.path().join("surface.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("v ")));
    assert!(obj.lines().any(|l| l.starts_with("f ")));

    let stages = std::fs::read_to_string(dir.path().join("stages.csv")).unwrap();
    assert!(stages.starts_with("stage,df,iteration,mse"));
}

#[test]
fn presets_apply_published_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.csv");
    cylinder_csv(&input, 800);
    let out = bin()
        .args([
            "fit-tube",
            "--input",
            input.to_str().unwrap(),
            "--start",
            "0,0,0",
            "--end",
            "0,0,6",
            "--preset",
            "spect-colon",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let tube_json = std::fs::read_to_string(dir.path().join("tube.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&tube_json).unwrap();
    assert_eq!(parsed["tube"]["config"]["alpha"], 0.15);
    assert_eq!(parsed["tube"]["config"]["t_r"], 0.2);
    let curve_json = std::fs::read_to_string(dir.path().join("curve.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&curve_json).unwrap();
    assert_eq!(parsed["config"]["final_df"], 5);
}

#[test]
fn voxel_grid_input_accepted() {
    let dir = tempfile::tempdir().unwrap();
    // 3x3x8 grid with an active column up the middle.
    let mut grid = String::from("dims 3 3 8\npitch 1 1 1\norigin 0 0 0\n");
    for z in 0..8 {
        for y in 0..3 {
            let row: Vec<String> = (0..3)
                .map(|x| {
                    if x == 1 && y == 1 {
                        "5.0".to_string()
                    } else {
                        // Ring voxels carry weak signal so the fit has spread.
                        format!("{}", 0.5 + 0.01 * z as f64)
                    }
                })
                .collect();
            grid.push_str(&row.join(" "));
            grid.push('\n');
        }
    }
    let path = dir.path().join("grid.txt");
    std::fs::write(&path, grid).unwrap();
    let out = bin()
        .args([
            "fit-curve",
            "--input",
            path.to_str().unwrap(),
            "--format",
            "voxel-grid",
            "--threshold",
            "0.1",
            "--start",
            "1,1,0",
            "--end",
            "1,1,7",
            "--df",
            "4",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(dir.path().join("curve.json").exists());
}

#[test]
fn slice_profile_needs_no_tube() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cloud.csv");
    cylinder_csv(&input, 300);
    let out_csv = dir.path().join("slice.csv");
    let out = bin()
        .args([
            "profile",
            "--input",
            input.to_str().unwrap(),
            "--kind",
            "slice",
            "--axis",
            "z",
            "--window",
            "1.0",
            "--out",
            out_csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert!(text.contains("t0,distance,value"));
}

#[test]
fn threads_flag_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("a.csv");
    let out = bin()
        .args([
            "simulate-alpha",
            "--threads",
            "2",
            "--alphas",
            "0.1",
            "--replicates",
            "5",
            "--out",
            out_csv.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(out_csv.exists());
}
