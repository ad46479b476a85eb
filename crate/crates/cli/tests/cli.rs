//! End-to-end tests of the `etalon` binary: exit codes, on-disk formats and
//! the simulate -> characterize -> report round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn etalon(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etalon"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn toy_config(noise: &str) -> String {
    format!(
        r#"{{
  "layout": {{
    "n_interferometers": 4,
    "thickness_step_nm": 1000.0,
    "base_thickness_nm": 5000.0,
    "refractive_index": 1.0,
    "focal_height": 9,
    "focal_width": 36,
    "subimage_height": 9,
    "subimage_width": 9,
    "angular_scale_rad_per_px": 0.0
  }},
  "grid": {{ "kind": "regular", "min_cm1": 6250.0, "max_cm1": 10000.0, "points": 101 }},
  "truth": {{ "gain_coeffs": [2.0, 0.2], "refl_coeffs": [0.13], "phase_shift": 0.4 }},
  "noise": {noise},
  "regime": "infinite",
  "irca": {{ "degree": 1, "regime": "infinite" }},
  "seed": 7,
  "pixels": "central"
}}"#
    )
}

#[test]
fn roundtrip_simulate_characterize_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "cfg.json", &toy_config("{ \"kind\": \"none\" }"));

    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "run"], dir),
        0,
    );
    for name in ["manifest.json", "frames.bin", "truth.json", "layout.json"] {
        assert!(dir.join("run").join(name).is_file(), "missing {name}");
    }

    assert_exit(
        &etalon(
            &["characterize", "run", "--out", "run", "--degree", "1"],
            dir,
        ),
        0,
    );
    let csv = std::fs::read_to_string(dir.join("run/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4, "one row per interferometer");

    let rmse = etalon(&["report", "run/results.json", "--kind", "rmse"], dir);
    assert_exit(&rmse, 0);
    assert!(dir.join("run/rmse.csv").is_file());
    assert!(dir.join("run/rmse.json").is_file());

    let steps = etalon(&["report", "run/results.json", "--kind", "opd-steps"], dir);
    assert_exit(&steps, 0);
    let steps_csv = std::fs::read_to_string(dir.join("run/opd_steps.csv")).unwrap();
    assert_eq!(steps_csv.lines().count(), 1 + 4); // header + N_i rows

    // maps demand full-plane results
    let maps = etalon(&["report", "run/results.json", "--kind", "maps"], dir);
    assert_exit(&maps, 4);
    assert!(String::from_utf8_lossy(&maps.stderr).contains("full-plane"));
}

#[test]
fn seeded_simulation_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(
        dir,
        "cfg.json",
        &toy_config("{ \"kind\": \"additive_gaussian\", \"relative_std\": 0.05 }"),
    );
    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "a"], dir),
        0,
    );
    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "b"], dir),
        0,
    );
    let a = std::fs::read(dir.join("a/frames.bin")).unwrap();
    let b = std::fs::read(dir.join("b/frames.bin")).unwrap();
    assert_eq!(a, b);

    // a different seed changes the payload
    assert_exit(
        &etalon(
            &["simulate", "--config", "cfg.json", "--out", "c", "--seed", "8"],
            dir,
        ),
        0,
    );
    let c = std::fs::read(dir.join("c/frames.bin")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn infeasible_tiling_exits_2_naming_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bad = toy_config("{ \"kind\": \"none\" }").replace(
        "\"n_interferometers\": 4",
        "\"n_interferometers\": 40",
    );
    write_config(dir, "cfg.json", &bad);
    let out = etalon(&["simulate", "--config", "cfg.json", "--out", "run"], dir);
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tiling"));
}

#[test]
fn missing_inputs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_exit(
        &etalon(&["simulate", "--config", "nope.json", "--out", "run"], dir),
        3,
    );
    assert_exit(&etalon(&["characterize", "nowhere", "--out", "o"], dir), 3);
    assert_exit(
        &etalon(&["report", "nothing.json", "--kind", "rmse"], dir),
        3,
    );
}

#[test]
fn corrupt_cube_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "cfg.json", &toy_config("{ \"kind\": \"none\" }"));
    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "run"], dir),
        0,
    );

    // unknown manifest version
    let manifest_path = dir.join("run/manifest.json");
    let manifest = std::fs::read_to_string(&manifest_path).unwrap();
    std::fs::write(
        &manifest_path,
        manifest.replace("\"format_version\": 1", "\"format_version\": 9"),
    )
    .unwrap();
    let out = etalon(&["characterize", "run", "--out", "o"], dir);
    assert_exit(&out, 4);

    // truncated payload
    std::fs::write(&manifest_path, &manifest).unwrap();
    let payload = dir.join("run/frames.bin");
    let bytes = std::fs::read(&payload).unwrap();
    std::fs::write(&payload, &bytes[..bytes.len() - 16]).unwrap();
    assert_exit(&etalon(&["characterize", "run", "--out", "o"], dir), 4);
}

#[test]
fn rejected_flag_values_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // clap rejects unknown regimes and pixel modes at parse time
    let out = etalon(
        &["characterize", "run", "--regime", "three", "--out", "o"],
        dir,
    );
    assert_exit(&out, 2);
    let out = etalon(
        &["characterize", "run", "--pixels", "some", "--out", "o"],
        dir,
    );
    assert_exit(&out, 2);
    for regime in ["two", "finite:3", "infinite"] {
        // accepted at parse time; fails later on the missing cube (exit 3)
        let out = etalon(
            &["characterize", "run", "--regime", regime, "--out", "o"],
            dir,
        );
        assert_exit(&out, 3);
    }
}

#[test]
fn regimes_table_is_deduplicated_and_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = etalon(
        &[
            "regimes",
            "--waves",
            "5,2,2,3",
            "--threshold",
            "0.01",
            "--phase-samples",
            "512",
        ],
        dir,
    );
    assert_exit(&out, 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<(u32, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let mut parts = l.split(',');
            (
                parts.next().unwrap().parse().unwrap(),
                parts.next().unwrap().parse().unwrap(),
            )
        })
        .collect();
    assert_eq!(rows.len(), 3, "duplicates removed: {text}");
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![2, 3, 5]);
    assert!(rows.windows(2).all(|p| p[1].1 >= p[0].1));

    assert_exit(
        &etalon(&["regimes", "--waves", "2", "--threshold", "-1"], dir),
        2,
    );
}

#[test]
fn es_and_ml_initializers_agree_on_opd() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_config(dir, "cfg.json", &toy_config("{ \"kind\": \"none\" }"));
    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "run"], dir),
        0,
    );
    for (name, init) in [("ml", "ml"), ("es", "es")] {
        assert_exit(
            &etalon(
                &[
                    "characterize",
                    "run",
                    "--out",
                    name,
                    "--degree",
                    "1",
                    "--regime",
                    "two",
                    "--initializer",
                    init,
                ],
                dir,
            ),
            0,
        );
    }
    let read_inits = |name: &str| -> Vec<f64> {
        let text = std::fs::read_to_string(dir.join(name).join("results.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["results"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["init"]["opd_cm"].as_f64().unwrap())
            .collect()
    };
    let (ml, es) = (read_inits("ml"), read_inits("es"));
    assert_eq!(ml.len(), es.len());
    // one ES grid cell = the base periodogram resolution
    let base_bin = 1.0 / (2.0 * 101.0 * (10000.0 - 6250.0) / 101.0);
    for (a, b) in ml.iter().zip(es.iter()) {
        assert!((a - b).abs() <= base_bin + 1e-12, "ml {a} vs es {b}");
    }
}

#[test]
fn full_plane_maps_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = r#"{
  "layout": {
    "n_interferometers": 1,
    "thickness_step_nm": 0.0,
    "base_thickness_nm": 10000.0,
    "refractive_index": 1.0,
    "focal_height": 9,
    "focal_width": 9,
    "subimage_height": 9,
    "subimage_width": 9,
    "angular_scale_rad_per_px": 0.015
  },
  "grid": { "kind": "regular", "min_cm1": 6250.0, "max_cm1": 10000.0, "points": 101 },
  "truth": { "gain_coeffs": [2.0], "refl_coeffs": [0.13], "phase_shift": 0.0 },
  "noise": { "kind": "none" },
  "regime": "infinite",
  "irca": { "degree": 0, "regime": "infinite" },
  "seed": 3,
  "pixels": "all"
}"#;
    write_config(dir, "cfg.json", cfg);
    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "run"], dir),
        0,
    );
    assert_exit(
        &etalon(
            &[
                "characterize",
                "run",
                "--out",
                "run",
                "--config",
                "cfg.json",
                "--pixels",
                "all",
                "--jobs",
                "2",
            ],
            dir,
        ),
        0,
    );
    assert_exit(
        &etalon(&["report", "run/results.json", "--kind", "maps"], dir),
        0,
    );
    let map = std::fs::read_to_string(dir.join("run/map_relative_opd.csv")).unwrap();
    assert_eq!(map.lines().count(), 1 + 81);
    // center pixel maps to exactly zero, corners to negative values
    let mut center = f64::NAN;
    let mut corner = f64::NAN;
    for line in map.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[0] == "4" && f[1] == "4" {
            center = f[2].parse().unwrap();
        }
        if f[0] == "0" && f[1] == "0" {
            corner = f[2].parse().unwrap();
        }
    }
    assert_eq!(center, 0.0);
    assert!(corner < -1e-5, "corner {corner}");
}

/// Full-frame P3-sized simulation: 343 frames of 512x640. The payload is
/// ~900 MB, written streaming and deleted at the end.
#[test]
fn p3_sized_simulation_writes_full_frame_cube() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = r#"{
  "layout": {
    "n_interferometers": 80,
    "thickness_step_nm": 200.0,
    "base_thickness_nm": 5000.0,
    "refractive_index": 1.0,
    "focal_height": 512,
    "focal_width": 640,
    "subimage_height": 64,
    "subimage_width": 64,
    "angular_scale_rad_per_px": 0.0
  },
  "grid": { "kind": "regular", "min_cm1": 6250.0, "max_cm1": 10000.0, "points": 343 },
  "truth": { "gain_coeffs": [2.0, 0.2, -0.1], "refl_coeffs": [0.13], "phase_shift": 0.4 },
  "noise": { "kind": "none" },
  "regime": "infinite",
  "seed": 1
}"#;
    write_config(dir, "cfg.json", cfg);
    assert_exit(
        &etalon(&["simulate", "--config", "cfg.json", "--out", "p3"], dir),
        0,
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("p3/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["n_acq"], 343);
    assert_eq!(manifest["height"], 512);
    assert_eq!(manifest["width"], 640);
    assert_eq!(manifest["wavenumbers_cm1"].as_array().unwrap().len(), 343);
    let payload = std::fs::metadata(dir.join("p3/frames.bin")).unwrap();
    assert_eq!(payload.len(), 343 * 512 * 640 * 8);
}
