//! End-to-end checks of the scenario runner binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_siirv-lab"))
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("siirv-lab-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_scenario(dir: &std::path::Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn verify_scenario_passes_and_is_reproducible() {
    let dir = tmp_dir("verify");
    let scenario = write_scenario(
        &dir,
        "verify.json",
        r#"{
            "kind": "verify",
            "name": "geom",
            "seed": 7,
            "family": { "geometric": { "a_lo": 0.5, "a_hi": 3.0 } },
            "instances": 8
        }"#,
    );
    let out1 = dir.join("out1");
    let out2 = dir.join("out2");
    for out in [&out1, &out2] {
        let status = bin()
            .args(["--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    let a = std::fs::read(out1.join("geom.csv")).unwrap();
    let b = std::fs::read(out2.join("geom.csv")).unwrap();
    assert_eq!(a, b, "same scenario twice must produce byte-identical CSV");
}

#[test]
fn invalid_eps_exits_two() {
    let dir = tmp_dir("badeps");
    let scenario = write_scenario(
        &dir,
        "cover.json",
        r#"{
            "kind": "cover",
            "name": "bad",
            "seed": 1,
            "family": { "geometric": { "a_lo": 1.7, "a_hi": 1.73 } },
            "n": 3,
            "eps": 0.0
        }"#,
    );
    let status = bin()
        .args([
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn verifier_failure_exits_three() {
    // Declared fourth-moment bound far below the truth.
    let dir = tmp_dir("badfam");
    let fam = siirv_lab::catalog::geometric_family(0.5, 3.0);
    let mut raw = serde_json::to_value(&fam).unwrap();
    raw["B"] = serde_json::json!(0.001);
    let scenario = write_scenario(
        &dir,
        "verify.json",
        &format!(
            r#"{{
                "kind": "verify",
                "name": "tight",
                "seed": 3,
                "family": {{ "spec": {raw} }},
                "instances": 6
            }}"#
        ),
    );
    let status = bin()
        .args([
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn cover_scenario_runs_and_reports() {
    let dir = tmp_dir("cover");
    let scenario = write_scenario(
        &dir,
        "cover.json",
        r#"{
            "kind": "cover",
            "name": "tinycover",
            "seed": 5,
            "family": { "geometric": { "a_lo": 1.70, "a_hi": 1.73 } },
            "n": 3,
            "eps": 0.2,
            "instances": 2
        }"#,
    );
    let out = dir.join("out");
    let status = bin()
        .args(["--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("tinycover.csv")).unwrap();
    assert!(csv.contains("instance,tv,slack"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("tinycover.json")).unwrap())
            .unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn constants_env_override_applies() {
    let dir = tmp_dir("constants");
    std::fs::write(dir.join("constants.json"), r#"{"c_part": 16.0}"#).unwrap();
    let scenario = write_scenario(
        &dir,
        "verify.json",
        r#"{
            "kind": "verify",
            "name": "geomc",
            "seed": 7,
            "family": { "geometric": { "a_lo": 0.5, "a_hi": 3.0 } },
            "instances": 4
        }"#,
    );
    let out = dir.join("out");
    let status = bin()
        .env("SIIRV_LAB_CONSTANTS", dir.join("constants.json"))
        .args(["--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("geomc.csv")).unwrap();
    assert!(csv.contains("\"c_part\":16.0"), "constants line should reflect the override");
}
