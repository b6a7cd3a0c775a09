use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn system_path(file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(file).display().to_string()
}

fn zenocert(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zenocert")).arg("--output").arg(out).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).expect("manifest written")).unwrap()
}

fn certify_spiral(dir: &Path) -> PathBuf {
    let o = zenocert(dir, &["certify", &system_path("spiral4.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("certificate.json")
}

#[test]
fn certify_then_check_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cert = certify_spiral(&tmp.path().join("c"));
    let m = manifest(&tmp.path().join("c"));
    assert_eq!(m["command"], "certify");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["input_hashes"].as_object().unwrap().len() == 1);

    let k = tmp.path().join("k");
    let o = zenocert(&k, &["check", &cert.display().to_string(), &system_path("spiral4.json")]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(k.join("verification.json")).unwrap()).unwrap();
    assert_eq!(report["valid"], true);
    assert_eq!(manifest(&k)["command"], "check");
}

#[test]
fn certificates_and_trajectories_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = certify_spiral(&tmp.path().join("a"));
    let b = certify_spiral(&tmp.path().join("b"));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());

    let sim = |d: &str| {
        let dir = tmp.path().join(d);
        let o = zenocert(&dir, &["simulate", &system_path("bouncing-ball.json"), "--initial-mode", "1", "--x0", "1,0"]);
        assert_eq!(code(&o), 0);
        (std::fs::read(dir.join("trajectory.csv")).unwrap(), std::fs::read(dir.join("phase.svg")).unwrap())
    };
    assert_eq!(sim("s1"), sim("s2"));
}

#[test]
fn simulate_writes_classification_and_portrait() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zenocert(tmp.path(), &["simulate", &system_path("spiral4.json"), "--initial-mode", "1", "--x0", "0.5,0"]);
    assert_eq!(code(&o), 0);
    let c: Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("classification.json")).unwrap()).unwrap();
    assert_eq!(c["diagnostics"]["classification"], "Zeno");
    assert_eq!(c["diagnostics"]["basis"], "empirical");
    assert!(c["zeno_time"]["tau_inf"].as_f64().unwrap() > 0.0);
    let svg = std::fs::read_to_string(tmp.path().join("phase.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    // One guard path per edge and one polyline per interval.
    assert_eq!(svg.matches("data-edge=").count(), 4);
    assert!(svg.matches("<polyline").count() > 10);
    let csv = std::fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("interval,mode,t,x1,x2\n"));
}

#[test]
fn missing_and_malformed_inputs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&zenocert(tmp.path(), &["certify", "/no/such/system.json"])), 1);
    assert_eq!(code(&zenocert(tmp.path(), &["certify", &system_path("spiral4.json"), "--set", "C"])), 1);
    // Starting outside the mode's domain.
    let o = zenocert(tmp.path(), &["simulate", &system_path("bouncing-ball.json"), "--initial-mode", "1", "--x0=-1,0"]);
    assert_eq!(code(&o), 1);
    // A parametric system needs parameter values.
    let o =
        zenocert(tmp.path(), &["simulate", &system_path("example2.json"), "--initial-mode", "2", "--x0", "0.5,0.5"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn check_against_another_system_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cert = certify_spiral(&tmp.path().join("c"));
    let o =
        zenocert(&tmp.path().join("k"), &["check", &cert.display().to_string(), &system_path("bouncing-ball.json")]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
}

#[test]
fn tampered_certificate_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cert = certify_spiral(&tmp.path().join("c"));
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    v["constants"]["gamma"] = Value::from(-1.0);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&v).unwrap()).unwrap();
    let o = zenocert(&tmp.path().join("k"), &["check", &bad.display().to_string(), &system_path("spiral4.json")]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rejected"));
}

#[test]
fn obstructed_system_exits_two_with_a_failure_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zenocert(tmp.path(), &["certify", &system_path("example1.json"), "--degree", "4"]);
    assert_eq!(code(&o), 2);
    let f: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("failure.json")).unwrap()).unwrap();
    assert!(!f["notes"].as_array().unwrap().is_empty());
    assert_eq!(manifest(tmp.path())["exit_code"], 2);
}

#[test]
fn sweep_writes_table_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zenocert(
        tmp.path(),
        &[
            "sweep",
            &system_path("spiral4-slope.json"),
            "--lo",
            "0.01",
            "--hi",
            "3",
            "--tolerance",
            "0.2",
            "--parameter-dependent-v",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(tmp.path().join("sweep.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);
    let mut rows = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let first = rows.records().next().unwrap().unwrap();
    let bound: f64 = first[1].parse().unwrap();
    // Executions of this system are Zeno exactly when the slope exceeds 1/8.
    assert!((0.125..=3.0).contains(&bound), "{bound}");
    assert!(tmp.path().join("sweep_probes.csv").exists());
}

#[test]
fn reversed_bracket_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zenocert(tmp.path(), &["sweep", &system_path("spiral4-slope.json"), "--lo", "3", "--hi", "0.01"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("n/a"));
}

#[test]
fn validate_reports_system_structure_and_batch_agreement() {
    let tmp = tempfile::tempdir().unwrap();
    let cert = certify_spiral(&tmp.path().join("c"));
    let dir = tmp.path().join("v");
    let o = zenocert(
        &dir,
        &[
            "--jobs",
            "2",
            "validate",
            &system_path("spiral4.json"),
            "--certificate",
            &cert.display().to_string(),
            "--count",
            "4",
        ],
    );
    assert_eq!(code(&o), 0);
    let sys: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("system.json")).unwrap()).unwrap();
    assert_eq!(sys["cycle"], serde_json::json!([1, 2, 3, 4]));
    let batch: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("batch.json")).unwrap()).unwrap();
    assert_eq!(batch["zeno_count"], 4);
}

#[test]
fn strict_profile_still_certifies_the_spiral() {
    let tmp = tempfile::tempdir().unwrap();
    let o = zenocert(tmp.path(), &["--tolerance-profile", "strict", "certify", &system_path("spiral4.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
