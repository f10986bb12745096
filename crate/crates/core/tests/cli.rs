use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs")
}

fn otlab(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_otlab"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).expect("error report is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn unknown_subcommand_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = otlab(&["transmogrify"], None, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["exit_code"], 2);
}

#[test]
fn invalid_theta_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[tilt]\ntheta = 2.0\n");
    let o = otlab(&["tilt"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "ConfigError");
}

#[test]
fn unknown_config_key_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[grid]\nn = 16\nwidth = 3\n");
    let o = otlab(&["solve"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_density_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", "[source]\nfile = \"nowhere.csv\"\n");
    let o = otlab(&["solve"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unequal_masses_exit_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.toml",
        "[grid]\nn = 16\n[solver]\nkind = \"exact\"\n[target]\nfamily = \"bump\"\ndelta = 0.5\nwidth = 0.3\n",
    );
    let o = otlab(&["solve"], Some(&cfg), &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "MassMismatch");
}

#[test]
fn identity_iterate_has_a_zero_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = otlab(&["iterate"], Some(&configs().join("identity.toml")), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("iterate.json")).unwrap()).unwrap();
    let trace = doc["result"]["state"]["E_trace"].as_array().unwrap();
    assert!(trace.len() >= 2);
    assert!(trace.iter().all(|e| e.as_f64().unwrap() == 0.0));
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with(&format!("# otlab {} config ", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn artifacts_carry_version_and_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("identity.toml");
    for (cmd, file) in [("solve", "solve.json"), ("excess", "excess.json"), ("seminorm", "seminorm.json")] {
        let o = otlab(&[cmd, "--seed", "5"], Some(&cfg), dir.path());
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(file)).unwrap()).unwrap();
        assert_eq!(doc["otlab_version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(doc["command"], cmd);
        assert_eq!(doc["seed"], 5);
        assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn seed_override_changes_the_hash() {
    let cfg = configs().join("identity.toml");
    let dir = tempfile::tempdir().unwrap();
    let hash = |seed: &str| {
        let out = dir.path().join(seed);
        assert!(otlab(&["excess", "--seed", seed], Some(&cfg), &out).status.success());
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("excess.json")).unwrap()).unwrap();
        doc["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash("1"), hash("2"));
}

#[test]
fn sinusoidal_scan_coverage_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let o = otlab(&["scan"], Some(&configs().join("sinusoidal.toml")), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scan.json")).unwrap()).unwrap();
    let coverage = doc["result"]["coverage"].as_f64().unwrap();
    assert!((coverage - 1.0).abs() <= 0.02, "coverage {coverage}");
}
