use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyconsensus::sdp::certificate::Certificate;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polyconsensus"));
    c.env_remove("POLYCONSENSUS_SDPA_SOLVER");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_example(dir: &Path, name: &str) -> PathBuf {
    let o = run(&["example", name, "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir.join(format!("{name}.json"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lorenz_certify_verify_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "lorenz");
    let cert = dir.path().join("cert.json");
    let o = run(&["certify", "--config", s(&cfg), "--out", s(&cert)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let parsed = Certificate::from_json(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert_eq!(parsed.l, 6);

    let o = run(&["verify", "--config", s(&cfg), "--cert", s(&cert)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!stderr(&o).contains("warning"));

    let csv = dir.path().join("trace.csv");
    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--cert",
        s(&cert),
        "--t-final",
        "1",
        "--seed",
        "3",
        "--out",
        s(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.lines().next().unwrap().ends_with("V,disagreement"));
    assert_eq!(text.lines().count(), 1002);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["diverged"], false);
}

#[test]
fn tampered_certificate_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "lorenz");
    let cert = dir.path().join("cert.json");
    assert_eq!(
        run(&["certify", "--config", s(&cfg), "--out", s(&cert)])
            .status
            .code(),
        Some(0)
    );
    let mut c = Certificate::from_json(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    for row in c.lyapunov[0].iter_mut() {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    for row in c.lyapunov[1..].iter_mut().flatten() {
        for v in row.iter_mut() {
            *v = 0.0;
        }
    }
    std::fs::write(&cert, c.to_json().unwrap()).unwrap();
    let o = run(&["verify", "--config", s(&cfg), "--cert", s(&cert)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn hash_mismatch_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "lorenz");
    let cert = dir.path().join("cert.json");
    assert_eq!(
        run(&["certify", "--config", s(&cfg), "--out", s(&cert)])
            .status
            .code(),
        Some(0)
    );
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["description"] = "edited".into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run(&["verify", "--config", s(&cfg), "--cert", s(&cert)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning: certificate was issued for model"));
}

#[test]
fn vdp_lifted_test_reports_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "vdp");
    let o = run(&["certify", "--config", s(&cfg), "--method", "theorem2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible"));
    let evidence: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(evidence["reason"], "implied");
}

#[test]
fn vdp_example_simulation_diverges() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "vdp");
    let csv = dir.path().join("vdp.csv");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&csv)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(csv.exists());
}

#[test]
fn consensus_initial_state_has_zero_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "vdp-classical");
    let csv = dir.path().join("c.csv");
    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--amplitude",
        "0",
        "--t-final",
        "0.5",
        "--out",
        s(&csv),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    for line in text.lines().skip(1) {
        let d: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(d, 0.0);
    }
}

#[test]
fn bad_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(
        run(&["certify", "--config", s(&missing)]).status.code(),
        Some(1)
    );

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"schema_version\": 1,\n  \"n\": -2\n}").unwrap();
    let o = run(&["certify", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    // Two disconnected pairs: zero eigenvalue with multiplicity two.
    let cfg = write_example(dir.path(), "lorenz");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["N"] = 4.into();
    v["pattern"] = serde_json::json!({"edges": [[1, 2, 1.0], [3, 4, 1.0]]});
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run(&["certify", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zero"), "{}", stderr(&o));
}

#[test]
fn sdpa_export_without_solver() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_example(dir.path(), "lorenz");
    let dat = dir.path().join("p.dat-s");
    let o = run(&[
        "certify",
        "--config",
        s(&cfg),
        "--solver",
        "sdpa-export",
        "--sdpa",
        s(&dat),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("POLYCONSENSUS_SDPA_SOLVER"));
    assert!(std::fs::read_to_string(&dat).unwrap().starts_with('"'));
}

#[test]
fn schema_is_json() {
    let o = run(&["schema"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["properties"]["pattern"].is_object());
}
