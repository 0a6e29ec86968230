use std::process::{Command, Output};

fn oneway(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneway"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> serde_json::Value {
    let mut a = args.to_vec();
    a.extend(["--format", "json"]);
    let o = oneway(&a);
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

#[test]
fn cluster_verify_4x4() {
    let o = oneway(&[
        "cluster", "--h", "4", "--l", "4", "--verify", "--format", "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let s = v.to_string();
    assert!(
        s.contains("\"n_gates\":24") || s.contains("\"gates\":24"),
        "{s}"
    );
    assert!(
        s.contains("\"layers\":4") || s.contains("\"n_layers\":4"),
        "{s}"
    );
}

#[test]
fn efficient_cnot_csv_has_eight_unit_fidelity_rows() {
    let o = oneway(&[
        "cnot",
        "--variant",
        "efficient",
        "--all-branches",
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let h = rd.headers().unwrap().clone();
    let fi = h.iter().position(|c| c == "fidelity").unwrap();
    let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        assert!((r[fi].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn estimate_table_quotes_three_fidelities() {
    let o = oneway(&["estimate"]);
    assert_eq!(o.status.code(), Some(0));
    let t = String::from_utf8(o.stdout).unwrap();
    for f in ["0.88665", "0.94626", "0.96354"] {
        assert!(t.contains(f), "{f} missing in\n{t}");
    }
}

#[test]
fn device_file_with_fidelity_above_one_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"f_cz": 1.2}"#).unwrap();
    let o = oneway(&["selftest", "--device", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unknown_device_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"f_czz": 0.9}"#).unwrap();
    assert_eq!(
        oneway(&["estimate", "--device", p.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn oversized_verification_is_a_capacity_error() {
    assert_eq!(
        oneway(&["cluster", "--h", "5", "--l", "5", "--verify"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(oneway(&["cluster", "--bogus"]).status.code(), Some(1));
    assert_eq!(oneway(&["nope"]).status.code(), Some(1));
    assert_eq!(oneway(&[]).status.code(), Some(1));
    assert_eq!(oneway(&["--help"]).status.code(), Some(0));
}

#[test]
fn out_dir_gets_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = oneway(&["estimate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["command"], "estimate");
    for e in m["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(dir.path().join(e["path"].as_str().unwrap())).unwrap();
        assert_eq!(oneway_cli::manifest::sha256_hex(&bytes), e["sha256"]);
    }
}

#[test]
fn config_digest_tracks_arguments_but_not_out_dir() {
    let digest = |args: &[&str]| {
        let o = oneway(args);
        let m: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
        m["config_digest"].as_str().unwrap().to_string()
    };
    let a = digest(&["estimate"]);
    assert_eq!(a, digest(&["estimate"]));
    assert_ne!(a, digest(&["estimate", "--set", "f_cz=0.99"]));
    assert_ne!(a, digest(&["estimate", "--seed", "1"]));
    let dir = tempfile::tempdir().unwrap();
    oneway(&["estimate", "--out", dir.path().to_str().unwrap()]);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config_digest"], a);
}

#[test]
fn persistence_reports_disagreement_with_exit_three() {
    let v = json(&["persistence", "--family", "chain", "--n", "4"]);
    assert!(v.to_string().contains("\"found\":2"), "{v}");
    let o = oneway(&["persistence", "--family", "layered", "--n", "3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn rabi_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.json");
    std::fs::write(&p, r#"{"j1": 1.25, "unknown": 1}"#).unwrap();
    assert_eq!(
        oneway(&["rabi", "--config", p.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}
