//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! (with the individual checks of failing ones) and exits non-zero if any
//! criterion fails.
//!
//! `cargo test --test acceptance -- <filter>` runs only criteria whose id
//! contains the filter.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};

use oneway_cli::criteria::{self, Criterion, Tolerances};
use oneway_core::resources::DeviceModel;

fn selftest_into(dir: &Path) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_oneway"))
        .args(["selftest", "--seed", "0", "--out"])
        .arg(dir)
        .output()
        .expect("binary runs")
        .status
        .code()
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

/// `selftest --seed 0` twice through the binary, compared byte for byte.
fn determinism() -> Criterion {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let code_a = selftest_into(&a);
    let code_b = selftest_into(&b);
    let (la, lb) = (listing(&a), listing(&b));

    let mut c = Criterion::new(
        "determinism",
        "selftest --seed 0 twice yields byte-identical manifests and outputs",
    );
    c.check(
        "exit codes",
        code_a == code_b,
        format!("{code_a:?} / {code_b:?}"),
        "equal",
    );
    let manifest = |l: &[(String, Vec<u8>)]| {
        l.iter()
            .find(|(n, _)| n == "manifest.json")
            .map(|(_, b)| b.clone())
    };
    c.check(
        "manifest.json",
        manifest(&la).is_some() && manifest(&la) == manifest(&lb),
        "compared",
        "byte-identical",
    );
    c.check(
        "file set",
        la.iter().map(|(n, _)| n).eq(lb.iter().map(|(n, _)| n)),
        la.len().to_string(),
        "same names",
    );
    for ((n, x), (_, y)) in la.iter().zip(&lb) {
        c.check(
            n.clone(),
            x == y,
            format!("{} bytes", x.len()),
            "byte-identical",
        );
    }
    let inner = criteria::determinism(0);
    c.check(
        "in-process recomputation",
        inner.passed,
        inner.status(),
        "PASS",
    );
    c
}

fn main() -> ExitCode {
    // ignore harness flags such as --nocapture; the first free word filters
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let tol = Tolerances::default();
    let device = DeviceModel::default();
    let suite: Vec<(&str, Box<dyn Fn() -> Criterion>)> = vec![
        (
            "cluster_oracle",
            Box::new(|| criteria::cluster_oracle(&tol)),
        ),
        (
            "resources_4x4",
            Box::new(|| criteria::resources_4x4(&device)),
        ),
        (
            "cnot_standard",
            Box::new(|| criteria::cnot_standard(&tol, &device)),
        ),
        (
            "cnot_efficient",
            Box::new(|| criteria::cnot_efficient(&tol, &device)),
        ),
        (
            "ubell_triangle",
            Box::new(|| criteria::ubell_triangle(&tol)),
        ),
        (
            "mpmc_structure",
            Box::new(|| criteria::mpmc_structure(&tol)),
        ),
        ("persistence", Box::new(criteria::persistence_findings)),
        (
            "rabi_validation",
            Box::new(|| criteria::rabi_validation(&tol)),
        ),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, f) in &suite {
        if filter.as_deref().is_some_and(|p| !id.contains(p)) {
            continue;
        }
        let c = f();
        ran += 1;
        if c.passed {
            println!("PASS {}: {}", c.id, c.title);
        } else {
            failed += 1;
            print!("{}", c.report());
        }
    }
    println!("\nacceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
