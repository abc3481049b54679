mod common;

use std::process::Command;

use common::*;
use lipcert::cli::{run, CSV_HEADER};

fn invoke(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lipcert").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

struct Row {
    epsilon: f64,
    scope: String,
    method: String,
    value: f64,
}

fn parse_csv(text: &str) -> Vec<Row> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 5, "{l}");
            let value: f64 = f[3].parse().unwrap();
            assert!(value.is_finite());
            let secs: f64 = f[4].parse().unwrap();
            assert!(secs >= 0.0);
            Row {
                epsilon: f[0].parse().unwrap(),
                scope: f[1].to_string(),
                method: f[2].to_string(),
                value,
            }
        })
        .collect()
}

fn path(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn identity_layer_rows_are_one() {
    let (code, out, err) = invoke(&[
        "bound", "--model", &path("identity.json"), "--x0", "zeros", "--grid", "0.1:10:log:5",
        "--methods", "naive,rbar,nested,lower", "--layer", "0", "--spectral-slack", "0",
    ]);
    assert_eq!(code, 0, "{err}");
    let rows = parse_csv(&out);
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert_eq!(r.scope, "0");
        assert!((r.value - 1.0).abs() < 1e-12, "{} {}", r.method, r.value);
    }
    assert_eq!(rows[0].epsilon, 0.1);
    assert_eq!(rows[19].epsilon, 10.0);
    let order: Vec<&str> = rows[..4].iter().map(|r| r.method.as_str()).collect();
    assert_eq!(order, ["naive", "rbar", "nested", "lower"]);
}

#[test]
fn diag_layer_nested_value() {
    let (code, out, _) = invoke(&[
        "bound", "--model", &path("diag21.json"), "--grid", "1:1:linear:1", "--methods",
        "nested,rbar", "--layer", "0", "--spectral-slack", "0",
    ]);
    assert_eq!(code, 0);
    let rows = parse_csv(&out);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].method, "rbar");
    assert!((rows[0].value - 2.0).abs() < 1e-9);
    assert_eq!(rows[1].method, "nested");
    assert!((rows[1].value - 1.5).abs() < 1e-9);
}

#[test]
fn net_mode_rows_are_ordered() {
    let (code, out, err) = invoke(&[
        "bound", "--model", &path("random3.json"), "--grid", "0.01:10:log:4", "--net",
        "--samples", "3000",
    ]);
    assert_eq!(code, 0, "{err}");
    let rows = parse_csv(&out);
    assert_eq!(rows.len(), 16);
    for chunk in rows.chunks(4) {
        assert!(chunk.iter().all(|r| r.scope == "net" && r.epsilon == chunk[0].epsilon));
        let v: Vec<f64> = chunk.iter().map(|r| r.value).collect();
        assert!(v[0] >= v[1] * (1.0 - 1e-6) && v[1] >= v[2] * (1.0 - 1e-6) && v[2] >= v[3], "{v:?}");
    }
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("b.csv");
    let (code, out, _) = invoke(&[
        "bound", "--model", &path("diag21.json"), "--grid", "0.5:2:linear:3", "--methods", "naive",
        "--layer", "0", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(out.is_empty());
    assert_eq!(parse_csv(&std::fs::read_to_string(&out_path).unwrap()).len(), 3);
}

#[test]
fn nominal_input_file_is_used() {
    let (code, out, err) = invoke(&[
        "bound", "--model", &path("conv-relu.json"), "--x0", &path("conv-relu.x0.bin"), "--grid",
        "0.01:0.01:log:1", "--methods", "nested", "--layer", "0",
    ]);
    assert_eq!(code, 0, "{err}");
    let with_x0 = parse_csv(&out)[0].value;
    let (_, out, _) = invoke(&[
        "bound", "--model", &path("conv-relu.json"), "--grid", "0.01:0.01:log:1", "--methods",
        "nested", "--layer", "0",
    ]);
    assert_ne!(with_x0, parse_csv(&out)[0].value);
}

#[test]
fn input_errors_exit_2() {
    let cases: Vec<Vec<String>> = vec![
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "1:1:linear:1".into()],
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "bad".into(), "--net".into()],
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "1:1:linear:1".into(), "--layer".into(), "3".into()],
        vec!["bound".into(), "--model".into(), path("mnist-net.json"), "--grid".into(), "1:1:linear:1".into(), "--layer".into(), "1".into()],
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "1:1:linear:1".into(), "--net".into(), "--methods".into(), "exact".into()],
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "1:1:linear:1".into(), "--net".into(), "--x0".into(), "/nonexistent".into()],
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "1:1:linear:1".into(), "--net".into(), "--x0".into(), path("conv-relu.x0.bin")],
        vec!["bound".into(), "--model".into(), path("diag21.json"), "--grid".into(), "1:1:linear:1".into(), "--net".into(), "--spectral-slack".into(), "-1".into()],
        vec!["describe".into(), "--model".into(), "/nonexistent.json".into()],
        vec!["verify".into(), "--instances".into(), "3".into(), "--model".into(), "/nonexistent.json".into()],
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (code, _, err) = invoke(&refs);
        assert_eq!(code, 2, "{args:?}: {err}");
        assert!(!err.is_empty());
    }
}

#[test]
fn describe_lists_layers() {
    let (code, out, _) = invoke(&["describe", "--model", &path("mnist-net.json")]);
    assert_eq!(code, 0);
    let layers: Vec<&str> = out.lines().filter(|l| l.starts_with("layer ")).collect();
    assert_eq!(layers.len(), 7);
    assert!(layers[6].ends_with("FC-10"));
    assert!(layers[0].contains("3456x784"));
    let (code, out, _) = invoke(&["describe", "--model", &path("diag21.json")]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("layer ")).count(), 1);
}

#[test]
fn verify_prints_one_line_per_instance() {
    let (code, out, err) = invoke(&["verify", "--instances", "40", "--seed", "9"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().count(), 40);
    assert!(out.lines().all(|l| l.ends_with(" pass")));
    assert!(err.contains("40 passed, 0 failed"));
    let (code, out, _) = invoke(&["verify", "--instances", "2", "--model", &path("random3.json")]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().filter(|l| l.starts_with("layer ")).count(), 2);
}

#[test]
fn binary_exit_codes_and_determinism() {
    let bin = env!("CARGO_BIN_EXE_lipcert");
    let args = [
        "bound", "--model", &path("random3.json"), "--grid", "0.1:1:log:3", "--net", "--samples",
        "500", "--seed", "4",
    ];
    let a = Command::new(bin).args(args).output().unwrap();
    let b = Command::new(bin).args(args).env("LIPCERT_THREADS", "1").output().unwrap();
    assert!(a.status.success() && b.status.success());
    let strip = |o: &[u8]| -> Vec<String> {
        String::from_utf8_lossy(o)
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a.stdout), strip(&b.stdout));

    let bad = Command::new(bin).args(["describe", "--model", "/nonexistent.json"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let threads = Command::new(bin)
        .args(["describe", "--model", &path("diag21.json")])
        .env("LIPCERT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}
