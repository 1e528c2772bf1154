use std::path::Path;
use std::process::{Command, Output};

use altrec::geometry::{Point3, PointCloud};
use altrec::io::{read_points, write_mesh, Format};
use altrec::shapes::icosphere;

fn altrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_altrec")).args(args).output().unwrap()
}

fn ok_json(out: Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn load(p: &Path) -> PointCloud {
    read_points(p, Format::from_path(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_ipsr_eval_denoise_vcm() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("sphere.obj");
    write_mesh(&mesh, Format::Obj, &icosphere(4, 1.0, Point3::origin())).unwrap();
    let noisy = dir.path().join("noisy.ply");
    let out = altrec(&["synth", "--in", s(&mesh), "--out", s(&noisy), "--n", "4000", "--noise-std", "0.005", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load(&noisy).len(), 4000);

    let recon = dir.path().join("recon.ply");
    let oriented = dir.path().join("oriented.xyz");
    let summary = ok_json(altrec(&[
        "ipsr", "--in", s(&noisy), "--depth", "5", "--out", s(&recon), "--normals-out", s(&oriented),
    ]));
    assert_eq!(summary["converged"], true);
    assert!(summary["faces"].as_u64().unwrap() > 0);
    assert!(load(&oriented).has_normals());

    let eval = altrec(&["eval", "--pred", s(&recon), "--gt", s(&noisy), "--samples", "5000"]);
    assert!(eval.status.success());
    let text = String::from_utf8(eval.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().next().unwrap().starts_with("rmsd"));

    let denoised = dir.path().join("denoised.ply");
    let report = dir.path().join("report.csv");
    let summary = ok_json(altrec(&[
        "--binary", "denoise", "--in", s(&noisy), "--out", s(&denoised), "--report", s(&report), "--dmin", "5", "--dmax",
        "6", "--dsharp", "6", "--iters", "2",
    ]));
    assert_eq!(summary["points"], 4000);
    assert!(summary["max_relative_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(load(&denoised).len(), 4000);
    assert!(std::fs::read(&denoised).unwrap().starts_with(b"ply\nformat binary_little_endian"));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 3);

    let ratios = dir.path().join("ratios.csv");
    let out = altrec(&["vcm", "--in", s(&noisy), "--out", s(&ratios), "--mc-samples", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&ratios).unwrap().lines().count(), 4001);
}

#[test]
fn errors_are_json_on_stderr() {
    let out = altrec(&["ipsr", "--in", "/definitely/not/here.xyz", "--depth", "5"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "IoError");

    let out = altrec(&["denoise", "--in", "x.xyz"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "UsageError");

    assert!(altrec(&["--help"]).status.success());
}
