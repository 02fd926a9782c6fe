use std::fs;

use amfkit_core::config::RunConfig;
use amfkit_core::minkowski::AmfMode;
use amfkit_core::pipeline::run_pipeline;

fn smoke(out: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("cohort_n", "24"),
        ("cohort_size", "16"),
        ("kernel_size", "9"),
        ("sigma_major", "2"),
        ("n_iter", "10"),
    ] {
        c.set(k, v).unwrap();
    }
    c.output = out.to_path_buf();
    c
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = smoke(&dir.path().join("a"));
    let mut b = smoke(&dir.path().join("b"));
    b.threads = 1;
    let ra = run_pipeline(&a, &mut |_| {}).unwrap();
    run_pipeline(&b, &mut |_| {}).unwrap();
    assert_eq!(ra.report.rows.len(), 13);
    for f in [
        "report.json",
        "report.csv",
        "features.csv",
        "features.json",
        "targets.csv",
        "bmd.csv",
    ] {
        let x = fs::read(a.output.join(f)).unwrap();
        let y = fs::read(b.output.join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn oracle_mode_matches_fast() {
    let dir = tempfile::tempdir().unwrap();
    let fast = smoke(&dir.path().join("fast"));
    let mut oracle = smoke(&dir.path().join("oracle"));
    oracle.mode = AmfMode::Oracle;
    oracle.keep_intermediates = true;
    let mut fast_k = fast.clone();
    fast_k.keep_intermediates = true;
    let a = run_pipeline(&fast_k, &mut |_| {}).unwrap();
    let b = run_pipeline(&oracle, &mut |_| {}).unwrap();
    for (x, y) in a.features.iter().zip(&b.features) {
        for (u, v) in x.values.iter().zip(&y.values) {
            assert!((u - v).abs() <= 1e-6, "{} {u} vs {v}", x.specimen_id);
        }
    }
    for row in a.report.rows.iter().zip(&b.report.rows) {
        assert!((row.0.rmse.mean - row.1.rmse.mean).abs() <= 1e-6);
    }
}

#[test]
fn logs_one_object_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let mut stages = Vec::new();
    run_pipeline(&cfg, &mut |v| {
        stages.push(v["stage"].as_str().unwrap().to_string())
    })
    .unwrap();
    for s in [
        "input",
        "calibrate",
        "binarize",
        "amf",
        "anisotropy",
        "features",
        "evaluate",
        "output",
    ] {
        assert!(stages.iter().any(|x| x == s), "missing {s}");
    }
}
