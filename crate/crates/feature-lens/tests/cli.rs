//! The `feature-lens` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use feature_lens::manifest::{read_manifest, sha256_hex, RunWriter};
use feature_lens::npy::Dtype;
use feature_lens::report::{read_report, AnalysisReport};
use feature_lens_core::regime::{classify_regime, synth_mp_features};
use feature_lens_core::{encode_target, DenseMatrix, EvaluationSet, Split, TargetEncoding};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn feature_lens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feature-lens"))
        .args(args)
        .env_remove("FEATURE_LENS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn analyze(manifest: &Path, out: &Path, extra: &[&str]) -> AnalysisReport {
    let mut args = vec!["analyze", s(manifest), "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&feature_lens(&args));
    read_report(&out.join("report.json")).unwrap()
}

#[test]
fn golden_report_matches_stored_checksum() {
    let dir = tempfile::tempdir().unwrap();
    analyze(&fixture("golden/run/manifest.json"), dir.path(), &["--threads", "1"]);
    let bytes = fs::read(dir.path().join("report.json")).unwrap();
    let stored = fs::read_to_string(fixture("golden/report.sha256")).unwrap();
    assert_eq!(sha256_hex(&bytes), stored.trim());
}

#[test]
fn analysis_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("golden/run/manifest.json");
    let mut reports = Vec::new();
    for (i, threads) in ["1", "1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("a{i}"));
        analyze(&manifest, &out, &["--threads", threads]);
        let mut r = read_report(&out.join("report.json")).unwrap();
        r.meta.threads = 0;
        reports.push((fs::read(out.join("report.json")).unwrap(), r));
    }
    assert_eq!(reports[0].0, reports[1].0);
    assert_eq!(reports[0].1, reports[2].1);
}

#[test]
fn csv_series_have_epoch_k_value_columns() {
    let dir = tempfile::tempdir().unwrap();
    let report = analyze(&fixture("golden/run/manifest.json"), dir.path(), &[]);
    for name in ["quality.csv", "utility.csv", "spectrum.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,k,value"));
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,1,"), "{name}: {first}");
    }
    assert_eq!(report.snapshots.len(), 2);
    assert!(report.conventions.qr_corrected);
    assert_eq!(report.conventions.evaluation_split, "test");
    assert_eq!(report.conventions.subsample_seed, 0);
}

#[test]
fn report_schema_has_the_documented_keys() {
    let dir = tempfile::tempdir().unwrap();
    analyze(&fixture("golden/run/manifest.json"), dir.path(), &[]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    for key in ["meta", "conventions", "snapshots"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    let snap = &v["snapshots"][1];
    for key in ["epoch", "layer", "quality", "utility", "spectrum", "regime", "nc", "constant_alignment"] {
        assert!(snap.get(key).is_some(), "{key}");
    }
    for key in ["per_feature", "cumulative", "total", "d_eff"] {
        assert!(snap["quality"].get(key).is_some() && snap["utility"].get(key).is_some(), "{key}");
    }
    assert!(snap["spectrum"]["rho_over_rho1"].is_array() && snap["spectrum"]["d_eff"].is_number());
    for key in ["kappa_cka", "verdict", "eigengap", "plateau_flatness"] {
        assert!(snap["regime"].get(key).is_some(), "{key}");
    }
    for key in ["nc1", "nc2_deviation", "nc3_deviation", "nc4_agreement"] {
        assert!(snap["nc"].get(key).is_some(), "{key}");
    }
}

#[test]
fn missing_manifest_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.json");
    let out = feature_lens(&["analyze", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn missing_snapshot_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    fs::create_dir(&run).unwrap();
    for entry in fs::read_dir(fixture("golden/run")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), run.join(entry.file_name())).unwrap();
    }
    fs::remove_file(run.join("snap001_test_outputs.npy")).unwrap();
    let out = feature_lens(&["analyze", s(&run.join("manifest.json")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("snap001_test_outputs.npy"));
}

#[test]
fn bad_flags_exit_2() {
    let manifest = fixture("golden/run/manifest.json");
    for args in [
        vec!["analyze", s(&manifest), "--out", "x", "--qr", "maybe"],
        vec!["analyze", s(&manifest), "--out", "x", "--epsilon", "-1"],
        vec!["analyze", s(&manifest)],
        vec!["frobnicate"],
    ] {
        assert_eq!(feature_lens(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn threads_environment_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_feature-lens"))
        .args(["analyze", s(&fixture("golden/run/manifest.json")), "--out", s(dir.path())])
        .env("FEATURE_LENS_THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FEATURE_LENS_THREADS"));
}

/// Balanced run whose training features give a regime score near 0.3: an
/// exact MP feature block plus isotropic noise of tuned strength.
fn borderline_run(dir: &Path) -> (PathBuf, f64) {
    let (c, n, p_mp, p_noise) = (3, 90, 6, 12);
    let (mp, labels) = synth_mp_features(c, n, p_mp, 1.0, 1.0, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = DenseMatrix::from_fn(p_noise, n, |_, _| StandardNormal.sample(&mut rng));
    let targets = encode_target(&labels, c, TargetEncoding::INDICATOR).unwrap();
    let stack = |beta: f64| {
        DenseMatrix::from_fn(p_mp + p_noise, n, |i, j| if i < p_mp { mp[(i, j)] } else { beta * noise[(i - p_mp, j)] })
    };
    let kappa = |beta: f64| classify_regime(&stack(beta), &targets, &labels, 0.1).unwrap().kappa_cka;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if kappa(mid) < 0.3 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let phi = stack(lo);
    let reached = kappa(lo);
    let mut w = RunWriter::create(dir, Dtype::F64).unwrap();
    let (files, _) = w.write_run_arrays(&labels, &labels, None).unwrap();
    let train = EvaluationSet::new(phi.clone(), labels.clone(), targets.clone(), Split::Train).unwrap();
    let test = EvaluationSet::new(phi, labels.clone(), targets.clone(), Split::Test).unwrap();
    w.add_snapshot(1.0, "h", &train, &test, None).unwrap();
    (w.finish("borderline", "fixture", "fixture", c, files, None, None, None).unwrap(), reached)
}

#[test]
fn epsilon_flag_flips_a_borderline_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, kappa) = borderline_run(&dir.path().join("run"));
    assert!((kappa - 0.3).abs() < 1e-6, "{kappa}");
    let strict = analyze(&manifest, &dir.path().join("strict"), &[]);
    let loose = analyze(&manifest, &dir.path().join("loose"), &["--epsilon", "0.5"]);
    let regime = |r: &AnalysisReport| r.snapshots[0].regime.clone().unwrap();
    assert!((regime(&strict).kappa_cka - 0.3).abs() < 1e-6);
    assert_eq!(regime(&strict).verdict, "EF");
    assert_eq!(regime(&loose).verdict, "MF");
    assert_eq!(loose.conventions.epsilon, 0.5);
}

#[test]
fn simulate_repeats_bit_identically_and_matches_the_committed_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixture("golden/spec.json");
    for name in ["a", "b"] {
        ok(&feature_lens(&["simulate", s(&spec), "--out", s(&dir.path().join(name))]));
    }
    let a = read_manifest(&dir.path().join("a/manifest.json")).unwrap();
    let b = read_manifest(&dir.path().join("b/manifest.json")).unwrap();
    assert_eq!(a, b);
    let committed = read_manifest(&fixture("golden/run/manifest.json")).unwrap();
    assert_eq!(a.checksums, committed.checksums);
    for (x, y) in a.snapshots.iter().zip(&committed.snapshots) {
        assert_eq!(x.checksums, y.checksums);
    }
}

#[test]
fn heaviside_simulation_is_analyzable_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"kind": "mlp", "dataset": {"name": "toy-heaviside"}, "hidden_widths": [32, 32],
            "activation": "relu", "optimizer": {"lr": 0.01, "momentum": 0.9, "weight_decay": 0.0},
            "epochs": 3, "batch_size": 64, "seed": 1, "checkpoints": [0, 3]}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&feature_lens(&["simulate", s(&spec), "--out", s(&run)]));
    let report = analyze(&run.join("manifest.json"), &dir.path().join("an"), &[]);
    assert_eq!(report.snapshots.len(), 2);
    assert_eq!(report.meta.num_classes, 1);
    for snap in &report.snapshots {
        assert!(snap.regime.is_none() && snap.nc.is_none());
        assert!(snap.notes.iter().any(|n| n.contains("two classes")));
        let total = snap.quality.cumulative.last().copied().unwrap();
        assert!(total > 0.0 && total <= 1.0 + 1e-9);
    }
}

#[test]
fn frozen_features_are_reported_as_coefficient_learning() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"kind": "mlp", "dataset": {"name": "gaussian-blobs", "classes": 3, "n": 30, "dim": 4, "separation": 4.0},
            "hidden_widths": [8], "activation": "tanh", "optimizer": {"lr": 0.0, "momentum": 0.9, "weight_decay": 0.001},
            "epochs": 4, "batch_size": 10, "seed": 2, "checkpoints": [0, 2, 4]}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&feature_lens(&["simulate", s(&spec), "--out", s(&run)]));
    let m = read_manifest(&run.join("manifest.json")).unwrap();
    let sums: Vec<&String> = m.snapshots.iter().map(|e| &e.checksums[&e.train_features_path]).collect();
    assert!(sums.windows(2).all(|w| w[0] == w[1]));
    let report = analyze(&run.join("manifest.json"), &dir.path().join("an"), &[]);
    for snap in &report.snapshots {
        assert_eq!(snap.regime.as_ref().unwrap().verdict, "coefficient-learning");
    }
}

#[test]
fn invalid_simulation_specs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for (i, body) in [
        r#"{"kind": "mlp"}"#,
        r#"{"kind": "transformer"}"#,
        r#"not json"#,
        r#"{"kind": "mlp", "dataset": {"name": "toy-heaviside"}, "hidden_widths": [4], "activation": "gelu",
            "optimizer": {"lr": 0.01, "momentum": 0.9, "weight_decay": 0.0}, "epochs": 1, "batch_size": 8,
            "seed": 0, "checkpoints": [0]}"#,
        r#"{"kind": "mlp", "dataset": {"name": "toy-heaviside"}, "hidden_widths": [4], "activation": "relu",
            "optimizer": {"lr": 0.01, "momentum": 0.9, "weight_decay": 0.0}, "epochs": 1, "batch_size": 8,
            "seed": 0, "checkpoints": [0, 5]}"#,
    ]
    .iter()
    .enumerate()
    {
        let spec = dir.path().join(format!("s{i}.json"));
        fs::write(&spec, body).unwrap();
        let out = feature_lens(&["simulate", s(&spec), "--out", s(&dir.path().join(format!("o{i}")))]);
        assert_eq!(out.status.code(), Some(2), "{body}");
    }
}

#[test]
fn linear_simulation_keeps_features_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"kind": "linear", "eigenvalues": [1.0, 0.5, 0.1], "target_coefficients": [1.0, -0.5, 0.25],
            "learning_rate": 1.0, "points": 32, "checkpoints": [0.5, 2.0, 500.0]}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&feature_lens(&["simulate", s(&spec), "--out", s(&run)]));
    let report = analyze(&run.join("manifest.json"), &dir.path().join("an"), &["--split", "train"]);
    let last = report.snapshots.last().unwrap();
    // at late times the learned function is the target, so utility equals quality
    let (q, u) = (&last.quality.per_feature, &last.utility.as_ref().unwrap().per_feature);
    for (a, b) in q.iter().zip(u) {
        assert!((a - b).abs() < 1e-6, "{q:?} vs {u:?}");
    }
    assert!(last.notes.iter().any(|n| n.contains("identical in every snapshot")));
}

#[test]
fn report_renders_three_panels_per_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    analyze(&fixture("golden/run/manifest.json"), dir.path(), &[]);
    let report = dir.path().join("report.json");
    for (format, ext) in [("svg", "svg"), ("csv", "csv")] {
        let out = dir.path().join(format);
        ok(&feature_lens(&["report", s(&report), "--format", format, "--out", s(&out)]));
        let mut names: Vec<String> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names.len(), 6);
        assert!(names.iter().all(|n| n.ends_with(ext)));
    }
    let svg = fs::read_to_string(dir.path().join("svg/snapshot001_spectrum.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("1e0"));
}

#[test]
fn empty_report_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixture("golden/run/manifest.json");
    let full = analyze(&src, &dir.path().join("an"), &[]);
    let mut empty = full.clone();
    empty.snapshots.clear();
    let path = dir.path().join("empty.json");
    fs::write(&path, feature_lens::report::to_json(&empty)).unwrap();
    let out = feature_lens(&["report", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no snapshots"));
}

#[test]
fn validate_fast_profile_emits_one_csv_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    ok(&feature_lens(&["validate", "--p", "200", "--n", "2000", "--seed", "1", "--out", s(dir.path())]));
    assert!(start.elapsed().as_secs() < 60);
    for a in ["0.5", "1", "2"] {
        let text = fs::read_to_string(dir.path().join(format!("synth_alpha{a}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 201);
    }
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn validate_accepts_more_features_than_points() {
    let dir = tempfile::tempdir().unwrap();
    ok(&feature_lens(&["validate", "--alpha", "1", "--p", "50", "--n", "20", "--out", s(dir.path())]));
    let text = fs::read_to_string(dir.path().join("synth_alpha1.csv")).unwrap();
    assert_eq!(text.lines().count(), 21);
}
