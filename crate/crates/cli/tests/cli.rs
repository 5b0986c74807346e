use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fairvec::embedding::{load_embeddings, EmbeddingFormat};
use fairvec::metrics::report::AuditReport;
use fairvec_cli::RunManifest;

fn fairvec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairvec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = fairvec(args);
    assert!(
        out.status.success(),
        "fairvec {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate_and_pair(root: &Path) {
    ok(&["--seed", "3", "generate", "--out-dir", s(&root.join("gen"))]);
    ok(&[
        "--seed", "3", "pairs", "--embeddings", s(&root.join("gen/embeddings.fve")), "--out-dir",
        s(&root.join("pairs")),
    ]);
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fairvec(&["generate", "--config", "/no/such/config.json", "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    assert_eq!(fairvec(&["audit", "--bogus"]).status.code(), Some(2));
    assert_eq!(fairvec(&["--help"]).status.code(), Some(0));
}

#[test]
fn report_names_the_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing_here");
    let out = fairvec(&[
        "report", "--audit-baseline", s(&missing), "--audit-debiased", s(&missing), "--probe-baseline",
        s(&missing), "--probe-debiased", s(&missing), "--out-dir", s(&dir.path().join("r")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("audit"), "{stderr}");
    assert!(stderr.contains("nothing_here"), "{stderr}");
}

#[test]
fn empty_pair_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate_and_pair(dir.path());
    let pairs = dir.path().join("empty.csv");
    fs::write(&pairs, "sample_id_i,sample_id_j,label,subgroup,fold\n").unwrap();
    let out = fairvec(&[
        "audit", "--embeddings", s(&dir.path().join("gen/embeddings.fve")), "--pairs", s(&pairs), "--out-dir",
        s(&dir.path().join("audit")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        ok(&["--seed", "11", "generate", "--out-dir", s(&dir.path().join(name))]);
    }
    let a = fs::read(dir.path().join("a/embeddings.fve")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/embeddings.fve")).unwrap());
    let set = load_embeddings::<f64>(&dir.path().join("a/embeddings.fve"), EmbeddingFormat::Binary).unwrap();
    assert_eq!(set.len(), 1600);

    ok(&["--seed", "11", "--format", "csv", "generate", "--out-dir", s(&dir.path().join("c"))]);
    let csv = load_embeddings::<f64>(&dir.path().join("c/embeddings.csv"), EmbeddingFormat::Csv).unwrap();
    assert_eq!(csv.len(), 1600);
}

#[test]
fn audit_covers_every_subgroup_and_target() {
    let dir = tempfile::tempdir().unwrap();
    generate_and_pair(dir.path());
    let out = dir.path().join("audit");
    ok(&[
        "audit", "--embeddings", s(&dir.path().join("gen/embeddings.fve")), "--pairs",
        s(&dir.path().join("pairs/pairs.csv")), "--out-dir", s(&out),
    ]);
    let report: AuditReport = serde_json::from_slice(&fs::read(out.join("audit.json")).unwrap()).unwrap();
    assert_eq!(report.far_targets.len(), 5);
    assert_eq!(report.pair_counts.len(), 8);
    let csv = fs::read_to_string(out.join("far_audit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 * 8);
    assert!(out.join("det/pooled.csv").exists());
    assert!(out.join("det.svg").exists());
}

#[test]
fn every_step_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    generate_and_pair(root);
    let emb = root.join("gen/embeddings.fve");
    let folds = root.join("pairs/folds.csv");
    ok(&[
        "--seed", "3", "debias", "--embeddings", s(&emb), "--folds", s(&folds), "--epochs", "2", "--out-dir",
        s(&root.join("deb")),
    ]);
    ok(&[
        "--seed", "3", "probe", "--fold-views", s(&root.join("deb/fold_views")), "--folds", s(&folds), "--epochs",
        "1", "--out-dir", s(&root.join("probe")),
    ]);
    for step in ["gen", "pairs", "deb", "probe"] {
        let manifest: RunManifest =
            serde_json::from_slice(&fs::read(root.join(step).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.seed, 3);
        assert!(!manifest.outputs.is_empty());
        for artifact in &manifest.outputs {
            assert!(root.join(&artifact.path).exists(), "{}", artifact.path.display());
            assert_eq!(artifact.sha256.len(), 64);
        }
    }
    for k in 0..5 {
        assert!(root.join(format!("deb/fold_views/fold{k}.fve")).exists());
        assert!(root.join(format!("deb/checkpoints/fold{k}.fvnn")).exists());
    }
}
