use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use tabclust_cli::{run_experiment, CliError, ExperimentConfig};
use tabclust_core::ensemble::majority_vote;
use tabclust_core::labels::{LabelMatrix, LabelVector};

fn config(out: &Path, separation: f64, methods: Value, extra: Value) -> ExperimentConfig {
    let mut v = json!({
        "seed": 5,
        "output_dir": out,
        "data": {"synthetic": {
            "n_samples": 150, "n_features": 6, "class_ratio": 0.6, "separation": separation,
            "cluster_shape": "diagonal", "missing_rate": 0.0, "seed": 8
        }},
        "methods": methods,
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    serde_json::from_value(v).unwrap()
}

fn small_deep() -> Value {
    json!({"hidden": [8], "pretrain_epochs": 5, "finetune_epochs": 4, "target_update_interval": 2, "batch_size": 64})
}

fn roster() -> Value {
    let mut sweep = small_deep();
    sweep["dims"] = json!([2, 4]);
    json!([
        {"name": "km", "kind": "kmeans_x"},
        {"name": "gm", "kind": "gmm_x"},
        {"name": "kmz", "kind": "kmeans_z", "params": {"hidden": [8], "pretrain_epochs": 5, "batch_size": 64}},
        {"name": "gmz", "kind": "gmm_z", "params": {"hidden": [8], "pretrain_epochs": 5, "batch_size": 64}},
        {"name": "dec", "kind": "deep_student_t", "params": small_deep()},
        {"name": "idec", "kind": "deep_student_t_recon", "params": small_deep()},
        {"name": "g10", "kind": "deep_gaussian", "params": small_deep()},
        {"name": "sweep", "kind": "deep_gaussian_sweep", "params": sweep},
        {"name": "kgg", "kind": "kgg"}
    ])
}

#[test]
fn kmeans_on_well_separated_cohort_scores_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), 10.0, json!([{"name": "km", "kind": "kmeans_x"}]), json!({}));
    let report = run_experiment(&c).unwrap();
    let text = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "method,cohort,acc,ari,nmi");
    assert!(report.scores[0].acc >= 0.99);
}

#[test]
fn full_roster_writes_every_report_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cohorts = json!({"cohorts": [{"name": "c1"}, {"name": "c2", "synthetic_seed": 9}]});
    let ra = run_experiment(&config(a.path(), 3.0, roster(), cohorts.clone())).unwrap();
    run_experiment(&config(b.path(), 3.0, roster(), cohorts)).unwrap();
    assert!(ra.failures.is_empty(), "{:?}", ra.failures);
    assert_eq!(ra.scores.len(), 18);
    assert_eq!(ra.ranks.len(), 9);
    for s in &ra.scores {
        assert!(s.wall_clock_seconds > 0.0, "{} {}", s.method, s.cohort);
    }
    for f in ["scores.csv", "ranks.csv", "labels/c1/kgg.csv", "labels/c2/sweep.csv", "members/c1/sweep.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    for f in [
        "timings.csv",
        "scores.json",
        "manifest.json",
        "truth/c1.csv",
        "embeddings/c1/kmz.csv",
        "embeddings/c2/sweep/d4.csv",
        "histories/c1/g10.json",
        "histories/c1/sweep.json",
    ] {
        assert!(a.path().join(f).is_file(), "{f}");
    }
    // the KGG row is the majority vote of the voter files on disk
    let read = |f: &str| LabelVector::read_csv(fs::File::open(a.path().join(f)).unwrap()).unwrap();
    for c in ["c1", "c2"] {
        let voters = LabelMatrix::new(vec![
            read(&format!("labels/{c}/km.csv")),
            read(&format!("labels/{c}/gm.csv")),
            read(&format!("labels/{c}/sweep.csv")),
        ])
        .unwrap();
        assert_eq!(majority_vote(&voters).unwrap(), read(&format!("labels/{c}/kgg.csv")));
    }
    // KGG time covers its voters
    let t = |m: &str| ra.score(m, "c1").unwrap().wall_clock_seconds;
    assert!(t("kgg") >= t("km") + t("gm") + t("sweep"));
    // pretraining is charged to every hybrid/deep method
    assert!(t("kmz") > t("km"));
}

#[test]
fn failures_are_recorded_without_aborting_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let mut sweep = small_deep();
    sweep["dims"] = json!([2, 40]);
    let methods = json!([
        {"name": "km", "kind": "kmeans_x"},
        {"name": "gm", "kind": "gmm_x"},
        {"name": "sweep", "kind": "deep_gaussian_sweep", "params": sweep},
        {"name": "kgg", "kind": "kgg"}
    ]);
    let report = run_experiment(&config(dir.path(), 3.0, methods, json!({}))).unwrap();
    let failed: Vec<&str> = report.failures.iter().map(|f| f.method.as_str()).collect();
    assert_eq!(failed, ["sweep", "kgg"]);
    assert_eq!(report.scores.len(), 2);
    let ranks = fs::read_to_string(dir.path().join("ranks.csv")).unwrap();
    assert_eq!(ranks.lines().count(), 3);
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failures"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["ranked_methods"], json!(["km", "gm"]));
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn desk_and_paper_profiles_share_the_schema() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let methods = json!([
        {"name": "km", "kind": "kmeans_x"},
        {"name": "kmz", "kind": "kmeans_z", "params": {"hidden": [4], "batch_size": 150}}
    ]);
    run_experiment(&config(a.path(), 3.0, methods.clone(), json!({"epochs_profile": "desk"}))).unwrap();
    run_experiment(&config(b.path(), 3.0, methods, json!({"epochs_profile": "paper"}))).unwrap();
    for f in ["scores.csv", "timings.csv", "ranks.csv", "labels/all/kmz.csv", "embeddings/all/kmz.csv"] {
        assert_eq!(header(&a.path().join(f)), header(&b.path().join(f)), "{f}");
    }
    let manifest = |p: &Path| -> Value { serde_json::from_slice(&fs::read(p.join("manifest.json")).unwrap()).unwrap() };
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&ma), keys(&mb));
    assert_eq!(ma["methods"][1]["epochs"]["pretrain"], 200);
    assert_eq!(mb["methods"][1]["epochs"]["pretrain"], 1000);
    assert_eq!(ma["omitted_methods"]["methods"], json!(["DKM", "AE-CM", "DEPICT", "DynAE"]));
    assert_eq!(ma["config_sha256"].as_str().unwrap().len(), 64);
    assert_ne!(ma["config_sha256"], mb["config_sha256"]);
}

#[test]
fn csv_source_with_grouping_filter_and_subsample() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,sex,label\n");
    for i in 0..80 {
        let y = usize::from(i % 3 == 0);
        let shift = if y == 1 { 6.0 } else { 0.0 };
        let a = if i == 7 { String::new() } else { format!("{}", shift + (i % 5) as f64 * 0.1) };
        csv.push_str(&format!("{a},{},{},{y}\n", shift - (i % 7) as f64 * 0.1, i % 2));
    }
    fs::write(dir.path().join("data.csv"), csv).unwrap();
    let schema = r#"[{"name": "a", "unit": "", "bound_lo": -100, "bound_hi": 100},
                     {"name": "b", "unit": "", "bound_lo": -100, "bound_hi": 100},
                     {"name": "sex", "unit": "", "bound_lo": 0, "bound_hi": 1}]"#;
    fs::write(dir.path().join("schema.json"), schema).unwrap();
    let cfg = json!({
        "seed": 1,
        "output_dir": dir.path().join("out"),
        "data": {"csv": {"path": "data.csv", "schema": "schema.json", "label_column": "label"}},
        "preprocess": {"max_missing_rate": 0.5},
        "cohorts": [
            {"name": "female", "filter": {"column": "sex", "equals": 0}},
            {"name": "combined", "subsample": {"n_samples": 30, "class_ratio": 0.5}}
        ],
        "methods": [{"name": "km", "kind": "kmeans_x"}]
    });
    fs::write(dir.path().join("exp.json"), cfg.to_string()).unwrap();
    let c = ExperimentConfig::load(&dir.path().join("exp.json")).unwrap();
    let report = run_experiment(&c).unwrap();
    let manifest: Value = serde_json::from_slice(&fs::read(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cohorts"][0]["n_samples"], 40);
    assert_eq!(manifest["cohorts"][1]["n_samples"], 30);
    assert_eq!(manifest["cohorts"][1]["class_counts"], json!([20, 10]));
    assert!(report.score("km", "female").unwrap().acc >= 0.99);
}

#[test]
fn invalid_configs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), 3.0, json!([{"name": "kgg", "kind": "kgg"}]), json!({}));
    match run_experiment(&c) {
        Err(e @ CliError::Validation(_)) => assert_eq!(e.exit_code(), 1),
        other => panic!("{other:?}"),
    }
    assert!(!dir.path().join("scores.csv").exists());
}
