use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn hedonic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hedonic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

/// A 1000-row synthetic market with a fast linear train config and a trained
/// model, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        assert_ok(&hedonic(&["synth", "--rows", "1000", "--seed", "3", "--out", s(&root)]));
        let text = std::fs::read_to_string(root.join("train_config.json")).unwrap();
        let mut cfg: serde_json::Value = serde_json::from_str(&text).unwrap();
        cfg["model_kind"] = "linear".into();
        cfg["model"] = "linear_model.json".into();
        std::fs::write(root.join("linear.json"), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        assert_ok(&hedonic(&["train", "--config", s(&root.join("linear.json"))]));
        Fixture { _dir: dir, root }
    })
}

fn write_config(dir: &Path, name: &str, body: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body.to_string()).unwrap();
    p
}

#[test]
fn synth_writes_the_benchmark_files() {
    let f = fixture();
    for name in ["listings.csv", "lookup.csv", "labels.csv", "schema.json", "config.json", "train_config.json"] {
        assert!(f.path(name).is_file(), "{name} missing");
    }
    let labels = std::fs::read_to_string(f.path("labels.csv")).unwrap();
    assert_eq!(labels.lines().next(), Some("row_id,blob,regime,segment"));
    assert_eq!(labels.lines().count(), 1001);
}

#[test]
fn unknown_config_key_is_a_config_error_naming_the_key() {
    let f = fixture();
    let cfg = write_config(&f.root, "typo.json", serde_json::json!({ "data": "listings.csv", "kmeans_kk": 3 }));
    let o = hedonic(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kmeans_kk"), "{}", stderr(&o));
}

#[test]
fn missing_data_file_is_a_config_error() {
    let f = fixture();
    let cfg = write_config(&f.root, "nodata.json", serde_json::json!({ "data": "nowhere.csv" }));
    let o = hedonic(&["evaluate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn too_many_stage_one_clusters_is_a_config_error() {
    let f = fixture();
    let cfg = write_config(
        &f.root,
        "bigk.json",
        serde_json::json!({
            "data": "listings.csv", "schema": "schema.json", "geo_lookup": "lookup.csv",
            "model_kind": "linear", "stage1": { "k": 8 }
        }),
    );
    let o = hedonic(&["train", "--config", s(&cfg), "--out", s(&f.path("bigk_model.json"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn predict_prices_every_listing() {
    let f = fixture();
    let o = hedonic(&[
        "predict",
        "--model",
        s(&f.path("linear_model.json")),
        "--input",
        s(&f.path("listings.csv")),
        "--geo-lookup",
        s(&f.path("lookup.csv")),
    ]);
    assert_ok(&o);
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("row_id,segment,stage1,price_eur"));
    let prices: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(prices.len(), 1000);
    assert!(prices.iter().all(|p| p.is_finite()));
}

#[test]
fn predict_without_coordinates_or_lookup_fails_as_data_error() {
    let f = fixture();
    let o = hedonic(&["predict", "--model", s(&f.path("linear_model.json")), "--input", s(&f.path("listings.csv"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_postal_code_names_the_row() {
    let f = fixture();
    let listings = std::fs::read_to_string(f.path("listings.csv")).unwrap();
    let header = listings.lines().next().unwrap();
    let col = header.split(',').position(|c| c == "postal_code").unwrap();
    let row: Vec<String> = listings
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .enumerate()
        .map(|(i, v)| if i == col { "99999".to_string() } else { v.to_string() })
        .collect();
    let input = f.path("unknown_code.csv");
    std::fs::write(&input, format!("{header}\n{}\n", row.join(","))).unwrap();
    let o = hedonic(&[
        "predict",
        "--model",
        s(&f.path("linear_model.json")),
        "--input",
        s(&input),
        "--geo-lookup",
        s(&f.path("lookup.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 0"), "{}", stderr(&o));
}

#[test]
fn row_explanations_sum_to_the_price() {
    let f = fixture();
    let o = hedonic(&[
        "explain",
        "--model",
        s(&f.path("linear_model.json")),
        "--input",
        s(&f.path("listings.csv")),
        "--geo-lookup",
        s(&f.path("lookup.csv")),
    ]);
    assert_ok(&o);
    let out = stdout(&o);
    let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..5], ["row_id", "segment", "stage1", "merged", "intercept"]);
    assert_eq!(header.last(), Some(&"price_eur"));
    for line in out.lines().skip(1).take(50) {
        let v: Vec<f64> = line.split(',').skip(4).map(|x| x.parse().unwrap()).collect();
        let (price, terms) = v.split_last().unwrap();
        let total: f64 = terms.iter().sum();
        assert!((total - price).abs() <= 1e-6 * price.abs(), "{total} vs {price}");
    }
}

#[test]
fn shape_export_needs_an_additive_model() {
    let f = fixture();
    let o = hedonic(&["explain", "--model", s(&f.path("linear_model.json")), "--feature", "construction_year"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn newer_model_format_is_refused() {
    let f = fixture();
    let text = std::fs::read_to_string(f.path("linear_model.json")).unwrap();
    let mut model: serde_json::Value = serde_json::from_str(&text).unwrap();
    model["format_version"] = 99.into();
    let newer = f.path("newer_model.json");
    std::fs::write(&newer, model.to_string()).unwrap();
    let o = hedonic(&["predict", "--model", s(&newer), "--input", s(&f.path("listings.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("99"), "{}", stderr(&o));
}

#[test]
fn elbow_with_a_single_k_prints_one_row() {
    let f = fixture();
    let o = hedonic(&["elbow", "--config", s(&f.path("config.json")), "--k-min", "3", "--k-max", "3"]);
    assert_ok(&o);
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().nth(1).unwrap().starts_with("3,"));
}

#[test]
fn elbow_rejects_an_empty_range() {
    let f = fixture();
    let o = hedonic(&["elbow", "--config", s(&f.path("config.json")), "--k-min", "4", "--k-max", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cluster_map_labels_every_row() {
    let f = fixture();
    for algorithm in ["kmeans", "knn-bin", "tree"] {
        let o = hedonic(&["cluster-map", "--config", s(&f.path("config.json")), "--algorithm", algorithm]);
        assert_ok(&o);
        let out = stdout(&o);
        assert_eq!(out.lines().next(), Some("lat,lon,cluster"));
        let labels: Vec<&str> = out.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
        assert_eq!(labels.len(), 1000, "{algorithm}");
        assert!(labels.iter().all(|l| *l == "0" || *l == "1"), "{algorithm}");
    }
}
