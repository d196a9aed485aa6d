use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tslm_core::data;
use tslm_core::state_table::{build_table, write_tsv};
use tslm_core::Location;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn tslm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tslm")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn all_document_values(m: &Value) -> Vec<f64> {
    ["inputs", "outputs", "conversions", "moves", "overall"]
        .iter()
        .flat_map(|k| ["precision", "recall", "f1"].map(|f| m["document"][k][f].as_f64().unwrap()))
        .collect()
}

/// Writes the photosynthesis table, optionally with water's state 2 replaced.
fn photosynthesis_tsv(dir: &Path, water_at_2: Option<&str>) -> PathBuf {
    let mut grid = data::load_propara(&fixture("photosynthesis.json")).unwrap()[0].to_grid();
    if let Some(l) = water_at_2 {
        let w = grid.entities.iter().position(|e| e == "water").unwrap();
        grid.timelines[w][2] = Location::known(l);
    }
    let path = dir.join(if water_at_2.is_some() { "pred.tsv" } else { "gold.tsv" });
    std::fs::write(&path, write_tsv(&build_table(&grid, grid.n_steps()).unwrap())).unwrap();
    path
}

#[test]
fn gold_against_gold_scores_one_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let gold = photosynthesis_tsv(dir.path(), None);
    for mode in ["document", "sentence", "npn"] {
        let out = ok(tslm(&["evaluate", "--pred", s(&gold), "--gold", s(&gold), "--mode", mode]));
        let m = json(&out);
        assert!(all_document_values(&m).iter().all(|&v| v == 1.0));
        for k in ["cat1", "cat2", "cat3", "macro_avg", "micro_avg"] {
            assert_eq!(m["sentence"][k], 1.0);
        }
        assert_eq!(m["location_change"]["accuracy"], 1.0);
    }
    // gold given as the procedure JSON rather than a table
    let out = ok(tslm(&["evaluate", "--pred", s(&gold), "--gold", s(&fixture("photosynthesis.json"))]));
    assert!(all_document_values(&json(&out)).iter().all(|&v| v == 1.0));
}

#[test]
fn corrupted_move_lowers_moves_recall_only() {
    let dir = tempfile::tempdir().unwrap();
    let gold = photosynthesis_tsv(dir.path(), None);
    let pred = photosynthesis_tsv(dir.path(), Some("stem"));
    let out_path = dir.path().join("metrics.json");
    let out = ok(tslm(&["evaluate", "--pred", s(&pred), "--gold", s(&gold), "--out", s(&out_path)]));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Moves"));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    let d = &m["document"];
    assert!(d["moves"]["recall"].as_f64().unwrap() < 1.0);
    for k in ["inputs", "outputs", "conversions"] {
        assert_eq!(d[k]["f1"], 1.0, "{k}");
    }
}

#[test]
fn npn_mode_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let gold = fixture("recipe_npn.json");
    let m = json(&ok(tslm(&["evaluate", "--pred", s(&gold), "--gold", s(&gold), "--mode", "npn"])));
    assert_eq!(m["location_change"]["change_steps"], 5);
    assert_eq!(m["location_change"]["correct"], 5);

    // egg ends on the pan instead of the plate: one of five changes missed
    let mut grid = data::load_npn(&gold).unwrap()[0].to_grid();
    grid.timelines[1][6] = Location::known("pan");
    let pred = dir.path().join("pred.tsv");
    std::fs::write(&pred, write_tsv(&build_table(&grid, 6).unwrap())).unwrap();
    let m = json(&ok(tslm(&["evaluate", "--pred", s(&pred), "--gold", s(&gold), "--mode", "npn"])));
    assert_eq!(m["location_change"]["correct"], 4);
    assert_eq!(m["location_change"]["accuracy"], 0.8);
}

#[test]
fn convert_reproduces_the_json_fixture() {
    let out = ok(tslm(&["convert", "--input", s(&fixture("photosynthesis.tsv"))]));
    let converted = data::parse_propara(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(converted, data::load_propara(&fixture("photosynthesis.json")).unwrap());
}

#[test]
fn train_predict_evaluate_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("train.json");
    ok(tslm(&["generate-data", "--seed", "3", "--count", "4", "--out", s(&corpus)]));
    let config = d.join("run.json");
    std::fs::write(
        &config,
        r#"{"encoder": {"d_model": 16, "n_heads": 2, "n_layers": 1, "ff_width": 16, "max_len": 128},
            "sgd": {"learning_rate": 0.05, "decay_factor": 0.5, "decay_every": 100},
            "epochs": 2, "seed": 4}"#,
    )
    .unwrap();
    let model = d.join("model");
    let log = json(&ok(tslm(&[
        "--config", s(&config), "train", "--train", s(&corpus), "--dev", s(&corpus), "--model-dir", s(&model),
    ])));
    assert_eq!(log["epochs"].as_array().unwrap().len(), 2);
    for f in ["params.json", "vocab.json", "encoder.json"] {
        assert!(model.join(f).exists(), "{f}");
    }

    let (a, b) = (d.join("a.tsv"), d.join("b.tsv"));
    let summary = json(&ok(tslm(&["predict", "--data", s(&corpus), "--model-dir", s(&model), "--out", s(&a)])));
    assert_eq!(summary["constraints"], true);
    ok(tslm(&["predict", "--data", s(&corpus), "--model-dir", s(&model), "--out", s(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let raw = json(&ok(tslm(&["predict", "--data", s(&corpus), "--model-dir", s(&model), "--out", s(&b), "--no-constraints"])));
    assert_eq!(raw["constraints"], false);
    assert!(raw["rule_violations"].is_u64());

    let m = json(&ok(tslm(&["evaluate", "--pred", s(&a), "--gold", s(&corpus)])));
    for v in all_document_values(&m) {
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    assert_eq!(tslm(&[]).status.code(), Some(2));
    let bad_config = d.join("bad.json");
    std::fs::write(&bad_config, r#"{"command": "convert", "lr": 1}"#).unwrap();
    assert_eq!(tslm(&["--config", s(&bad_config)]).status.code(), Some(2));
    assert_eq!(tslm(&["generate-data", "--count", "0"]).status.code(), Some(2));

    let broken = d.join("broken.json");
    std::fs::write(&broken, r#"[{"id": "p", "sentences": [["a"]], "entities": ["x"], "grid": {"x": ["-"]}}]"#).unwrap();
    let out = tslm(&["evaluate", "--pred", s(&broken), "--gold", s(&broken)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let gold = photosynthesis_tsv(d, None);
    let other = d.join("other.tsv");
    std::fs::write(&other, std::fs::read_to_string(&gold).unwrap().replace("photosynthesis", "respiration")).unwrap();
    let out = tslm(&["evaluate", "--pred", s(&other), "--gold", s(&gold)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("respiration") && err.contains("photosynthesis"), "{err}");

    // an exploding learning rate aborts with a numeric failure
    let corpus = d.join("train.json");
    ok(tslm(&["generate-data", "--seed", "1", "--count", "3", "--out", s(&corpus)]));
    let config = d.join("run.json");
    std::fs::write(
        &config,
        r#"{"encoder": {"d_model": 8, "n_heads": 2, "n_layers": 1, "ff_width": 8, "max_len": 128}, "epochs": 3}"#,
    )
    .unwrap();
    let model = d.join("model");
    let out = tslm(&["--config", s(&config), "train", "--train", s(&corpus), "--model-dir", s(&model), "--lr", "1e300"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}
