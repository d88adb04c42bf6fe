use gpcr_web::{benchmark_json, preview_json, roc_json};
use serde_json::Value;

#[test]
fn roc_matches_hand_computation() {
    // Scores 0.9 (pos), 0.8 (neg), 0.7 (pos), 0.1 (neg): 3 of 4 pairs ordered.
    let out: Value = serde_json::from_str(
        &roc_json(r#"{"scores":[0.9,0.8,0.7,0.1],"labels":[1,0,1,0]}"#).unwrap(),
    )
    .unwrap();
    assert_eq!(out["auc"].as_f64(), Some(0.75));
    let fpr: Vec<f64> = serde_json::from_value(out["fpr"].clone()).unwrap();
    let tpr: Vec<f64> = serde_json::from_value(out["tpr"].clone()).unwrap();
    assert_eq!(fpr, [0.0, 0.0, 0.5, 0.5, 1.0]);
    assert_eq!(tpr, [0.0, 0.5, 0.5, 1.0, 1.0]);
}

#[test]
fn roc_rejects_bad_labels() {
    let err = roc_json(r#"{"scores":[0.1,0.2],"labels":[0,2]}"#).unwrap_err();
    assert!(err.contains("0 or 1"), "{err}");
    assert!(roc_json("not json").is_err());
}

#[test]
fn preview_shapes() {
    let out: Value = serde_json::from_str(&preview_json(r#"{"p":30,"n":200,"block":5}"#).unwrap()).unwrap();
    assert_eq!(out["truth"].as_array().unwrap().len(), 30);
    assert_eq!(out["variance"].as_array().unwrap().len(), 30);
    let rate = out["positive_rate"].as_f64().unwrap();
    assert!(rate > 0.2 && rate < 0.8);
    assert!(preview_json(r#"{"block":500}"#).is_err());
    assert!(preview_json(r#"{"p":"many"}"#).unwrap_err().contains("bad settings"));
}

#[test]
fn demo_benchmark_separates_models() {
    let out: Value = serde_json::from_str(&benchmark_json("").unwrap()).unwrap();
    let auc = &out["auc"];
    let g = auc["gpcr"].as_f64().unwrap();
    let p = auc["pcr"].as_f64().unwrap();
    assert!(g > 0.85 && g > p + 0.1, "gpcr {g} pcr {p}");
    assert_eq!(out["roc"].as_array().unwrap().len(), 4);
    assert_eq!(out["loadings"]["truth"].as_array().unwrap().len(), 120);
}
