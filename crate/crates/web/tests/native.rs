use serde_json::Value;

use strategic_mapf_web::{auction_json, simulate_json, utility_curves_json};

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn simulate_returns_frames_for_every_tick() {
    let v = parse(simulate_json(
        r#"{"kind":"intersection","gap":2,"agents":6,"seed":4}"#,
    ));
    let frames = v["frames"].as_array().unwrap();
    assert!(frames.len() > 1);
    assert!(frames.iter().all(|f| f.as_array().unwrap().len() == 6));
    assert_eq!(v["agents"].as_array().unwrap().len(), 6);
    assert_eq!(v["completed"], true);
    assert_eq!(v["collisions"].as_array().unwrap().len(), 0);
    // Cells travel as [row, col] pairs.
    assert_eq!(frames[0][0].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_cbs_and_defaults() {
    let v = parse(simulate_json(
        r#"{"kind":"doorway","agents":3,"solver":"cbs"}"#,
    ));
    assert!(v["soc"].as_u64().unwrap() > 0);
    let v = parse(simulate_json("{}"));
    assert_eq!(v["width"], 16);
}

#[test]
fn simulate_rejects_bad_requests() {
    assert!(simulate_json(r#"{"kind":"maze"}"#).is_err());
    assert!(simulate_json(r#"{"solver":"oracle"}"#).is_err());
    assert!(simulate_json(r#"{"agents":500}"#).is_err());
    assert!(simulate_json("not json").is_err());
}

#[test]
fn auction_matches_worked_example() {
    let v = parse(auction_json(r#"{"bids":[7,4,2]}"#));
    assert_eq!(v["turns"], serde_json::json!([1, 2, 3]));
    let pay: Vec<f64> = serde_json::from_value(v["payments"].clone()).unwrap();
    assert!(
        (pay[0] - 7.0 / 3.0).abs() < 1e-12 && (pay[1] - 1.0 / 3.0).abs() < 1e-12 && pay[2] == 0.0
    );
    assert!((v["welfare"].as_f64().unwrap() - 29.0 / 3.0).abs() < 1e-12);
    assert!(auction_json(r#"{"bids":[3]}"#).is_err());
    assert!(auction_json(r#"{"bids":[3,-1]}"#).is_err());
}

#[test]
fn curves_peak_at_true_values() {
    let v = parse(utility_curves_json(
        r#"{"values":[6,2,9,4],"bid_step":0.5}"#,
    ));
    let bids: Vec<f64> = serde_json::from_value(v["bids"].clone()).unwrap();
    let utils: Vec<Vec<f64>> = serde_json::from_value(v["utilities"].clone()).unwrap();
    for (i, truth) in [6.0, 2.0, 9.0, 4.0].into_iter().enumerate() {
        let at = bids.iter().position(|&b| b == truth).unwrap();
        let best = utils[i].iter().cloned().fold(f64::MIN, f64::max);
        assert!(utils[i][at] >= best - 1e-12);
    }
    assert!(utility_curves_json(r#"{"values":[1,2],"bid_step":0}"#).is_err());
}
