use crossword_wasm::demo::{chooser_curve, codeword_view, explore_region, CURVE_POINTS};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn region_has_full_grid() {
    let v = parse(explore_region(5));
    assert_eq!(v["points"].as_array().unwrap().len(), 15);
    assert_eq!(v["mismatches"], 0);
    assert!(explore_region(4).is_err());
}

#[test]
fn cover_matches_the_worked_pattern() {
    let v = parse(codeword_view(5, 2, &[0, 1, 4]));
    assert_eq!(v["servers"][4], serde_json::json!([0, 4]));
    assert_eq!(v["nodes"], 3);
    assert_eq!(v["cover"], 4);
    assert_eq!(v["subcover"], 2);
    assert_eq!(v["commit_safe"], false);
    let v = parse(codeword_view(5, 2, &[0, 1, 2, 3]));
    assert_eq!(v["subcover"], 3);
    assert_eq!(v["commit_safe"], true);
    assert!(codeword_view(5, 2, &[5]).is_err());
}

#[test]
fn single_shard_needs_everyone_alive() {
    let v = parse(codeword_view(5, 1, &[0, 1, 2, 3]));
    assert_eq!(v["subcover"], 2);
    assert_eq!(v["commit_safe"], false);
}

#[test]
fn curve_moves_from_full_copies_to_single_shards() {
    let v = parse(chooser_curve(5, 4.0, 1000.0, 0, 1.0));
    let chosen = v["chosen"].as_array().unwrap();
    assert_eq!(chosen.len(), CURVE_POINTS);
    assert_eq!(chosen[0], serde_json::json!({"q": 3, "c": 3}));
    assert_eq!(chosen[CURVE_POINTS - 1], serde_json::json!({"q": 5, "c": 1}));
    assert_eq!(v["configs"].as_array().unwrap().len(), 3);
}

#[test]
fn lagging_followers_keep_quorums_small() {
    let v = parse(chooser_curve(5, 4.0, 1000.0, 2, 10.0));
    for c in v["chosen"].as_array().unwrap() {
        assert_eq!(c["q"], 3, "{c}");
    }
    assert!(chooser_curve(5, 4.0, 1000.0, 5, 2.0).is_err());
}
