use famgp_wasm_demo::Demo;
use serde_json::Value;

#[test]
fn fit_and_curves_round_trip_through_json() {
    let mut demo = Demo::new(4, 800, 5f64.sqrt()).unwrap();
    let points: Value = serde_json::from_str(&demo.points()).unwrap();
    assert_eq!(points["x"].as_array().unwrap().len(), 800);
    let summary: Value = serde_json::from_str(&demo.fit("chebyshev", 60, 200).unwrap()).unwrap();
    assert_eq!(summary["params"]["kind"], "chebyshev");
    assert!(summary["lml"].as_f64().unwrap().is_finite());
    for order in 0..=2 {
        let curve: Value = serde_json::from_str(&demo.curve(order, 101).unwrap()).unwrap();
        assert_eq!(curve["order"], order);
        assert_eq!(curve["mean"].as_array().unwrap().len(), 101);
        assert!(curve["sd"].as_array().unwrap().iter().all(|s| s.as_f64().unwrap() >= 0.0));
    }
    let curve: Value = serde_json::from_str(&demo.curve(0, 201).unwrap()).unwrap();
    assert!(curve["rmse"].as_f64().unwrap() < 5f64.sqrt());
}
