use uqmargins::harness::{RunConfig, PRESETS};
use uqmargins::models::TWO_MODE_PARAMS;

const TABLE: [(&str, [f64; 13]); 4] = [
    ("two_mode_4a", [1.0, 1.0, 0.05, 0.005, 0.05, 1.0, 1.0, 1.0, 1.0, 0.5, 1.0, 0.03, 0.03]),
    ("two_mode_4b", [1.0, 1.0, 0.08, 0.02, 0.05, 1.0, 0.2, 0.8, 1.0, 0.02, 2.0, 0.1, -0.03]),
    ("two_mode_4c", [1.0, 1.0, 0.008, 0.001, 0.008, 1.0, 0.04, 1.0, 0.5, 0.01, 0.5, -0.005, 0.0052]),
    ("two_mode_4d", [1.0, 0.05, 0.015, 0.015, 0.0, 1.0, 0.0454, 0.0, 1.0, 0.0042, 0.0, 0.2, 0.0]),
];

#[test]
fn two_mode_presets_carry_the_published_parameters() {
    for (name, row) in TABLE {
        let config = RunConfig::preset(name).unwrap();
        assert_eq!(config.model.system, "two_mode");
        for (param, value) in TWO_MODE_PARAMS.iter().zip(row) {
            assert_eq!(config.model.parameters[*param].to_bits(), value.to_bits(), "{name}: {param}");
        }
    }
}

#[test]
fn duffing_preset_parameters() {
    let config = RunConfig::preset("duffing_s2").unwrap();
    for (param, value) in [("m", 1.0), ("c", 0.1), ("k", 1.0), ("alpha", 1.0), ("F", 0.2)] {
        assert_eq!(config.model.parameters[param], value, "{param}");
    }
}

#[test]
fn uncertain_parameters_and_metrics() {
    let expect = [
        ("two_mode_4a", "q1", ["k1", "F1"]),
        ("two_mode_4b", "q2", ["c1", "F1"]),
        ("two_mode_4c", "q2", ["F1", "F2"]),
        ("two_mode_4d", "q2", ["c1", "F1"]),
        ("duffing_s2", "q", ["c", "F"]),
    ];
    for (name, metric, uncertain) in expect {
        let config = RunConfig::preset(name).unwrap();
        assert_eq!(config.model.metric, metric);
        assert_eq!(config.model.uncertain, uncertain);
    }
}

#[test]
fn every_preset_survives_a_json_round_trip() {
    for name in PRESETS {
        let config = RunConfig::preset(name).unwrap();
        let text = config.to_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, config, "{name}");
        back.system_model().unwrap();
    }
}

#[test]
fn override_on_top_of_a_preset() {
    let config = RunConfig::from_json(r#"{"preset": "two_mode_4b", "radius": 0.05, "model": {"parameters": {"c1": 0.09}}}"#)
        .unwrap();
    assert_eq!(config.radius, 0.05);
    assert_eq!(config.model.parameters["c1"], 0.09);
    assert_eq!(config.model.parameters["k2"], 0.2);
}
