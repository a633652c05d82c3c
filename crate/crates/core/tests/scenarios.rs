use std::path::Path;

use hdp_core::scenario::Scenario;

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

#[test]
fn shipped_scenarios_load() {
    let mut n = 0;
    for entry in std::fs::read_dir(root().join("scenarios")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn schema_is_json_and_names_every_top_level_key() {
    let text = std::fs::read_to_string(root().join("schema/scenario.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for key in ["horizon", "system", "costs", "lq", "sampled_data", "grid", "simulation"] {
        assert!(props.contains_key(key), "{key}");
    }
}
