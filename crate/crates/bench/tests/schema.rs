use std::fs;
use std::path::Path;

use diamond_bench::config::{AlgorithmSpec, ExperimentConfig};
use diamond_bench::run::{resolve, Overrides};
use serde_json::{json, Value};

fn schema() -> jsonschema::Validator {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/experiment.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn shipped_configs() -> Vec<(String, Value)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut out: Vec<(String, Value)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let text = fs::read_to_string(&path).unwrap();
            (path.file_name().unwrap().to_string_lossy().into_owned(), serde_json::from_str(&text).unwrap())
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn shipped_configs_match_schema_and_parser() {
    let validator = schema();
    let configs = shipped_configs();
    assert!(configs.len() >= 5);
    for (name, cfg) in configs {
        let errors: Vec<String> = validator.iter_errors(&cfg).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
        ExperimentConfig::from_json(&cfg.to_string()).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn resolved_defaults_for_every_subcommand_match_schema() {
    let validator = schema();
    let base =
        ExperimentConfig::from_json(r#"{"mixture": {"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}}"#).unwrap();
    for name in diamond_bench::SUBCOMMANDS {
        let cfg = resolve(name, base.clone(), &Overrides::default()).unwrap();
        let value = serde_json::to_value(&cfg).unwrap();
        let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
        assert_eq!(cfg.algorithm.as_ref().map(AlgorithmSpec::name), Some(*name));
    }
}

#[test]
fn schema_and_parser_both_reject_unknown_keys() {
    let validator = schema();
    for bad in [
        json!({"seeed": 1}),
        json!({"scheduler": {"kind": "linear", "tmin": 0.1}}),
        json!({"algorithm": {"name": "bon", "budgett": 3}}),
        json!({"reward": {"kind": "radial", "target": [0.0], "scale": 1.0, "extra": 1}}),
    ] {
        assert!(!validator.is_valid(&bad), "schema accepted {bad}");
        assert!(ExperimentConfig::from_json(&bad.to_string()).is_err(), "parser accepted {bad}");
    }
}
