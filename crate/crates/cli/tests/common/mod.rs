#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn xmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmc")).args(args).env_remove("XMC_LOG").output().expect("xmc runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Schema violations of `instance` against one published definition.
pub fn schema_errors(name: &str, instance: &Value) -> Vec<String> {
    let mut schema: Value = serde_json::from_str(xmc_service::API_SCHEMA).unwrap();
    schema["$ref"] = json!(format!("#/$defs/{name}"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    validator.iter_errors(instance).map(|e| format!("{e} at {}", e.instance_path)).collect()
}

pub fn assert_schema(name: &str, instance: &Value) {
    let errors = schema_errors(name, instance);
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}
