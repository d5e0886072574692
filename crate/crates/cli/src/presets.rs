//! Shipped hyperparameter presets, compiled into the binary.

use tristack::tune::ParamGrid;

use crate::config::ModelSet;
use crate::Failure;

pub const MODEL_PRESETS: &[(&str, &str)] = &[
    ("login", include_str!("../presets/login.json")),
    ("message", include_str!("../presets/message.json")),
];

pub const GRID_PRESETS: &[(&str, &str)] = &[("login_xgboost_grid", include_str!("../presets/login_xgboost_grid.json"))];

fn lookup<'a>(table: &[(&str, &'a str)], kind: &str, name: &str) -> Result<&'a str, Failure> {
    table.iter().find(|(n, _)| *n == name).map(|(_, text)| *text).ok_or_else(|| {
        let known: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        Failure::Config(format!("unknown {kind} preset `{name}` (known: {})", known.join(", ")))
    })
}

pub fn model_set(name: &str) -> Result<ModelSet, Failure> {
    let text = lookup(MODEL_PRESETS, "model", name)?;
    serde_json::from_str(text).map_err(|e| Failure::Config(format!("model preset `{name}`: {e}")))
}

pub fn grid(name: &str) -> Result<ParamGrid, Failure> {
    let text = lookup(GRID_PRESETS, "grid", name)?;
    serde_json::from_str(text).map_err(|e| Failure::Config(format!("grid preset `{name}`: {e}")))
}
