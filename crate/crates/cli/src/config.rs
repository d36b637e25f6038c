//! Config loading, `--set` overrides and backend construction.

use std::path::Path;

use promptsearch::backends::{HttpEvaluator, HttpTextModel};
use promptsearch::model::BackendsConfig;
use promptsearch::{validate_config, Backends, Evaluator, RunConfig, TextModel};
use serde_json::{Map, Value};

use crate::error::CliError;

pub fn read_raw(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| promptsearch::ConfigError::Malformed(format!("{}: {e}", path.display())).into())
}

/// Apply `a.b.c=value` overrides in order. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
pub fn apply_overrides(raw: &mut Value, overrides: &[String]) -> Result<(), CliError> {
    for spec in overrides {
        let (path, value) = spec.split_once('=').ok_or_else(|| CliError::Override(spec.clone()))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(CliError::Override(spec.clone()));
        }
        let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        set_path(raw, &keys, value).map_err(|_| CliError::Override(spec.clone()))?;
    }
    Ok(())
}

fn set_path(target: &mut Value, keys: &[&str], value: Value) -> Result<(), ()> {
    if !target.is_object() {
        if target.is_null() {
            *target = Value::Object(Map::new());
        } else {
            return Err(());
        }
    }
    let map = target.as_object_mut().ok_or(())?;
    match keys {
        [] => Err(()),
        [last] => {
            map.insert((*last).to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => set_path(map.entry(*head).or_insert(Value::Null), rest, value),
    }
}

pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut raw = read_raw(path)?;
    apply_overrides(&mut raw, overrides)?;
    Ok(validate_config(&raw)?)
}

/// Backends owned for the duration of one run.
pub struct OwnedBackends {
    optimizer: Box<dyn TextModel>,
    hint: Box<dyn TextModel>,
    evaluator: Box<dyn Evaluator>,
}

impl OwnedBackends {
    pub fn build(config: &RunConfig) -> Self {
        match &config.backends {
            BackendsConfig::Http(http) => Self {
                optimizer: Box::new(HttpTextModel::new(&http.optimizer.base_url, &http.optimizer.model, http.retry.clone())),
                hint: Box::new(HttpTextModel::new(&http.hint.base_url, &http.hint.model, http.retry.clone())),
                evaluator: Box::new(HttpEvaluator::new(&http.evaluator.base_url, &http.evaluator.reward, http.retry.clone())),
            },
            BackendsConfig::Testbed(tb) => Self {
                optimizer: Box::new(tb.text_model()),
                hint: Box::new(tb.text_model()),
                evaluator: Box::new(tb.evaluator()),
            },
        }
    }

    pub fn borrow(&self) -> Backends<'_> {
        Backends {
            optimizer: self.optimizer.as_ref(),
            hint: self.hint.as_ref(),
            evaluator: self.evaluator.as_ref(),
        }
    }
}
