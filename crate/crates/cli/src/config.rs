//! Run configuration: a JSON file with one object per section, then
//! `--key value` overrides on top.

use std::path::{Path, PathBuf};

use entlib_core::corpus::SynthConfig;
use entlib_core::evaluation::Statistic;
use entlib_core::model::{ModelConfig, Variant};
use entlib_core::training::TrainConfig;
use entlib_core::{Error, Real, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub predictions_b: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// `key = value` generator settings, read beneath the `synth` section.
    pub synth_config: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: None,
            validation: None,
            test: None,
            embeddings: None,
            output_dir: PathBuf::from("out"),
            checkpoints: Vec::new(),
            predictions: None,
            predictions_b: None,
            output: None,
            synth_config: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// `all` or `main`.
    pub condition: String,
    pub main_entities: Vec<String>,
    pub exclude_catch_all: bool,
    pub permutations: usize,
    pub statistic: Statistic,
    pub with_probs: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            condition: "all".to_string(),
            main_entities: Vec::new(),
            exclude_catch_all: false,
            permutations: 10_000,
            statistic: Statistic::MacroF1,
            with_probs: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub step: Real,
    pub tolerance: Real,
    pub floor: Real,
    pub variants: Vec<Variant>,
    /// Name of a parameter group whose gradient is perturbed on purpose.
    pub corrupt: Option<String>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            variants: vec![Variant::EntLib, Variant::NoEntLib],
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every section that draws random numbers.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub eval: EvalSection,
    pub synth: SynthConfig,
    pub gradcheck: GradcheckSection,
}

impl RunConfig {
    /// Reads `file` (if any), applies `overrides` and propagates the seed.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let defaults = serde_json::to_value(RunConfig::default())?;
        let mut explicit_seeds = Vec::new();
        let mut user = Value::Object(Map::new());
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            user = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !user.is_object() {
                return Err(Error::Config(format!(
                    "{}: expected a JSON object",
                    path.display()
                )));
            }
            for section in ["model", "train"] {
                if let Some(s) = user.get(section).and_then(|s| s.get("seed")) {
                    explicit_seeds.push((format!("{section}.seed"), s.clone()));
                }
            }
        }
        let mut value = defaults.clone();
        merge(&mut value, user.clone());
        let mut resolved = Vec::new();
        for (key, raw) in parse_overrides(overrides)? {
            resolved.push((resolve_key(&value, &key)?, raw));
        }

        let synth_file = resolved
            .iter()
            .rev()
            .find(|(p, _)| p == &["paths", "synth_config"])
            .map(|(_, raw)| raw.clone())
            .or_else(|| value["paths"]["synth_config"].as_str().map(str::to_string));
        if let Some(kv) = synth_file {
            let text =
                std::fs::read_to_string(&kv).map_err(|e| Error::Config(format!("{kv}: {e}")))?;
            let synth = SynthConfig::from_kv_str(&text)?;
            value = defaults;
            value["synth"] = serde_json::to_value(synth)?;
            merge(&mut value, user);
        }

        for (path, raw) in resolved {
            if path.len() == 2 && path[1] == "seed" {
                explicit_seeds.push((path.join("."), parse_value(&raw)));
            }
            set_path(&mut value, &path, &raw)?;
        }
        let mut config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("run configuration: {e}")))?;
        for (key, v) in explicit_seeds {
            if v.as_u64() != Some(config.seed) {
                return Err(Error::Config(format!(
                    "{key} = {v} differs from seed = {}; set the top-level seed instead",
                    config.seed
                )));
            }
        }
        config.model.seed = config.seed;
        config.train.seed = config.seed;
        config.model.validate()?;
        config.train.validate()?;
        Ok(config)
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Splits `--key value`, `--key=value` and bare `--flag` (meaning `true`).
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let Some(key) = args[i].strip_prefix("--") else {
            return Err(Error::Config(format!(
                "expected --key, found '{}'",
                args[i]
            )));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((key.to_string(), args[i + 1].clone()));
            i += 2;
        } else {
            out.push((key.to_string(), "true".to_string()));
            i += 1;
        }
    }
    Ok(out)
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// A dotted key is taken as a path. A plain key names a top-level field, or
/// else the one section that has a field of that name.
fn resolve_key(root: &Value, key: &str) -> Result<Vec<String>> {
    let obj = root.as_object().expect("config serialises to an object");
    if key.contains('.') {
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        let mut node = root;
        for part in &path {
            node = node
                .get(part)
                .ok_or_else(|| Error::Config(format!("unknown configuration key '{key}'")))?;
        }
        return Ok(path);
    }
    if obj.contains_key(key) && !obj[key].is_object() {
        return Ok(vec![key.to_string()]);
    }
    let owners: Vec<&String> = obj
        .iter()
        .filter(|(_, v)| {
            v.as_object()
                .is_some_and(|m: &Map<String, Value>| m.contains_key(key))
        })
        .map(|(k, _)| k)
        .collect();
    match owners.as_slice() {
        [one] => Ok(vec![one.to_string(), key.to_string()]),
        [] => Err(Error::Config(format!("unknown configuration key '{key}'"))),
        many => Err(Error::Config(format!(
            "key '{key}' is ambiguous; use one of {}",
            many.iter()
                .map(|s| format!("{s}.{key}"))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

fn set_path(root: &mut Value, path: &[String], raw: &str) -> Result<()> {
    let mut node = root;
    for part in path {
        node = node.get_mut(part.as_str()).expect("path was resolved");
    }
    let last = path.last().map(String::as_str).unwrap_or("");
    *node = match (&*node, parse_value(raw)) {
        (Value::Array(_), Value::String(s)) => {
            Value::Array(s.split(',').map(|p| Value::String(p.to_string())).collect())
        }
        (Value::String(_), Value::Number(_) | Value::Bool(_)) => Value::String(raw.to_string()),
        (Value::Null, Value::Number(_) | Value::Bool(_)) if is_path_like(last) => {
            Value::String(raw.to_string())
        }
        (_, v) => v,
    };
    Ok(())
}

fn is_path_like(key: &str) -> bool {
    matches!(
        key,
        "corpus"
            | "validation"
            | "test"
            | "embeddings"
            | "output_dir"
            | "predictions"
            | "predictions_b"
            | "output"
            | "synth_config"
            | "corrupt"
    )
}
