//! Run configuration: one TOML document with `[model]`, `[train]`, `[eval]`
//! and `[paths]` tables, plus `--section.key value` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dimosr_core::metrics::EvalProtocol;
use dimosr_core::model::ModelConfig;
use dimosr_core::optim::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

const PRESET_FILES: [(&str, &str); 3] = [
    ("dimosr", include_str!("../../../configs/dimosr.toml")),
    ("dimosr-s", include_str!("../../../configs/dimosr-s.toml")),
    ("toy", include_str!("../../../configs/toy.toml")),
];

const SECTIONS: [&str; 4] = ["model", "train", "eval", "paths"];

/// Metric protocol; unset fields follow the model's scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub border_crop: Option<usize>,
    pub y_only: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Manifest written by `dimosr ingest`.
    pub train_manifest: Option<PathBuf>,
    /// Validation sets by display name.
    pub val_manifests: BTreeMap<String, PathBuf>,
    /// Receives `metrics.jsonl`, `config.toml` and checkpoints.
    pub output_dir: Option<PathBuf>,
    /// Checkpoint to continue training from.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: Paths,
}

impl RunConfig {
    pub fn protocol(&self) -> EvalProtocol {
        let d = EvalProtocol::for_scale(self.model.scale);
        EvalProtocol {
            border_crop: self.eval.border_crop.unwrap_or(d.border_crop),
            y_only: self.eval.y_only.unwrap_or(d.y_only),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Parses a document and applies `overrides` in order.
    pub fn from_toml(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut table: Table = toml::from_str(text).context("parsing config")?;
        for o in overrides {
            o.apply(&mut table)?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().context("invalid config")?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(config: Option<&Path>, preset: Option<&str>, overrides: &[Override]) -> Result<Self> {
        let text = match (config, preset) {
            (Some(_), Some(_)) => bail!("give either --config or --preset, not both"),
            (Some(path), None) => {
                std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
            }
            (None, name) => preset_text(name.unwrap_or("dimosr"))?.to_string(),
        };
        Self::from_toml(&text, overrides)
    }
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    PRESET_FILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<_> = PRESET_FILES.iter().map(|(n, _)| *n).collect();
            anyhow!("unknown preset {name:?} (expected one of {names:?})")
        })
}

/// A `--section.key value` pair from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub raw: String,
}

impl Override {
    pub fn new(key: &str, raw: &str) -> Result<Self> {
        let path: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
        if path.len() < 2 || path.iter().any(String::is_empty) {
            bail!("malformed override --{key}");
        }
        if !SECTIONS.contains(&path[0].as_str()) {
            bail!("unknown config section in --{key} (expected one of {SECTIONS:?})");
        }
        Ok(Override {
            path,
            raw: raw.to_string(),
        })
    }

    fn key(&self) -> String {
        self.path.join(".")
    }

    fn apply(&self, root: &mut Table) -> Result<()> {
        let (last, parents) = self.path.split_last().expect("at least two parts");
        let mut table = root;
        for p in parents {
            table = table
                .entry(p.clone())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("--{}: {p} is not a table", self.key()))?;
        }
        let mut value = parse_value(&self.raw);
        match (table.get(last), &value) {
            (Some(Value::Float(_)), Value::Integer(i)) => value = Value::Float(*i as f64),
            (Some(Value::String(_)), v) if !v.is_str() => value = Value::String(self.raw.clone()),
            _ => {}
        }
        table.insert(last.clone(), value);
        Ok(())
    }
}

/// A TOML literal when the text is one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Splits `--section.key value` and `--section.key=value` arguments out of
/// `args`, leaving the rest for the regular parser.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (body, None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| anyhow!("--{key} needs a value"))?,
        };
        overrides.push(Override::new(key, &value)?);
    }
    Ok((rest, overrides))
}
