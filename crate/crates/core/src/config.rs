//! Umbrella run configuration: one TOML file with a section per module,
//! plus dotted-path `key=value` overrides so experiment grids are small
//! config deltas instead of separate files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::augment::AugmentConfig;
use crate::data::synthetic::SyntheticConfig;
use crate::error::{Error, Result};
use crate::head::OrderHeadConfig;
use crate::sampler::SamplerConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Directory holding `manifest.jsonl` (and `classes.json` when labeled).
    pub root: PathBuf,
    /// Resample ingested videos to this frame rate; unset keeps the source.
    pub target_fps: Option<f32>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { root: PathBuf::from("data"), target_fps: None }
    }
}

/// Order-head widths; tuple size and embedding width come from the sampler
/// and backbone sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub pair_hidden_dim: usize,
    pub dropout: f64,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection { pair_hidden_dim: 512, dropout: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Neighborhood sizes reported by retrieval evaluation.
    pub ks: Vec<usize>,
    /// Evenly spaced clips per gallery video.
    pub clips_per_video: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![1, 5, 10, 20, 50], clips_per_video: 1 }
    }
}

impl EvalSection {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0) {
            return Err(Error::Config("eval.ks must be non-empty and positive".into()));
        }
        if self.clips_per_video == 0 {
            return Err(Error::Config("eval.clips_per_video must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub dataset: DatasetSection,
    pub synth: SyntheticConfig,
    pub sampler: SamplerConfig,
    pub augment: AugmentConfig,
    pub backbone: BackboneConfig,
    pub head: HeadSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Config {
    /// Parse a TOML file, apply dotted-path overrides, and validate.
    /// Without a file, overrides are applied to the defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = match path {
            Some(p) => fs::read_to_string(p)?.parse()?,
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for spec in overrides {
            apply_override(&mut value, spec)?;
        }
        let cfg: Config = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, toml::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.sampler.speed_set()?;
        self.augment.validate()?;
        self.backbone.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.order_head_config().validate()?;
        if self.sampler.m != self.backbone.m {
            return Err(Error::Config(format!(
                "sampler.m ({}) and backbone.m ({}) must agree",
                self.sampler.m, self.backbone.m
            )));
        }
        if self.augment.crop != self.backbone.input_size {
            return Err(Error::Config(format!(
                "augment.crop ({}) and backbone.input_size ({}) must agree",
                self.augment.crop, self.backbone.input_size
            )));
        }
        Ok(())
    }

    /// Assemble the order-head config from the sampler, backbone, and head
    /// sections.
    pub fn order_head_config(&self) -> OrderHeadConfig {
        OrderHeadConfig {
            n: self.sampler.n,
            embedding_dim: self.backbone.embedding_dim(),
            pair_hidden_dim: self.head.pair_hidden_dim,
            dropout: self.head.dropout,
        }
    }

    /// Every key with its default value, as TOML; printed by `--help`.
    pub fn schema() -> String {
        toml::to_string_pretty(&Config::default())
            .expect("default config always serializes")
    }
}

/// Collect the dotted path of every leaf in a TOML tree, in declaration
/// order.
fn leaf_paths(value: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                leaf_paths(v, &path, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

/// Expand a possibly-abbreviated override key to a full dotted path.
///
/// Exact schema paths pass through, as does any key rooted at a known
/// section (so optional keys absent from the defaults, like
/// `dataset.target_fps`, stay addressable). Anything else must match the
/// trailing segments of exactly one schema key: `n` expands to `sampler.n`
/// and `norm.g` to `backbone.norm.g`, while `m` is rejected as ambiguous
/// between `sampler.m` and `backbone.m`.
pub fn resolve_key(key: &str) -> Result<String> {
    let defaults = toml::Value::try_from(Config::default())
        .expect("default config always serializes");
    let mut leaves = Vec::new();
    leaf_paths(&defaults, "", &mut leaves);
    if leaves.iter().any(|l| l == key) {
        return Ok(key.to_string());
    }
    if let Some((section, _)) = key.split_once('.') {
        if defaults.get(section).is_some_and(toml::Value::is_table) {
            return Ok(key.to_string());
        }
    }
    let key_segs: Vec<&str> = key.split('.').collect();
    let matches: Vec<&String> = leaves
        .iter()
        .filter(|l| {
            let segs: Vec<&str> = l.split('.').collect();
            segs.len() > key_segs.len() && segs[segs.len() - key_segs.len()..] == key_segs[..]
        })
        .collect();
    match matches.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(Error::Config(format!(
            "no config key matches `{key}` (run with --help to see the schema)"
        ))),
        many => Err(Error::Config(format!(
            "`{key}` is ambiguous: could be {}",
            many.iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(" or ")
        ))),
    }
}

/// Apply one `section.key=value` override to a parsed TOML tree. The key
/// may abbreviate a unique schema path (see [`resolve_key`]); the value
/// grammar is TOML: numbers, booleans, arrays, and quoted strings parse as
/// such; bare words fall back to strings (`backbone.arch=r3d`).
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override `{spec}` has an empty key")));
    }
    let path = &resolve_key(path)?;
    let parsed = parse_scalar(raw.trim());
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{path}` is not a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{path}` does not address a table entry")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
