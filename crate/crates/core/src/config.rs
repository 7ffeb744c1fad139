//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Aggregation;
use crate::synth::SynthConfig;
use crate::trainer::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSplit {
    #[default]
    Test,
    All,
}

/// Paths and scoring options not owned by training or generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub label_column: String,
    pub score_stride: usize,
    pub aggregation: Aggregation,
    pub score_split: ScoreSplit,
}

const RUN_KEYS: [&str; 8] = [
    "data",
    "out",
    "checkpoint",
    "scores",
    "label_column",
    "score_stride",
    "aggregation",
    "score_split",
];

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            checkpoint: None,
            scores: None,
            label_column: "label".into(),
            score_stride: 1,
            aggregation: Aggregation::Mean,
            score_split: ScoreSplit::Test,
        }
    }
}

/// Everything a command may read. The single `seed` key drives both
/// training and generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub run: RunOptions,
}

fn keys_of<T: Serialize>(value: &T) -> BTreeSet<String> {
    match toml::Value::try_from(value) {
        Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

fn section<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    match toml::Value::Table(table.clone()).try_into::<T>() {
        Ok(v) => Ok(v),
        Err(err) => {
            for (k, v) in table {
                let mut single = toml::Table::new();
                single.insert(k.clone(), v);
                if let Err(e) = toml::Value::Table(single).try_into::<T>() {
                    return Err(Error::Config {
                        key: k,
                        message: e.message().trim().to_string(),
                    });
                }
            }
            Err(Error::Config {
                key: "<config>".into(),
                message: err.message().trim().to_string(),
            })
        }
    }
}

/// Parse the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
pub fn parse_override(pair: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = pair.split_once('=').ok_or_else(|| Error::Config {
        key: pair.to_string(),
        message: "override must look like key=value".into(),
    })?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl RunConfig {
    /// Split a flat table into its sections, rejecting unknown keys.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let train_keys = keys_of(&TrainConfig::default());
        let mut synth_keys = keys_of(&SynthConfig::default());
        synth_keys.remove("seed");
        let (mut train, mut synth, mut run) = (toml::Table::new(), toml::Table::new(), toml::Table::new());
        for (k, v) in table {
            if train_keys.contains(&k) {
                train.insert(k, v);
            } else if synth_keys.contains(&k) {
                synth.insert(k, v);
            } else if RUN_KEYS.contains(&k.as_str()) {
                run.insert(k, v);
            } else {
                return Err(Error::Config {
                    key: k,
                    message: "unknown key".into(),
                });
            }
        }
        let train: TrainConfig = section(train)?;
        let mut synth: SynthConfig = section(synth)?;
        synth.seed = train.seed;
        let run: RunOptions = section(run)?;
        if run.score_stride == 0 {
            return Err(Error::Config {
                key: "score_stride".into(),
                message: "must be positive".into(),
            });
        }
        Ok(Self { train, synth, run })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(parse_table(text)?)
    }

    /// Read an optional config file and apply `key=value` overrides on top.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        for pair in overrides {
            let (k, v) = parse_override(pair)?;
            table.insert(k, v);
        }
        Self::from_table(table)
    }

    /// Flat table of every resolved key.
    pub fn to_table(&self) -> Result<toml::Table> {
        let mut out = toml::Table::new();
        for v in [
            toml::Value::try_from(&self.train),
            toml::Value::try_from(&self.synth),
            toml::Value::try_from(&self.run),
        ] {
            let v = v.map_err(|e| Error::Config {
                key: "<config>".into(),
                message: e.to_string(),
            })?;
            if let toml::Value::Table(t) = v {
                out.extend(t);
            }
        }
        Ok(out)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_table()?).map_err(|e| Error::Config {
            key: "<config>".into(),
            message: e.to_string(),
        })
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            line,
            message: e.message().trim().to_string(),
        }
    })
}
