use crate::eval::ReportFormat;
use crate::scenario::{PolicySource, ScenarioSpec};
use crate::trainer::Hyperparams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub episodes: usize,
    pub base_seed: u64,
    pub formats: Vec<ReportFormat>,
    /// Write one trace log per episode under `traces/`.
    pub traces: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            base_seed: 0,
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Table],
            traces: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub counts: Vec<usize>,
    pub episodes: usize,
    pub base_seed: u64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            counts: vec![4, 8, 12, 16, 20],
            episodes: 100,
            base_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
    pub tick_rate: f64,
    pub event_buffer: usize,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            tick_rate: 10.0,
            event_buffer: 256,
        }
    }
}

/// Everything a run needs; written back out as `effective-config.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Training seed; evaluation and sweeps use their own base seeds.
    pub seed: u64,
    pub workers: usize,
    pub scenario: ScenarioSpec,
    pub train: Hyperparams,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub serve: ServeSection,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

/// Sets `path` (dotted) in a TOML tree. The value is read as TOML, falling back to a plain string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError(format!("bad override key `{key}`")));
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads an optional config file and applies overrides. Relative parameter paths resolve against the file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let (mut tree, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                let tree: toml::Table = text.parse().map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                (tree, p.parent().map(Path::to_path_buf))
            }
            None => (toml::Table::new(), None),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        if let (PolicySource::Trained { path }, Some(base)) = (&mut cfg.scenario.policy, base) {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_policy(&mut self, arg: &str) {
        self.scenario.policy = match arg {
            "greedy-oracle" | "oracle" => PolicySource::GreedyOracle,
            "rules-only" | "rules" => PolicySource::RulesOnly,
            path => PolicySource::Trained {
                path: PathBuf::from(path),
            },
        };
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate().map_err(ConfigError)?;
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.eval.episodes == 0 || self.sweep.episodes == 0 {
            return Err(ConfigError("episode counts must be positive".into()));
        }
        if self.eval.formats.is_empty() {
            return Err(ConfigError("eval.formats is empty".into()));
        }
        if self.serve.tick_rate.is_nan() || self.serve.tick_rate <= 0.0 {
            return Err(ConfigError("serve.tick_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
