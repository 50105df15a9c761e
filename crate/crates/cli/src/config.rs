//! Pipeline configuration: one TOML document with a section per stage.
//!
//! ```toml
//! [data]
//! seed = 0
//! size = 5000
//!
//! [optimize]
//! rounds = 100
//! mode = "offline_mbo"
//! ```
//!
//! Every key is optional. `--set section.key=value` overrides are applied to
//! the parsed document before it is validated.

use std::path::{Path, PathBuf};

use cre_core::attribution::RoleConfig;
use cre_core::landscape::{CutoffMode, PartitionKind, PartitionSpec};
use cre_core::optimizer::{GreedyConfig, RunConfig};
use cre_core::policy::{PolicyShape, PretrainConfig};
use cre_core::surrogate::GbdtConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "CRE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    /// Number of synthetic motifs; ignored when `motif_file` is set.
    pub motifs: usize,
    /// JASPAR-format vocabulary.
    pub motif_file: Option<PathBuf>,
    pub activators: usize,
    pub repressors: usize,
    pub synergy: f64,
    pub label_noise_sd: f64,
    pub threshold_fraction: f64,
    pub size: usize,
    pub length: usize,
    pub embed_rate: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            motifs: 16,
            motif_file: None,
            activators: 6,
            repressors: 6,
            synergy: 0.5,
            label_noise_sd: 0.02,
            threshold_fraction: 0.85,
            size: 5000,
            length: 80,
            embed_rate: 1.0,
        }
    }
}

/// Fitness band used for pretraining and as the greedy seed pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub kind: PartitionKind,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub mode: CutoffMode,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            kind: PartitionKind::Hard,
            lower: None,
            upper: None,
            mode: CutoffMode::Percentile,
        }
    }
}

impl PartitionConfig {
    pub fn spec(&self) -> Result<PartitionSpec, CliError> {
        let mut spec = PartitionSpec::of_kind(self.kind);
        if self.kind == PartitionKind::Custom || self.lower.is_some() || self.upper.is_some() {
            let (Some(lower), Some(upper)) = (self.lower, self.upper) else {
                return Err(CliError::Usage(
                    "custom partitions need both partition.lower and partition.upper".into(),
                ));
            };
            spec = PartitionSpec {
                kind: PartitionKind::Custom,
                lower,
                upper,
                mode: self.mode,
            };
        }
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub window: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub init_seed: u64,
    pub pretrain: PretrainConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let shape = PolicyShape::default();
        PolicyConfig {
            window: shape.window,
            embed_dim: shape.embed_dim,
            hidden: shape.hidden,
            init_seed: 0,
            pretrain: PretrainConfig::default(),
        }
    }
}

impl PolicyConfig {
    pub fn shape(&self) -> PolicyShape {
        PolicyShape {
            window: self.window,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub policy: PolicyConfig,
    pub surrogate: GbdtConfig,
    pub roles: RoleConfig,
    pub optimize: RunConfig,
    pub greedy: GreedyConfig,
}

impl Config {
    /// Read `path` (or `$CRE_CONFIG`, or defaults) and apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config, CliError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let path = path.map(Path::to_path_buf).or(from_env);
        let mut doc = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut doc, item)?;
        }
        let config: Config = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: cre_core::Error| CliError::Usage(e.to_string());
        self.optimize.validate().map_err(usage)?;
        self.partition.spec()?;
        let d = &self.data;
        if d.size == 0 || d.length == 0 {
            return Err(CliError::Usage("data.size and data.length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&d.embed_rate) || !(d.threshold_fraction > 0.0 && d.threshold_fraction <= 1.0) {
            return Err(CliError::Usage(
                "data.embed_rate must lie in [0, 1] and data.threshold_fraction in (0, 1]".into(),
            ));
        }
        if self.policy.window == 0 || self.policy.embed_dim == 0 || self.policy.hidden == 0 {
            return Err(CliError::Usage("policy dimensions must be positive".into()));
        }
        if self.roles.sample_size == 0 {
            return Err(CliError::Usage("roles.sample_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Set `a.b.c = value` in `doc`. The value is parsed as a TOML literal,
/// falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("invalid override key {key:?}")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key:?}: {part} is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
