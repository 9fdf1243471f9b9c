//! Config file loading, `--set` overrides and the provenance hash.

use std::path::Path;

use hood_core::data::BundleConfig;
use hood_core::encoder::TrainConfig;
use hood_core::experiment::{reference_methods, ExperimentPlan, MethodSpec, Sweep};
use hood_core::scoring::ScoreKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub score: ScoreKind,
    pub cor_centered: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            score: ScoreKind::Cor,
            cor_centered: false,
        }
    }
}

/// Methods, seeds and the optional sweep; bundle and training settings come
/// from the top-level sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub sweep: Option<Sweep>,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            methods: reference_methods(),
            seeds: (0..5).collect(),
            threads: 0,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub bundle: BundleConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub plan: PlanSection,
}

impl CliConfig {
    pub fn experiment_plan(&self) -> ExperimentPlan {
        let mut plan = ExperimentPlan::new(
            self.bundle.clone(),
            self.train.clone(),
            self.plan.methods.clone(),
            self.plan.seeds.clone(),
        );
        plan.sweep = self.plan.sweep.clone();
        plan.threads = self.plan.threads;
        plan
    }

    /// Canonical TOML of the resolved config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Comment line prepended to every output file.
    pub fn header(&self) -> String {
        format!("# config_sha256={}\n", self.sha256())
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` is malformed"));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for (i, p) in parents.iter().enumerate() {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override key `{key}`: `{}` is not a table", parts[..=i].join(".")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads the optional config file, applies overrides and deserializes,
/// naming the offending key on failure.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<CliConfig, String> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| format!("config {}: {e}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    from_table(table)
}

fn from_table(table: toml::Table) -> Result<CliConfig, String> {
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let key = e.path().to_string();
        format!("invalid config key `{key}`: {}", e.into_inner())
    })
}
