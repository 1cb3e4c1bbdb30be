//! Run configuration: one TOML tree covering every command, with dotted
//! `key=value` overrides applied on top of the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{MtfProfile, SynthOptions, DEFAULT_NORM_MAX};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::metrics::{DLambdaVariant, ResolutionMode};
use crate::network::{NetworkConfig, Variant};
use crate::sampling::SampleOptions;
use crate::training::TrainConfig;

/// Environment variable naming the default data directory.
pub const DATA_ROOT_ENV: &str = "SSDIFF_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory that relative dataset paths resolve against; empty means
    /// `$SSDIFF_DATA_ROOT`, falling back to `data`.
    pub root: String,
    /// Training container (reduced resolution, with `gt`).
    pub train: String,
    /// Container sampled and evaluated by `sample` / `eval`.
    pub test: String,
    /// Raw value mapped to 1.0 when reading and writing containers.
    pub norm_max: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: String::new(),
            train: "train.h5".into(),
            test: "train.h5".into(),
            norm_max: DEFAULT_NORM_MAX,
        }
    }
}

impl DataConfig {
    pub fn root_dir(&self) -> PathBuf {
        if !self.root.is_empty() {
            return PathBuf::from(&self.root);
        }
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn resolve(&self, name: &str) -> PathBuf {
        let p = Path::new(name);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root_dir().join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Reduced-resolution scenes written to `train.h5`.
    pub scenes: usize,
    /// Full-resolution scenes written to `full.h5` (0 skips the file).
    pub full_scenes: usize,
    pub bands: usize,
    /// Reference (PAN-grid) size of reduced scenes; full scenes use the same
    /// MS grid size times four on the PAN side.
    pub size: usize,
    pub seed: u64,
    pub options: SynthOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenes: 16,
            full_scenes: 0,
            bands: 8,
            size: 64,
            seed: 0,
            options: SynthOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end).map_err(|e| Error::Config {
            key: "schedule".into(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: ResolutionMode,
    pub d_lambda: DLambdaVariant,
    /// Sensor MTF used by the full-resolution indices; `None` picks the
    /// default for the band count.
    pub profile: Option<MtfProfile>,
    /// Write RGB previews and error maps.
    pub figures: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: ResolutionMode::Reduced,
            d_lambda: DLambdaVariant::Classic,
            profile: None,
            figures: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
    /// Trailing iterations averaged into each variant's final loss.
    pub tail: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::V3, Variant::V4, Variant::V5],
            tail: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub network: NetworkConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub sample: SampleOptions,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            network: NetworkConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            sample: SampleOptions::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

fn config_err(key: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

/// Turns a deserialization failure into a keyed error: `unknown field`
/// messages name the field, everything else is attributed to `fallback`.
fn keyed(e: toml::de::Error, fallback: &str) -> Error {
    let msg = e.message().to_string();
    let key = msg
        .strip_prefix("unknown field `")
        .and_then(|rest| rest.split('`').next())
        .map(str::to_string)
        .unwrap_or_else(|| fallback.to_string());
    config_err(key, msg.lines().next().unwrap_or_default().to_string())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (so `variant=V4` needs no quotes).
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `table.a.b.c = value` for the dotted key `a.b.c`, creating
/// intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(assignment, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(key, "empty path segment"));
    }
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(key, format!("`{p}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads an optional file, applies overrides in order and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| config_err("--config", format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| keyed(e, "config"))?;
        // Check the file alone first so its errors are not blamed on an
        // override, then each override in turn.
        let _: RunConfig = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e| keyed(e, "config"))?;
        for o in overrides {
            apply_override(&mut table, o)?;
            let key = o.split_once('=').map(|(k, _)| k.trim()).unwrap_or(o);
            let _: RunConfig = toml::Value::Table(table.clone())
                .try_into()
                .map_err(|e| config_err(key, e.message().lines().next().unwrap_or_default().to_string()))?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e| keyed(e, "config"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets every seed in the tree.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
        self.sample.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.schedule.build()?;
        if !matches!(self.synth.bands, 4 | 8) {
            return Err(config_err("synth.bands", format!("{} unsupported (4 or 8)", self.synth.bands)));
        }
        if self.synth.size == 0 || self.synth.size % 4 != 0 {
            return Err(config_err("synth.size", format!("{} must be a positive multiple of 4", self.synth.size)));
        }
        if !(self.data.norm_max > 0.0) {
            return Err(config_err("data.norm_max", "must be positive"));
        }
        if self.sample.steps == 0 || self.sample.steps > self.schedule.steps {
            return Err(config_err(
                "sample.steps",
                format!("{} not in 1..={}", self.sample.steps, self.schedule.steps),
            ));
        }
        if self.sample.chunk == 0 {
            return Err(config_err("sample.chunk", "must be positive"));
        }
        if let Some(p) = &self.eval.profile {
            p.validate().map_err(|e| config_err("eval.profile", e.to_string()))?;
        }
        if self.ablate.variants.is_empty() {
            return Err(config_err("ablate.variants", "need at least one variant"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Writes the resolved configuration so a run can be replayed from it.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?)?;
        Ok(path)
    }

    pub fn mtf_profile(&self, bands: usize) -> MtfProfile {
        self.eval.profile.clone().unwrap_or_else(|| MtfProfile::for_bands(bands))
    }
}
