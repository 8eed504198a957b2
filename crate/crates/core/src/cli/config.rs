//! Run configuration: a TOML file naming a scenario preset plus optional
//! overrides. Unknown keys are rejected everywhere and the seed is mandatory.
//!
//! ```toml
//! seed = 7
//! preset = "reentry_dl"
//! receiver = "baseline"
//!
//! [attacker]
//! platform = "RQ4"
//! output_gain_db = -25.0
//!
//! [scenario.geometry]
//! d4_km = 8.74
//!
//! [sweep]
//! template = "output_gain"
//! grid = [-45.0, -35.0, -25.0]
//! seeds = 10
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::receiver::ReceiverProfile;
use crate::scenario::{
    attack_preset_gain, AttackerPlatform, ExperimentTemplate, Phase, PlatformKind, ScenarioSpec,
    SweepSpec,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDef {
    pub template: ExperimentTemplate,
    pub grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttacker {
    platform: PlatformKind,
    output_gain_db: Option<f64>,
    input_gain_db: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    preset: String,
    receiver: Option<ReceiverProfile>,
    attacker: Option<RawAttacker>,
    scenario: Option<toml::Table>,
    sweep: Option<SweepDef>,
    out: Option<PathBuf>,
    formats: Option<Vec<Format>>,
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub receiver: ReceiverProfile,
    pub sweep: Option<SweepDef>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub formats: Vec<Format>,
}

impl RunConfig {
    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let def = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
        Ok(SweepSpec {
            template: def.template,
            grid: def.grid.clone(),
            base: self.scenario.clone(),
            receiver: self.receiver,
            seeds: def.seeds,
        })
    }
}

/// Phase named by a preset.
pub fn preset_phase(name: &str) -> Result<Phase> {
    match name {
        "launch_dl" => Ok(Phase::LaunchDl),
        "reentry_ul" => Ok(Phase::ReentryUl),
        "reentry_dl" => Ok(Phase::ReentryDl),
        other => Err(Error::Config(format!(
            "unknown preset `{other}` (expected launch_dl, reentry_ul or reentry_dl)"
        ))),
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse a configuration from TOML text. `seed_override` takes precedence over
/// the file's seed.
pub fn parse_config(text: &str, seed_override: Option<u64>) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let seed = seed_override
        .or(raw.seed)
        .ok_or_else(|| Error::Config("missing `seed` (no implicit randomness)".into()))?;
    let phase = preset_phase(&raw.preset)?;
    let platform = raw.attacker.as_ref().map_or(PlatformKind::None, |a| a.platform);
    let mut spec = ScenarioSpec::preset(phase, platform, seed);
    if let Some(a) = &raw.attacker {
        if a.platform != PlatformKind::None {
            spec.attacker = AttackerPlatform::new(
                a.platform,
                a.output_gain_db.unwrap_or(attack_preset_gain(phase)),
                a.input_gain_db.unwrap_or(spec.attacker.input_gain_db),
            );
        }
    }
    if let Some(over) = raw.scenario {
        for key in ["phase", "seed", "attacker"] {
            if over.contains_key(key) {
                return Err(Error::Config(format!(
                    "`scenario.{key}` is set through the top-level config, not [scenario]"
                )));
            }
        }
        let mut table = toml::Table::try_from(&spec).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, over);
        spec = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("[scenario]: {}", e.message())))?;
    }
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = &raw.sweep {
        if s.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if s.seeds == 0 {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
    }
    Ok(RunConfig {
        scenario: spec,
        receiver: raw.receiver.unwrap_or(ReceiverProfile::Baseline),
        sweep: raw.sweep,
        seed,
        out_dir: raw.out.unwrap_or_else(|| PathBuf::from("out")),
        formats: raw.formats.unwrap_or_else(|| vec![Format::Csv, Format::Json]),
    })
}

/// Read and resolve a configuration file.
pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, seed_override).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
