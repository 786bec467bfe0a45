use std::fs;
use std::path::{Path, PathBuf};

use aann_core::detector::PhenomenonKind;
use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Named corpus manipulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Remove every utterance holding an AANN.
    NoAann,
    /// Rewrite every AANN into article-numeral-adjective-noun order.
    Anan,
    /// Rewrite every AANN into numeral-adjective-article-noun order.
    Naan,
    /// Remove AANNs whose determiner is not indefinite ("the beautiful five days").
    NoDtAnn,
    /// Remove indefinite articles governing plural nouns ("a few plums").
    NoIndefPlural,
    /// Remove plural measure phrases agreeing with singular verbs.
    NoMeasureSingular,
    /// Remove a+adjective utterances until they no longer outnumber a+numeral.
    Balance,
    /// Remove random phenomenon-free utterances.
    Control,
    /// Keep only the high slot-variability half of the AANNs.
    VariabilityHigh,
    /// Keep only the low slot-variability half of the AANNs.
    VariabilityLow,
    /// Remove utterances matching the kinds given with `--kinds`.
    Custom,
}

impl Condition {
    /// Whether AANNs may be kept alongside this manipulation.
    pub fn allows_keep_aann(self) -> bool {
        matches!(
            self,
            Condition::NoDtAnn
                | Condition::NoIndefPlural
                | Condition::NoMeasureSingular
                | Condition::Balance
                | Condition::Control
                | Condition::Custom
        )
    }
}

/// Ablation settings as read from a TOML or JSON file. Command-line flags
/// take precedence over every field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub condition: Option<Condition>,
    #[serde(default)]
    pub kinds: Vec<PhenomenonKind>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub keep_aann: Option<bool>,
    pub control_tokens: Option<u64>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?,
            Some("toml") => toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(UsageError(format!("config {} must end in .toml or .json", path.display())).into());
            }
        };
        Ok(parsed)
    }
}

/// Fully resolved ablation settings; echoed next to every ablated corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationSettings {
    pub inputs: Vec<PathBuf>,
    pub condition: Condition,
    pub kinds: Vec<PhenomenonKind>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub keep_aann: bool,
    pub control_tokens: Option<u64>,
}

/// Written as `run_config.json` by every subcommand.
#[derive(Debug, Serialize)]
pub struct RunEcho<'a, T: Serialize> {
    pub command: &'a str,
    pub tool_version: &'a str,
    pub config: &'a T,
}

pub fn write_echo<T: Serialize>(out_dir: &Path, command: &str, config: &T) -> Result<()> {
    let echo = RunEcho {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
    };
    let mut text = serde_json::to_string_pretty(&echo)?;
    text.push('\n');
    let path = out_dir.join("run_config.json");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
