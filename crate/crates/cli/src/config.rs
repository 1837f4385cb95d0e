use std::path::{Path, PathBuf};

use courtplan_core::adversary::DefenseKind;
use courtplan_core::diffusion::{ScheduleKind, TrainConfig};
use courtplan_core::evalkit::SyntheticSpec;
use courtplan_core::nn::ArchConfig;
use courtplan_core::planner::{DEFAULT_GRAD_CLIP, DEFAULT_X0_BOUND};
use courtplan_core::RenderStyle;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a run can be configured with. Every field has a default and
/// unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub plan: PlanSection,
    pub adversary: AdversarySection,
    pub eval: EvalSection,
    pub render: RenderStyle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory of `.motion.json` / `.pbp.csv` pairs.
    pub raw_dir: Option<PathBuf>,
    /// Ingest output (possession indexes and frame stores).
    pub games_dir: Option<PathBuf>,
    pub dataset_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub horizon: usize,
    pub n_steps: usize,
    pub schedule: ScheduleKind,
    pub base_width: usize,
    pub dim_mults: Vec<usize>,
    pub blocks_per_level: usize,
    pub kernel: usize,
    pub groups: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = ArchConfig::default();
        ModelConfig {
            horizon: 1024,
            n_steps: 20,
            schedule: ScheduleKind::Cosine,
            base_width: a.base_width,
            dim_mults: a.dim_mults,
            blocks_per_level: a.blocks_per_level,
            kernel: a.kernel,
            groups: a.groups,
        }
    }
}

impl ModelConfig {
    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            base_width: self.base_width,
            dim_mults: self.dim_mults.clone(),
            blocks_per_level: self.blocks_per_level,
            kernel: self.kernel,
            groups: self.groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub alpha: f64,
    pub batch: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub x0_bound: Option<f64>,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            alpha: 0.1,
            batch: 16,
            seed: 0,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
            x0_bound: Some(DEFAULT_X0_BOUND),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarySection {
    pub policy: DefenseKind,
    /// Frames executed per planning call.
    pub m: usize,
    pub total_len: usize,
    pub max_speed_ftps: f64,
    /// Basket the offense attacks: 0 left, 1 right.
    pub attack_side: usize,
}

impl Default for AdversarySection {
    fn default() -> Self {
        AdversarySection {
            policy: DefenseKind::ManToMan,
            m: 25,
            total_len: 100,
            max_speed_ftps: courtplan_core::adversary::DEFAULT_MAX_SPEED_FTPS,
            attack_side: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_runs: usize,
    pub alphas: Vec<f64>,
    /// Start states taken from the first rows of this many dataset examples.
    pub n_starts: usize,
    pub random_walk_std_ft: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_runs: 5,
            alphas: vec![0.0, 0.01, 0.1, 1.0, 10.0],
            n_starts: 16,
            random_walk_std_ft: 1.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_documented_training_setup() {
        let c = RunConfig::default();
        assert_eq!(c.train.lr, 2e-5);
        assert_eq!(c.train.batch, 512);
        assert_eq!(c.train.steps, 245_000);
        assert_eq!(c.model.n_steps, 20);
        assert_eq!(c.model.horizon, 1024);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.contains("learning_rate"), "{err}");
        let err = RunConfig::parse("[bogus]\n").unwrap_err();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::parse("[model]\nhorizon = 64\n[plan]\nalpha = 1.0\n").unwrap();
        assert_eq!(c.model.horizon, 64);
        assert_eq!(c.model.n_steps, 20);
        assert_eq!(c.plan.alpha, 1.0);
        assert_eq!(c.plan.batch, PlanSection::default().batch);
    }

    #[test]
    fn shipped_desk_config_parses() {
        let text = include_str!("../../../configs/desk.toml");
        let c = RunConfig::parse(text).unwrap();
        assert!(c.model.arch().validate().is_ok());
    }
}
