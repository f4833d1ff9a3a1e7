//! Experiment configuration: one TOML document covering every stage.
//!
//! Unknown keys are rejected. Every command writes the fully resolved
//! configuration next to its primary output as `<output>.config.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arm::{ArmConfig, Point};
use crate::demos::{default_circle_radii, CIRCLE_CENTER, CIRCLE_STEPS, PICK_LOCATION};
use crate::error::{Error, Result};
use crate::idm::IdmConfig;
use crate::mdn::SampleMode;
use crate::stm::{HeadKind, ScheduleConfig, StmConfig};
use crate::task::TaskKind;
use crate::trajopt::SmoothConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub kind: TaskKind,
    /// Number of demonstrations; defaults to 45 (reacher), 150
    /// (pick-and-place) or one per radius (circle).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub circle_center: Point,
    pub circle_radii: Vec<f64>,
    pub circle_steps: usize,
    pub pick: Point,
}

impl Default for TaskSection {
    fn default() -> Self {
        Self {
            kind: TaskKind::Reacher,
            count: None,
            circle_center: CIRCLE_CENTER,
            circle_radii: default_circle_radii(),
            circle_steps: CIRCLE_STEPS,
            pick: PICK_LOCATION,
        }
    }
}

impl TaskSection {
    pub fn demo_count(&self) -> usize {
        self.count.unwrap_or(match self.kind {
            TaskKind::Reacher => 45,
            TaskKind::PickPlace => 150,
            TaskKind::Circle => self.circle_radii.len(),
        })
    }
}

/// STM settings. Unset fields take the defaults for the configured task
/// (pick-and-place uses the larger network).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StmSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixtures: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_feed: Option<SampleMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub rollouts: usize,
    /// Rollout length; defaults to the protocol length of the task.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            rollouts: crate::eval::DEFAULT_EVAL_EPISODES,
            steps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub arm: ArmConfig,
    pub task: TaskSection,
    pub stm: StmSection,
    /// Auto-conditioning lengths; defaults depend on the task.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    pub trajopt: SmoothConfig,
    pub idm: IdmConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        self.arm.validate()?;
        self.trajopt.validate()?;
        self.idm.validate()?;
        self.stm_config().validate()
    }

    /// STM configuration with the task defaults, the shared schedule and the
    /// global seed applied.
    pub fn stm_config(&self) -> StmConfig {
        let base = match self.task.kind {
            TaskKind::PickPlace => StmConfig::pick_place(),
            TaskKind::Circle => StmConfig::circle(),
            TaskKind::Reacher => StmConfig::default(),
        };
        let s = &self.stm;
        StmConfig {
            layers: s.layers.unwrap_or(base.layers),
            hidden: s.hidden.unwrap_or(base.hidden),
            mixtures: s.mixtures.unwrap_or(base.mixtures),
            head: s.head.unwrap_or(base.head),
            learning_rate: s.learning_rate.unwrap_or(base.learning_rate),
            final_learning_rate: s.final_learning_rate.or(base.final_learning_rate),
            iterations: s.iterations.unwrap_or(base.iterations),
            clip_norm: s.clip_norm.unwrap_or(base.clip_norm),
            schedule: self.schedule.unwrap_or(base.schedule),
            self_feed: s.self_feed.unwrap_or(base.self_feed),
            seed: self.seed,
            normalize: s.normalize.unwrap_or(base.normalize),
        }
    }

    pub fn idm_config(&self) -> IdmConfig {
        IdmConfig {
            seed: self.seed,
            ..self.idm.clone()
        }
    }

    /// Fully resolved document: every optional field filled in.
    pub fn resolved(&self) -> Self {
        let stm = self.stm_config();
        let mut out = self.clone();
        out.task.count = Some(self.task.demo_count());
        out.schedule = Some(stm.schedule);
        out.stm = StmSection {
            layers: Some(stm.layers),
            hidden: Some(stm.hidden),
            mixtures: Some(stm.mixtures),
            head: Some(stm.head),
            learning_rate: Some(stm.learning_rate),
            final_learning_rate: stm.final_learning_rate,
            iterations: Some(stm.iterations),
            clip_norm: Some(stm.clip_norm),
            self_feed: Some(stm.self_feed),
            normalize: Some(stm.normalize),
        };
        out.idm.seed = self.seed;
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved configuration as `<output>.config.toml`.
    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let mut name = output.as_os_str().to_owned();
        name.push(".config.toml");
        let path = PathBuf::from(name);
        std::fs::write(&path, self.resolved().to_toml()?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.stm_config().hidden, 64);
        assert_eq!(cfg.stm_config().schedule, ScheduleConfig { u: 3, v: 15 });
        assert_eq!(cfg.task.demo_count(), 45);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 3").is_err());
        assert!(ExperimentConfig::from_toml("[stm]\nhiden = 3").is_err());
        assert!(ExperimentConfig::from_toml("[arm]\nlinks = [1.0]").is_err());
    }

    #[test]
    fn task_defaults_and_overrides() {
        let cfg = ExperimentConfig::from_toml("seed = 7\n[task]\nkind = \"pick_place\"\n[stm]\nmixtures = 4\n[schedule]\nu = 2\nv = 3\n").unwrap();
        let stm = cfg.stm_config();
        assert_eq!((stm.hidden, stm.mixtures, stm.iterations), (128, 4, 30_000));
        assert_eq!(stm.schedule, ScheduleConfig { u: 2, v: 3 });
        assert_eq!(stm.seed, 7);
        assert_eq!(cfg.task.demo_count(), 150);
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = ExperimentConfig::from_toml("[task]\nkind = \"circle\"\n[trajopt]\ngamma = 2.0\n").unwrap();
        assert_eq!(cfg.stm_config().schedule, ScheduleConfig::default());
        let text = cfg.resolved().to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg.resolved());
        assert_eq!(back.stm_config(), cfg.stm_config());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("[idm]\nsubsteps = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[schedule]\nu = 0\nv = 0\n").is_err());
    }
}
