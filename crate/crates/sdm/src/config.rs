//! JSON run configuration.
//!
//! Field names follow [`ExperimentConfig`]; every key is optional and defaults
//! to the values in [`ExperimentConfig::default`]. Unknown keys are errors.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use sdm_core::learner::WeightInit;
use sdm_core::losses::Reduction;
use sdm_core::{ExperimentConfig, Margin, MarginVariant, Strategy, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Margin,
    DynamicMargin,
}

impl LossName {
    pub fn variant(self) -> MarginVariant {
        match self {
            LossName::Margin => MarginVariant::Margin,
            LossName::DynamicMargin => MarginVariant::DynamicMargin,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossName::Margin => "margin",
            LossName::DynamicMargin => "dynamic_margin",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [LossName::Margin, LossName::DynamicMargin]
            .into_iter()
            .find(|l| l.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionName {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class_source: usize,
    pub per_class_target: usize,
    pub per_class_test: usize,
    pub cluster_std: f64,
    pub class_separation: f64,
    pub shift_magnitude: f64,
    pub rotation_angle: f64,
    /// Falls back to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let p = SyntheticConfig::shifted_preset();
        Self {
            classes: p.classes,
            dim: p.dim,
            per_class_source: p.per_class_source,
            per_class_target: p.per_class_target,
            per_class_test: p.per_class_test,
            cluster_std: p.cluster_std,
            class_separation: p.class_separation,
            shift_magnitude: p.shift_magnitude,
            rotation_angle: p.rotation_angle,
            seed: None,
        }
    }
}

impl SyntheticSpec {
    pub fn to_config(&self, run_seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            dim: self.dim,
            per_class_source: self.per_class_source,
            per_class_target: self.per_class_target,
            per_class_test: self.per_class_test,
            cluster_std: self.cluster_std,
            class_separation: self.class_separation,
            shift_magnitude: self.shift_magnitude,
            rotation_angle: self.rotation_angle,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub loss: LossName,
    pub ce_weight: f64,
    pub m: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub initial_epochs: usize,
    pub epochs_between_samplings: usize,
    pub budget_fraction: f64,
    pub step_fraction: f64,
    pub strategy: String,
    pub reduction: ReductionName,
    /// Standard deviation of a Gaussian weight initialization; zeros when
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    pub dataset: DatasetSpec,
    pub seed: u64,
}

/// The tagged dataset enum is buffered by serde, which hides the path inside
/// it; re-parse a synthetic block on its own to recover the full path.
fn synthetic_dataset_error(text: &str) -> Option<anyhow::Error> {
    let root: serde_json::Value = serde_json::from_str(text).ok()?;
    let mut block = root.get("dataset")?.as_object()?.clone();
    if block.remove("kind")?.as_str()? != "synthetic" {
        return None;
    }
    let err = serde_path_to_error::deserialize::<_, SyntheticSpec>(serde_json::Value::Object(block)).err()?;
    let path = err.path().to_string();
    Some(anyhow::anyhow!("config at `dataset.{path}`: {}", err.into_inner()))
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            loss: LossName::Margin,
            ce_weight: e.ce_weight,
            m: e.margin.get(),
            lambda: e.lambda,
            lr: e.lr,
            batch_size: e.batch_size,
            initial_epochs: e.initial_epochs,
            epochs_between_samplings: e.epochs_between_samplings,
            budget_fraction: e.budget_fraction,
            step_fraction: e.step_fraction,
            strategy: e.strategy.name().to_string(),
            reduction: ReductionName::Sum,
            init_std: None,
            dataset: DatasetSpec::default(),
            seed: e.seed,
        }
    }
}

pub fn valid_strategy_names() -> String {
    Strategy::ALL.map(Strategy::name).join(", ")
}

pub fn parse_strategy(name: &str) -> anyhow::Result<Strategy> {
    match Strategy::from_name(name) {
        Some(s) => Ok(s),
        None => bail!(
            "unknown strategy `{name}` (valid: {})",
            valid_strategy_names()
        ),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "dataset" {
                if let Some(inner) = synthetic_dataset_error(text) {
                    return inner;
                }
            }
            anyhow::anyhow!("config at `{path}`: {}", e.into_inner())
        })?;
        cfg.experiment()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The core configuration, validated.
    pub fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let margin = Margin::new(self.m).map_err(|e| anyhow::anyhow!("config at `m`: {e}"))?;
        let cfg = ExperimentConfig {
            loss: self.loss.variant(),
            ce_weight: self.ce_weight,
            margin,
            lambda: self.lambda,
            lr: self.lr,
            batch_size: self.batch_size,
            initial_epochs: self.initial_epochs,
            epochs_between_samplings: self.epochs_between_samplings,
            budget_fraction: self.budget_fraction,
            step_fraction: self.step_fraction,
            strategy: parse_strategy(&self.strategy).context("config at `strategy`")?,
            reduction: match self.reduction {
                ReductionName::Sum => Reduction::Sum,
                ReductionName::Mean => Reduction::Mean,
            },
            init: match self.init_std {
                None => WeightInit::Zeros,
                Some(std) => WeightInit::Gaussian { std },
            },
            seed: self.seed,
        };
        cfg.validate().map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        Ok(cfg)
    }

    /// Copy with the dataset seed pinned, so the snapshot alone reproduces
    /// the run.
    pub fn pinned(&self) -> Self {
        let mut out = self.clone();
        if let DatasetSpec::Synthetic(spec) = &mut out.dataset {
            spec.seed.get_or_insert(self.seed);
        }
        out
    }
}
