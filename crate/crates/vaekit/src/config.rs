//! Declarative experiment configuration: one TOML file with `dataset`,
//! `model`, `objective`, and `train` sections plus an output directory.
//! Unknown keys are rejected, the whole file is validated before any work
//! starts, and every command writes the resolved config it actually used
//! into its output directory.

use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    generate_synthetic, load_dsprites, load_labeled_folder, FactorDataset, LabeledImageSet,
};
use crate::distributions::LikelihoodSpec;
use crate::models::ArchitectureConfig;
use crate::objectives::{ObjectiveConfig, ObjectiveKind, ScheduleSpec};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Dataset selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    /// Procedural squares-on-canvas factor dataset.
    Synthetic {
        side: usize,
        factor_sizes: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
    /// The published binary-sprites archive.
    Dsprites { path: PathBuf },
    /// Directory-per-class labeled images.
    LabeledFolder { path: PathBuf, image_side: usize },
}

impl DatasetSection {
    /// Image side this dataset will produce.
    pub fn image_side(&self) -> Option<usize> {
        match self {
            DatasetSection::Synthetic { side, .. } => Some(*side),
            DatasetSection::Dsprites { .. } => Some(64),
            DatasetSection::LabeledFolder { image_side, .. } => Some(*image_side),
        }
    }

    pub fn load(&self) -> Result<LoadedDataset> {
        match self {
            DatasetSection::Synthetic {
                side,
                factor_sizes,
                seed,
            } => Ok(LoadedDataset::Factor(generate_synthetic(*side, factor_sizes, *seed)?)),
            DatasetSection::Dsprites { path } => Ok(LoadedDataset::Factor(load_dsprites(path)?)),
            DatasetSection::LabeledFolder { path, image_side } => {
                Ok(LoadedDataset::Labeled(load_labeled_folder(path, *image_side)?))
            }
        }
    }
}

/// A dataset after loading.
pub enum LoadedDataset {
    Factor(FactorDataset),
    Labeled(LabeledImageSet),
}

impl LoadedDataset {
    pub fn images(&self) -> &Array4<f32> {
        match self {
            LoadedDataset::Factor(ds) => &ds.images,
            LoadedDataset::Labeled(ds) => &ds.images,
        }
    }

    pub fn len(&self) -> usize {
        self.images().dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The factor dataset, or an error explaining the requirement.
    pub fn require_factors(&self) -> Result<&FactorDataset> {
        match self {
            LoadedDataset::Factor(ds) => Ok(ds),
            LoadedDataset::Labeled(_) => Err(Error::Config(
                "this command needs ground-truth factors; the configured dataset is labeled-only"
                    .into(),
            )),
        }
    }

    /// The labeled dataset, or an error explaining the requirement.
    pub fn require_labels(&self) -> Result<&LabeledImageSet> {
        match self {
            LoadedDataset::Labeled(ds) => Ok(ds),
            LoadedDataset::Factor(_) => Err(Error::Config(
                "this command needs a labeled dataset; the configured dataset is a factor grid"
                    .into(),
            )),
        }
    }
}

/// Decoder likelihood family, spelled for config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodFamily {
    #[default]
    Bernoulli,
    GaussianFixedVariance,
}

/// The `objective` config section. Unset hyperparameters fall back to the
/// documented defaults when the objective kind does not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: ObjectiveKind,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub c_schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub beta_schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub likelihood: LikelihoodFamily,
    #[serde(default)]
    pub gaussian_variance: Option<f64>,
}

impl ObjectiveSection {
    pub fn likelihood_spec(&self) -> Result<LikelihoodSpec> {
        let spec = match self.likelihood {
            LikelihoodFamily::Bernoulli => LikelihoodSpec::Bernoulli,
            LikelihoodFamily::GaussianFixedVariance => LikelihoodSpec::GaussianFixedVariance {
                variance: self.gaussian_variance.unwrap_or(1.0),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config(&self) -> Result<ObjectiveConfig> {
        if let Some(beta) = self.beta {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::Config(format!(
                    "objective.beta must be a nonnegative real, got {beta}"
                )));
            }
        }
        if let Some(gamma) = self.gamma {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::Config(format!(
                    "objective.gamma must be a nonnegative real, got {gamma}"
                )));
            }
        }
        let config = ObjectiveConfig {
            kind: self.kind,
            beta: self.beta.unwrap_or(1.0),
            gamma: self.gamma.unwrap_or(100.0),
            c_schedule: self.c_schedule,
            beta_schedule: self.beta_schedule,
            likelihood: self.likelihood_spec()?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub model: ArchitectureConfig,
    pub objective: ObjectiveSection,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    /// Validates every section and their cross-constraints without loading
    /// any data.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.objective.to_config()?;
        self.train.validate()?;
        if let Some(side) = self.dataset.image_side() {
            if side != self.model.image_side {
                return Err(Error::Config(format!(
                    "dataset image side {side} does not match model.image_side {}",
                    self.model.image_side
                )));
            }
        }
        if let DatasetSection::Synthetic { factor_sizes, .. } = &self.dataset {
            if factor_sizes.len() < 2 || factor_sizes.len() > 4 {
                return Err(Error::Config(
                    "dataset.factor_sizes must list 2 to 4 factors".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Refuses to reuse a non-empty output directory unless forced, then creates
/// it.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes the resolved config into the output directory.
pub fn write_resolved_config(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("resolved_config.toml"), config.to_toml_string()?)?;
    Ok(())
}
