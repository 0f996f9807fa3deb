//! Training: Adam, the epoch loop, k-fold cross-validation, and the
//! pmf-averaging ensemble.

mod adam;
mod run;

pub use adam::{adam_step, AdamState};
pub use run::{
    cross_validate, ensemble_predict, ensemble_rankings, evaluate, mean_pmfs, popularity_top_k,
    train_fold, CrossValidation, Ensemble, EpochRecord, EvalReport, FoldOutcome, FoldResult,
};

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::objective::{ObjectiveError, WeightMode};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("fold {fold} diverged at epoch {epoch}, batch {batch}: {what}")]
    Diverged { fold: usize, epoch: usize, batch: usize, what: String },
    #[error("non-finite gradient in `{tensor}` at entry {index} (epoch gradient check)")]
    BadGradient { tensor: String, index: usize },
    #[error("the ensemble has no members")]
    EmptyEnsemble,
    #[error("ensemble members disagree: {0}")]
    EnsembleMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which steps the loss covers: every step of every session, or only each
/// session's final valid step. Many-to-one is the *masked restriction* of
/// the same forward pass — both modes share every parameter and every
/// cell evaluation, so the contrast between them is purely the training
/// signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelType {
    ManyToMany,
    ManyToOne,
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelType::ManyToMany => "m2m",
            ModelType::ManyToOne => "m2o",
        })
    }
}

impl FromStr for ModelType {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "m2m" | "many_to_many" => Ok(ModelType::ManyToMany),
            "m2o" | "many_to_one" => Ok(ModelType::ManyToOne),
            other => Err(TrainError::InvalidConfig(format!("unknown model type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub model_type: ModelType,
    pub weight_mode: WeightMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 50,
            folds: 10,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            model_type: ModelType::ManyToMany,
            weight_mode: WeightMode::Weighted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad(format!("adam_epsilon must be positive, got {}", self.adam_epsilon));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "learning_rate={} batch_size={} epochs={} folds={} seed={} beta1={} beta2={} adam_epsilon={} model_type={} weight_mode={}",
            self.learning_rate,
            self.batch_size,
            self.epochs,
            self.folds,
            self.seed,
            self.beta1,
            self.beta2,
            self.adam_epsilon,
            self.model_type,
            match self.weight_mode {
                WeightMode::Weighted => "weighted",
                WeightMode::Unweighted => "unweighted",
            },
        )
    }

    /// Applies one `key=value` setting; unknown keys are reported so a
    /// shared config file can route keys to the right config.
    pub fn set_field(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad =
            |key: &str, value: &str| TrainError::InvalidConfig(format!("bad value `{value}` for `{key}`"));
        match key {
            "learning_rate" => {
                self.learning_rate = value.parse().map_err(|_| bad(key, value))?;
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key, value))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key, value))?,
            "folds" => self.folds = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "beta1" => self.beta1 = value.parse().map_err(|_| bad(key, value))?,
            "beta2" => self.beta2 = value.parse().map_err(|_| bad(key, value))?,
            "adam_epsilon" => self.adam_epsilon = value.parse().map_err(|_| bad(key, value))?,
            "model_type" => self.model_type = value.parse()?,
            "weight_mode" => {
                self.weight_mode = match value {
                    "weighted" | "on" => WeightMode::Weighted,
                    "unweighted" | "off" => WeightMode::Unweighted,
                    _ => return Err(bad(key, value)),
                };
            }
            other => {
                return Err(TrainError::InvalidConfig(format!("unknown train config key `{other}`")))
            }
        }
        Ok(())
    }
}
