//! Datasets, learners, metrics and the cross-validation objective.

mod dataset;
mod folds;
pub mod learners;
pub mod metrics;

pub use dataset::{generate_dataset, Dataset, DatasetKind, GeneratorSpec, TaskKind};
pub use folds::{kfold_split, Fold};
pub use learners::{family_task, train_evaluate, LearnerSpec};
pub use metrics::evaluate_metric;

use crate::query::{Direction, Measure};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MlError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("cannot split {n} samples into {k} folds")]
    InvalidFolds { n: usize, k: usize },
    #[error("singular linear system")]
    SingularSystem,
    #[error("unknown learner family `{0}`")]
    UnknownFamily(String),
    #[error("{family}: invalid `{param}`: {reason}")]
    InvalidHyperparameter { family: String, param: String, reason: String },
    #[error("measure `{measure}` does not apply to {task} data")]
    WrongMeasure { measure: &'static str, task: &'static str },
    #[error("need {needed} samples, have {available}")]
    TooFewSamples { needed: usize, available: usize },
}

/// Measure plus direction; `oriented` turns a metric into a loss to minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub measure: Measure,
    pub direction: Direction,
}

impl LossSpec {
    pub fn new(measure: Measure, direction: Direction) -> Self {
        Self { measure, direction }
    }

    pub fn oriented(&self, metric: f64) -> f64 {
        match self.direction {
            Direction::Minimize => metric,
            Direction::Maximize => -metric,
        }
    }

    pub fn metric_of(&self, loss: f64) -> f64 {
        self.oriented(loss)
    }
}

/// Mean oriented loss over a seeded k-fold split.
pub fn cross_val_loss(spec: &LearnerSpec, ds: &Dataset, k: usize, seed: u64, loss: LossSpec) -> Result<f64, MlError> {
    let folds = kfold_split(ds.len(), k, seed)?;
    cross_val_loss_with_folds(spec, ds, &folds, seed, loss)
}

/// Same as [`cross_val_loss`] over explicit folds. Fold `i` fits with a seed
/// derived from `seed` and `i`.
pub fn cross_val_loss_with_folds(
    spec: &LearnerSpec,
    ds: &Dataset,
    folds: &[Fold],
    seed: u64,
    loss: LossSpec,
) -> Result<f64, MlError> {
    if !ds.supports(loss.measure) {
        return Err(MlError::WrongMeasure {
            measure: loss.measure.as_str(),
            task: ds.task.as_str(),
        });
    }
    if folds.is_empty() {
        return Err(MlError::InvalidFolds { n: ds.len(), k: 0 });
    }
    let mut total = 0.0;
    for (i, fold) in folds.iter().enumerate() {
        let fold_seed = crate::seed::derive_seed(seed, &["fold", &i.to_string()]);
        let pred = train_evaluate(spec, ds, &fold.train, &fold.valid, fold_seed)?;
        let truth: Vec<f64> = fold.valid.iter().map(|&j| ds.targets[j]).collect();
        total += loss.oriented(evaluate_metric(loss.measure, &truth, &pred)?);
    }
    Ok(total / folds.len() as f64)
}
