//! Cross-validated training of the regression head.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::regressor::{mse_and_gradient, predict, Activation, RegressorParams, DEFAULT_HIDDEN};
use super::ModelError;
use crate::dataset::FoldPlan;
use crate::subjective::SubjectiveTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Standardize inputs with training-fold mean and std.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            standardize: true,
        }
    }
}

/// Per-dimension affine input normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit(inputs: &[Vec<f64>]) -> Self {
        let dim = inputs[0].len();
        let n = inputs.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in inputs {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for x in inputs {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldModel {
    pub fold: usize,
    pub params: RegressorParams,
    pub standardizer: Standardizer,
    /// Training MSE before each update, one entry per epoch, then the final loss.
    pub loss_history: Vec<f64>,
    pub train_size: usize,
}

impl FoldModel {
    pub fn predict(&self, fused: &[f64]) -> Result<f64, ModelError> {
        predict(&self.standardizer.apply(fused), &self.params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub config: TrainConfig,
    pub plan: FoldPlan,
    pub folds: Vec<FoldModel>,
}

impl TrainedModel {
    pub const FORMAT_VERSION: u32 = 1;

    /// Held-out prediction: the model of the fold holding `source_id`, or the
    /// mean over all fold models for sources outside the plan.
    pub fn predict(&self, source_id: Option<&str>, fused: &[f64]) -> Result<f64, ModelError> {
        match source_id.and_then(|s| self.plan.fold_of(s)) {
            Some(f) => self.folds[f].predict(fused),
            None => {
                let sum = self
                    .folds
                    .iter()
                    .map(|m| m.predict(fused))
                    .sum::<Result<f64, _>>()?;
                Ok(sum / self.folds.len() as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: TrainedModel,
    /// Held-out predictions per fold.
    pub predictions: Vec<BTreeMap<String, f64>>,
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64)
        .rotate_left(17)
}

/// Full-batch Adam on the MSE objective.
pub fn fit_regressor(
    inputs: &[Vec<f64>],
    targets: &[f64],
    config: &TrainConfig,
    seed: u64,
) -> Result<(RegressorParams, Standardizer, Vec<f64>), ModelError> {
    if inputs.is_empty() {
        return Err(ModelError::Shape("no training samples".into()));
    }
    let dim = inputs[0].len();
    if dim == 0 {
        return Err(ModelError::Shape("zero-dimensional features".into()));
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(ModelError::Shape(format!(
            "mixed feature dimensions {dim} and {}",
            bad.len()
        )));
    }
    if inputs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training input".into()));
    }
    let standardizer = if config.standardize {
        Standardizer::fit(inputs)
    } else {
        Standardizer::identity(dim)
    };
    let xs: Vec<Vec<f64>> = inputs.iter().map(|x| standardizer.apply(x)).collect();
    let mut params = RegressorParams::init(dim, config.hidden, Activation::Relu, seed)?;
    // Start the output bias at the target mean.
    params.b2 = targets.iter().sum::<f64>() / targets.len() as f64;

    let mut theta = params.flatten();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut history = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..config.epochs {
        let (loss, grad) = mse_and_gradient(&params, &xs, targets)?;
        if !loss.is_finite() {
            return Err(ModelError::Diverged {
                epoch,
                message: format!("loss = {loss}"),
            });
        }
        history.push(loss);
        let t = (epoch + 1) as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        for i in 0..theta.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            theta[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + config.epsilon);
        }
        params.unflatten(&theta);
    }
    let (final_loss, _) = mse_and_gradient(&params, &xs, targets)?;
    if !final_loss.is_finite() {
        return Err(ModelError::Diverged {
            epoch: config.epochs,
            message: format!("loss = {final_loss}"),
        });
    }
    history.push(final_loss);
    Ok((params, standardizer, history))
}

/// Train one regressor per fold on the other folds and predict the held-out fold.
///
/// `features` maps stimulus_id to its fused vector, `sources` maps
/// stimulus_id to source_id. Every stimulus in `table` must have both.
pub fn train(
    features: &BTreeMap<String, Vec<f64>>,
    sources: &BTreeMap<String, String>,
    table: &SubjectiveTable,
    plan: &FoldPlan,
    config: &TrainConfig,
) -> Result<TrainOutput, ModelError> {
    plan.check().map_err(|e| ModelError::Coverage(e.to_string()))?;
    let missing: Vec<&String> = table.rows.keys().filter(|id| !features.contains_key(*id)).collect();
    if !missing.is_empty() {
        return Err(ModelError::Coverage(format!(
            "no features for {} stimuli: {:?}",
            missing.len(),
            missing.iter().take(20).collect::<Vec<_>>()
        )));
    }

    let mut members: Vec<Vec<&String>> = vec![Vec::new(); plan.k];
    for id in table.rows.keys() {
        let source = sources
            .get(id)
            .ok_or_else(|| ModelError::Coverage(format!("no source_id for stimulus `{id}`")))?;
        let fold = plan
            .fold_of(source)
            .ok_or_else(|| ModelError::Coverage(format!("source `{source}` is not in the fold plan")))?;
        members[fold].push(id);
    }
    if let Some(f) = members.iter().position(Vec::is_empty) {
        return Err(ModelError::Coverage(format!("fold {f} has no scored stimuli")));
    }

    let results = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let (inputs, targets): (Vec<Vec<f64>>, Vec<f64>) = members
                .iter()
                .enumerate()
                .filter(|(f, _)| *f != fold)
                .flat_map(|(_, ids)| ids.iter())
                .map(|id| (features[*id].clone(), table.rows[*id].mos))
                .unzip();
            let (params, standardizer, loss_history) =
                fit_regressor(&inputs, &targets, config, fold_seed(config.seed, fold)).map_err(|e| match e {
                    ModelError::Diverged { epoch, message } => ModelError::Diverged {
                        epoch,
                        message: format!("fold {fold}: {message}"),
                    },
                    other => other,
                })?;
            let model = FoldModel {
                fold,
                params,
                standardizer,
                loss_history,
                train_size: inputs.len(),
            };
            let preds = members[fold]
                .iter()
                .map(|id| Ok(((*id).clone(), model.predict(&features[*id])?)))
                .collect::<Result<BTreeMap<_, _>, ModelError>>()?;
            Ok((model, preds))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let (folds, predictions) = results.into_iter().unzip();
    Ok(TrainOutput {
        model: TrainedModel {
            format_version: TrainedModel::FORMAT_VERSION,
            config: config.clone(),
            plan: plan.clone(),
            folds,
        },
        predictions,
    })
}

/// Stimulus sets per fold for the stimuli that have predictions.
pub fn fold_members(plan: &FoldPlan, sources: &BTreeMap<String, String>, ids: impl IntoIterator<Item = String>) -> Vec<BTreeSet<String>> {
    let mut out = vec![BTreeSet::new(); plan.k];
    for id in ids {
        if let Some(f) = sources.get(&id).and_then(|s| plan.fold_of(s)) {
            out[f].insert(id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_handles_constant_columns() {
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![1.0, 4.0]]);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.apply(&[1.0, 4.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn zero_dim_rejected() {
        let err = fit_regressor(&[vec![], vec![]], &[1.0, 2.0], &TrainConfig::default(), 0);
        assert!(matches!(err, Err(ModelError::Shape(_))));
    }

    #[test]
    fn nan_loss_aborts() {
        let err = fit_regressor(&[vec![0.5], vec![1.0]], &[f64::NAN, 2.0], &TrainConfig::default(), 0);
        assert!(matches!(err, Err(ModelError::Diverged { epoch: 0, .. })));
        let err = fit_regressor(&[vec![f64::NAN], vec![1.0]], &[1.0, 2.0], &TrainConfig::default(), 0);
        assert!(matches!(err, Err(ModelError::NonFinite(_))));
    }

    #[test]
    fn learns_a_line() {
        let inputs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 10.0]).collect();
        let targets: Vec<f64> = inputs.iter().map(|x| 0.5 * x[0] + 1.0).collect();
        let cfg = TrainConfig {
            epochs: 400,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (_, _, history) = fit_regressor(&inputs, &targets, &cfg, 3).unwrap();
        assert!(history.last().unwrap() < &(history[0] * 0.05));
    }
}
