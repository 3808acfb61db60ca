//! Learning-rate selection by grid search on a held-out validation split.

use crate::error::{BongError, Result};
use crate::families::BeliefState;
use crate::obs::ObsModel;
use crate::predictor::MlpSpec;
use crate::updaters::{run_stream, Algorithm, AlgorithmCfg, Dynamics};

use super::metrics::{nlpd_plugin, Records};

/// Fraction of the training prefix held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// Result of a grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    /// Selected learning rate.
    pub best_lr: f64,
    /// `(α, score)` for every trial in ascending α; failed trials score +∞.
    pub scores: Vec<(f64, f64)>,
}

/// Split a training prefix into its fitting part and the trailing
/// validation part (last 20%).
pub fn validation_split(train: &Records) -> Result<(&Records, &Records)> {
    let n_val = (train.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    if n_val == 0 || n_val >= train.len() {
        return Err(BongError::InvalidConfig(format!(
            "training prefix of {} records is too short for a validation split",
            train.len()
        )));
    }
    Ok(train.split_at(train.len() - n_val))
}

/// Pick the learning rate minimizing the plug-in validation NLPD.
///
/// One stream is run per grid value on the fitting part of `train` (only
/// its first `tune_at` records when given), and scored on the validation
/// part. Errors and non-finite scores count as +∞; ties go to the smaller α.
/// BONG has a fixed unit rate and returns 1 without running trials.
#[allow(clippy::too_many_arguments)]
pub fn tune_learning_rate(
    initial: &BeliefState,
    spec: &MlpSpec,
    model: &ObsModel,
    cfg: &AlgorithmCfg,
    dynamics: &Dynamics,
    train: &Records,
    grid: &[f64],
    seed: u64,
    tune_at: Option<usize>,
) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(BongError::InvalidConfig("learning-rate grid is empty".into()));
    }
    if cfg.algorithm == Algorithm::Bong {
        return Ok(TuneOutcome { best_lr: 1.0, scores: Vec::new() });
    }
    let (fit, val) = validation_split(train)?;
    let fit = match tune_at {
        Some(k) => &fit[..k.clamp(1, fit.len())],
        None => fit,
    };
    let mut alphas: Vec<f64> = grid.to_vec();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    alphas.dedup();

    let mut scores = Vec::with_capacity(alphas.len());
    let mut best: Option<(f64, f64)> = None;
    for &alpha in &alphas {
        let trial = cfg.clone().with_lr(alpha);
        let score = run_stream(initial.clone(), dynamics, fit, spec, model, &trial, seed, 0, |_, _, _| Ok(()))
            .and_then(|(state, _)| nlpd_plugin(&state, model, spec, val))
            .ok()
            .filter(|s| s.is_finite())
            .unwrap_or(f64::INFINITY);
        scores.push((alpha, score));
        if score.is_finite() && best.is_none_or(|(_, b)| score < b) {
            best = Some((alpha, score));
        }
    }
    match best {
        Some((best_lr, _)) => Ok(TuneOutcome { best_lr, scores }),
        None => Err(BongError::AllTrialsFailed),
    }
}
