//! Contrastive-divergence training with power-law weight decay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::exact::{
    accumulate_expectation, exact_gradient, exact_log_likelihood, EXACT_UNIT_LIMIT,
};
use super::{check_spins, GradientEstimate, RbmParams, Spin};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

/// Where the negative phase of the gradient comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// k-step Gibbs chains restarted from each training pattern.
    #[default]
    ContrastiveDivergence,
    /// Full enumeration; desk-scale models only.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[serde(default)]
pub struct TrainConfig {
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_power: f64,
    pub w_cap: f64,
    pub epochs: usize,
    pub seed: u64,
    pub temperature: f64,
    /// Patterns per update. `None` makes one update per epoch from the full pass.
    pub batch_size: Option<usize>,
    pub gradient: GradientMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cd_steps: 5,
            learning_rate: 0.05,
            weight_decay: 0.0,
            decay_power: 2.0,
            w_cap: 0.5,
            epochs: 100,
            seed: 0,
            temperature: 1.0,
            batch_size: None,
            gradient: GradientMode::ContrastiveDivergence,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_steps == 0 {
            return Err(Error::Domain("cd_steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Domain("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 || !(self.decay_power > 0.0) {
            return Err(Error::Domain(
                "weight decay needs lambda >= 0 and power > 0".into(),
            ));
        }
        if !(self.w_cap > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Domain(
                "w_cap and temperature must be positive".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Domain("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean squared mean-field reconstruction error per visible unit, in [0, 1].
    pub reconstruction_error: f64,
    /// Only computed when the model is small enough for enumeration.
    pub log_likelihood: Option<f64>,
    pub max_abs_weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: RbmParams,
    pub metrics: Vec<EpochMetrics>,
}

/// CD-k gradient estimate averaged over `batch`.
///
/// The chain for pattern `k` draws from stream `k` of `seed`, and contributions
/// are summed in pattern order, so the result does not depend on threading.
pub fn cd_gradient(
    params: &RbmParams,
    batch: &[Vec<Spin>],
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<GradientEstimate> {
    if batch.is_empty() {
        return Err(Error::Domain("CD gradient of an empty batch".into()));
    }
    if k == 0 {
        return Err(Error::Domain("CD needs at least one Gibbs step".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    for v in batch {
        check_spins(v, params.n_v, "training pattern")?;
    }
    let samples: Vec<Vec<Spin>> = batch
        .par_iter()
        .enumerate()
        .map(|(idx, v0)| {
            let mut rng = stream_rng(seed, idx as u64);
            let mut v = v0.clone();
            for _ in 0..k {
                let h = params.sample_hidden(&v, temperature, &mut rng);
                v = params.sample_visible(&h, temperature, &mut rng);
            }
            v
        })
        .collect();

    let inv = 1.0 / batch.len() as f64;
    let mut grad = GradientEstimate::zeros(params.n_v, params.n_h);
    for (v_data, v_model) in batch.iter().zip(&samples) {
        accumulate_expectation(params, v_data, inv, &mut grad);
        accumulate_expectation(params, v_model, -inv, &mut grad);
    }
    Ok(grad)
}

/// Power-law shrinkage `w <- w - lambda sign(w) |w|^p`, then a uniform rescale
/// so that `max |w| <= w_cap`. Biases are untouched.
pub fn apply_weight_decay(params: &RbmParams, lambda: f64, power: f64, w_cap: f64) -> RbmParams {
    let mut out = params.clone();
    if lambda > 0.0 {
        for w in &mut out.w {
            let shrink = lambda * w.abs().powf(power);
            // never shrink through zero
            *w = w.signum() * (w.abs() - shrink).max(0.0);
        }
    }
    let max = out.max_abs_weight();
    if max > w_cap {
        let k = w_cap / max;
        out.w.iter_mut().for_each(|w| *w *= k);
    }
    out
}

fn reconstruction_error(params: &RbmParams, data: &[Vec<Spin>]) -> f64 {
    let mut total = 0.0;
    for v in data {
        let h_mean: Vec<f64> = params.hidden_field(v).into_iter().map(f64::tanh).collect();
        for (j, &x) in v.iter().enumerate() {
            let a: f64 = h_mean
                .iter()
                .enumerate()
                .map(|(i, m)| params.weight(i, j) * m)
                .sum::<f64>()
                + params.b[j];
            let d = (f64::from(x) - a.tanh()) / 2.0;
            total += d * d;
        }
    }
    total / (data.len() * params.n_v).max(1) as f64
}

pub(crate) fn epoch_metrics(params: &RbmParams, data: &[Vec<Spin>], epoch: usize) -> EpochMetrics {
    let log_likelihood = if params.n_units() <= EXACT_UNIT_LIMIT.min(20) {
        exact_log_likelihood(params, data).ok()
    } else {
        None
    };
    EpochMetrics {
        epoch,
        reconstruction_error: reconstruction_error(params, data),
        log_likelihood,
        max_abs_weight: params.max_abs_weight(),
    }
}

/// Trains `params` on `data`; every pattern contributes exactly once per epoch.
pub fn train(params: &RbmParams, data: &[Vec<Spin>], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(params, data, config, |_, _| Ok(()))
}

/// As [`train`], calling `on_epoch` after every epoch (checkpointing, logging).
pub fn train_with<F>(
    params: &RbmParams,
    data: &[Vec<Spin>],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochMetrics, &RbmParams) -> Result<()>,
{
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    for v in data {
        check_spins(v, params.n_v, "training pattern")?;
    }
    let mut current = params.clone();
    let batch = config.batch_size.unwrap_or(data.len()).min(data.len());
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        for chunk in data.chunks(batch) {
            let grad = match config.gradient {
                GradientMode::ContrastiveDivergence => cd_gradient(
                    &current,
                    chunk,
                    config.cd_steps,
                    config.temperature,
                    derive_seed(config.seed, step),
                )?,
                GradientMode::Exact => exact_gradient(&current, chunk)?,
            };
            step += 1;
            for (x, d) in current
                .w
                .iter_mut()
                .chain(current.b.iter_mut())
                .chain(current.c.iter_mut())
                .zip(grad.components())
            {
                *x += config.learning_rate * d;
            }
            current = apply_weight_decay(
                &current,
                config.weight_decay,
                config.decay_power,
                config.w_cap,
            );
        }
        let m = epoch_metrics(&current, data, epoch);
        on_epoch(&m, &current)?;
        metrics.push(m);
    }
    current.meta.epochs = params.meta.epochs + config.epochs;
    current.meta.seed = config.seed;
    current.meta.w_cap = config.w_cap;
    Ok(TrainOutcome {
        params: current,
        metrics,
    })
}
