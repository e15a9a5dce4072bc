use valleyscope::rbm::{train_with, EpochMetrics, TrainConfig};
use valleyscope::rng::{derive_seed, stream_rng};
use valleyscope::{RbmParams, Result};

use super::{tags, train_outcome_dataset_id, Dataset};
use crate::config::ExperimentConfig;

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub initial: RbmParams,
    pub model: RbmParams,
    pub metrics: Vec<EpochMetrics>,
    /// (epoch, parameters) at every checkpoint epoch.
    pub checkpoints: Vec<(usize, RbmParams)>,
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, tags::TRAIN),
        ..cfg.train.clone()
    }
}

/// Gaussian weights, zero biases, labels from the dataset. The metadata is
/// already what training stamps, so zero epochs reproduce this model.
pub fn initial_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<RbmParams> {
    let mut rng = stream_rng(derive_seed(cfg.seed, tags::INIT), 0);
    let mut params = RbmParams::random_normal(
        data.n_visible(),
        cfg.model.hidden_units,
        cfg.model.init_std,
        &mut rng,
    )
    .with_labels(data.label_units.clone())?;
    let tc = train_config(cfg);
    params.meta.seed = tc.seed;
    params.meta.w_cap = tc.w_cap;
    params.meta.dataset_id = train_outcome_dataset_id(cfg, data);
    Ok(params)
}

pub fn train_model(cfg: &ExperimentConfig, data: &Dataset) -> Result<TrainRun> {
    let initial = initial_model(cfg, data)?;
    let mut checkpoints = Vec::new();
    let outcome = train_with(
        &initial,
        &data.train_vectors(),
        &train_config(cfg),
        |m, p| {
            if cfg
                .checkpoint_every
                .is_some_and(|every| m.epoch % every == 0)
            {
                let mut snapshot = p.clone();
                snapshot.meta.epochs = initial.meta.epochs + m.epoch;
                checkpoints.push((m.epoch, snapshot));
            }
            Ok(())
        },
    )?;
    Ok(TrainRun {
        initial,
        model: outcome.params,
        metrics: outcome.metrics,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetConfig;
    use crate::pipeline::load_dataset;
    use valleyscope::datasets::PatternRecord;
    use valleyscope::rbm::GradientMode;

    fn bas_config(epochs: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            dataset: DatasetConfig::BarsAndStripes { side: 2 },
            ..ExperimentConfig::default()
        };
        cfg.model.hidden_units = 3;
        cfg.train.epochs = epochs;
        cfg
    }

    #[test]
    fn zero_epochs_reproduce_the_initial_model() {
        let cfg = bas_config(0);
        let data = load_dataset(&cfg.dataset).unwrap();
        let run = train_model(&cfg, &data).unwrap();
        assert_eq!(run.model, run.initial);
        assert_eq!(run.model.to_json().unwrap(), run.initial.to_json().unwrap());
        assert!(run.metrics.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut cfg = bas_config(5);
        cfg.checkpoint_every = Some(2);
        let data = load_dataset(&cfg.dataset).unwrap();
        let a = train_model(&cfg, &data).unwrap();
        let b = train_model(&cfg, &data).unwrap();
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        let epochs: Vec<usize> = a.checkpoints.iter().map(|c| c.0).collect();
        assert_eq!(epochs, vec![2, 4]);
        assert_eq!(a.checkpoints[1].1.meta.epochs, 4);
        cfg.seed = 1;
        assert_ne!(train_model(&cfg, &data).unwrap().model, a.model);
    }

    #[test]
    fn exact_gradient_ascends_the_log_likelihood() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.hidden_units = 4;
        cfg.model.init_std = 0.1;
        cfg.train.epochs = 30;
        cfg.train.learning_rate = 0.02;
        cfg.train.w_cap = 10.0;
        cfg.train.gradient = GradientMode::Exact;
        let patterns = [
            0b1100_0011u32,
            0b1010_1010,
            0b1111_0000,
            0b0000_1111,
            0b1100_1100,
            0b0110_0110,
        ]
        .iter()
        .map(|bits| PatternRecord {
            visible: (0..8)
                .map(|k| if bits >> k & 1 == 1 { 1 } else { -1 })
                .collect(),
            class: 0,
        })
        .collect();
        let data = Dataset::new(patterns, vec![], vec![]).unwrap();
        let run = train_model(&cfg, &data).unwrap();
        let ll: Vec<f64> = run
            .metrics
            .iter()
            .map(|m| m.log_likelihood.unwrap())
            .collect();
        assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{ll:?}");
        assert!(ll.last().unwrap() > &ll[0]);
    }
}
