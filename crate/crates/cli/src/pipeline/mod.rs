//! Experiment steps on in-memory data. File handling lives in `commands`.

mod compare;
mod tasks;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use valleyscope::datasets::{
    gen_bas, label_units, load_optdigits, load_patterns, preprocess, PatternRecord,
};
use valleyscope::{Error, RbmParams, Result, Spin};

use crate::config::{DatasetConfig, ExperimentConfig};

pub use compare::{compare, CompareOutcome, CompareSummary, ValleyRow};
pub use tasks::{
    classify, classify_annealer, classify_mcmc, generate, reconstruct, reconstruct_annealer,
    reconstruct_mcmc, sweep_scale_table, ClassifyRow, GeneratedImage, PathResult,
    ReconstructResult, ReconstructRow, ScaleTable, ScaleTableRow,
};
pub use train::{initial_model, train_model, TrainRun};

pub const ANNEALER_PATH: &str = "annealer";
pub const MCMC_PATH: &str = "mcmc";

/// Seed tags separating the streams of each pipeline stage.
pub(crate) mod tags {
    pub const INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const CLASSIFY_ANNEALER: u64 = 3;
    pub const CLASSIFY_MCMC: u64 = 4;
    pub const RECONSTRUCT_ANNEALER: u64 = 5;
    pub const RECONSTRUCT_MCMC: u64 = 6;
    pub const GENERATE: u64 = 7;
    pub const TRAINING_VALLEYS: u64 = 8;
    pub const SAMPLE: u64 = 9;
    pub const SAMPLE_VALLEYS: u64 = 10;
    pub const ESCAPE: u64 = 11;
    pub const WIDTH: u64 = 12;
    pub const SWEEP: u64 = 13;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PatternRecord>,
    pub test: Vec<PatternRecord>,
    /// Visible indices of the one-hot label units; empty when unlabeled.
    pub label_units: Vec<usize>,
    /// Content hash of the training and test patterns.
    pub id: String,
}

impl Dataset {
    pub fn new(
        train: Vec<PatternRecord>,
        test: Vec<PatternRecord>,
        label_units: Vec<usize>,
    ) -> Result<Self> {
        let n_v = train
            .first()
            .ok_or_else(|| Error::Domain("training set is empty".into()))?
            .visible
            .len();
        if train.iter().chain(&test).any(|p| p.visible.len() != n_v) {
            return Err(Error::Shape("patterns differ in length".into()));
        }
        let mut hash = Sha256::new();
        for p in train.iter().chain(&test) {
            hash.update(
                p.visible
                    .iter()
                    .map(|&s| if s > 0 { b'+' } else { b'-' })
                    .collect::<Vec<u8>>(),
            );
            hash.update([p.class, b'\n']);
        }
        hash.update(format!("{}/{}", train.len(), test.len()));
        let id = hex::encode(hash.finalize());
        Ok(Self {
            train,
            test,
            label_units,
            id,
        })
    }

    pub fn n_visible(&self) -> usize {
        self.train[0].visible.len()
    }

    pub fn train_vectors(&self) -> Vec<Vec<Spin>> {
        self.train.iter().map(|p| p.visible.clone()).collect()
    }
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    match cfg {
        DatasetConfig::Optdigits {
            train_path,
            test_path,
            preprocess: opts,
        } => {
            let (train, test) = preprocess(
                &load_optdigits(train_path)?,
                &load_optdigits(test_path)?,
                opts,
            )?;
            Dataset::new(train, test, label_units())
        }
        DatasetConfig::Patterns {
            train_path,
            test_path,
        } => {
            let train = load_patterns(train_path)?;
            let test = match test_path {
                Some(p) => load_patterns(p)?,
                None => Vec::new(),
            };
            Dataset::new(train, test, label_units())
        }
        DatasetConfig::BarsAndStripes { side } => {
            let train = gen_bas(*side)?
                .into_iter()
                .map(|visible| PatternRecord { visible, class: 0 })
                .collect();
            Dataset::new(train, Vec::new(), Vec::new())
        }
    }
}

/// Split of the visible layer into pixel and label units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub pixels: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Layout {
    pub fn of(params: &RbmParams) -> Self {
        let labels = params.label_units.clone();
        let pixels = (0..params.n_v).filter(|j| !labels.contains(j)).collect();
        Self { pixels, labels }
    }

    pub fn require_labels(&self) -> Result<()> {
        if self.labels.len() < 2 {
            return Err(Error::Domain(
                "the model has no label units to read a class from".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelStatus {
    Unique,
    NoLabel,
    MultipleLabels,
}

impl LabelStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Unique => "unique",
            Self::NoLabel => "no-label",
            Self::MultipleLabels => "multiple-labels",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Readout {
    pub predicted: Option<usize>,
    pub status: LabelStatus,
    pub fallback_used: bool,
}

/// Class from the label spins of `v`: the position of the single +1.
/// Anything else is invalid; with `fallback` it is replaced by the one-hot
/// completion of lowest free energy, the earliest class winning ties.
pub fn read_label(
    params: &RbmParams,
    layout: &Layout,
    v: &[Spin],
    fallback: bool,
) -> Result<Readout> {
    let on: Vec<usize> = layout
        .labels
        .iter()
        .enumerate()
        .filter(|&(_, &j)| v[j] > 0)
        .map(|(k, _)| k)
        .collect();
    let status = match on.len() {
        1 => LabelStatus::Unique,
        0 => LabelStatus::NoLabel,
        _ => LabelStatus::MultipleLabels,
    };
    if status == LabelStatus::Unique {
        return Ok(Readout {
            predicted: Some(on[0]),
            status,
            fallback_used: false,
        });
    }
    if !fallback {
        return Ok(Readout {
            predicted: None,
            status,
            fallback_used: false,
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for class in 0..layout.labels.len() {
        let candidate = with_label(layout, v, class);
        let f = params.free_energy(&candidate)?;
        if best.is_none_or(|(_, b)| f < b) {
            best = Some((class, f));
        }
    }
    Ok(Readout {
        predicted: best.map(|(c, _)| c),
        status,
        fallback_used: true,
    })
}

/// `v` with its label units set to the one-hot code of `class`.
pub fn with_label(layout: &Layout, v: &[Spin], class: usize) -> Vec<Spin> {
    let mut out = v.to_vec();
    for (k, &j) in layout.labels.iter().enumerate() {
        out[j] = if k == class { 1 } else { -1 };
    }
    out
}

/// The first `limit` patterns, or all.
pub(crate) fn take<T>(items: &[T], limit: Option<usize>) -> &[T] {
    &items[..limit.unwrap_or(items.len()).min(items.len())]
}

pub fn train_outcome_dataset_id(cfg: &ExperimentConfig, data: &Dataset) -> String {
    let kind = match &cfg.dataset {
        DatasetConfig::Optdigits { .. } => "optdigits",
        DatasetConfig::Patterns { .. } => "patterns",
        DatasetConfig::BarsAndStripes { .. } => "bars-and-stripes",
    };
    format!("{kind}:{}:{}", data.train.len(), &data.id[..16])
}
