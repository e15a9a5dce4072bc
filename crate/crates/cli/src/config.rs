//! Experiment configuration: one JSON file drives every command.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use valleyscope::annealer::{AnnealSchedule, DEFAULT_SAMPLING_READS, DEFAULT_TASK_READS};
use valleyscope::chimera::{ChimeraGraph, EmbedOptions};
use valleyscope::datasets::PreprocessOptions;
use valleyscope::gibbs::WarmingSchedule;
use valleyscope::rbm::TrainConfig;
use valleyscope::valleys::{EscapeConfig, DEFAULT_PRE_STEPS};
use valleyscope::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// UCI optdigits `.tra` and `.tes` files.
    Optdigits {
        train_path: PathBuf,
        test_path: PathBuf,
        #[serde(default)]
        preprocess: PreprocessOptions,
    },
    /// Pattern files: one line per pattern, spins then the class digit.
    Patterns {
        train_path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
    /// Every bars-and-stripes image of the given side; no labels, no test set.
    BarsAndStripes { side: usize },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::Optdigits {
            train_path: "data/optdigits/optdigits.tra".into(),
            test_path: "data/optdigits/optdigits.tes".into(),
            preprocess: PreprocessOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_units: usize,
    /// Standard deviation of the initial weights; biases start at zero.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_units: 64,
            init_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Lattice cell rows (M), cell columns (N) and half-cell size (c).
    pub rows: usize,
    pub cols: usize,
    pub half: usize,
    pub scale: f64,
    pub chain_strength: f64,
    pub j_floor: f64,
    /// Scale factors visited by `sweep-scale`.
    pub scales: Vec<f64>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            rows: 16,
            cols: 16,
            half: 4,
            scale: 1.0,
            chain_strength: 1.0,
            j_floor: 1e-4,
            scales: (1..=10).map(f64::from).collect(),
        }
    }
}

impl EmbeddingConfig {
    pub fn graph(&self) -> Result<ChimeraGraph> {
        ChimeraGraph::new(self.rows, self.cols, self.half)
    }

    pub fn options(&self) -> EmbedOptions {
        EmbedOptions {
            scale: self.scale,
            chain_strength: self.chain_strength,
            j_floor: self.j_floor,
            ..EmbedOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `local-sa`, `remote:<url>`, `remote` (endpoint from the environment)
    /// or `gibbs-as-annealer`.
    pub name: String,
    pub schedule: AnnealSchedule,
    pub timeout_secs: u64,
    /// Chain length per read of the `gibbs-as-annealer` backend.
    pub gibbs_sweeps: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            name: "local-sa".into(),
            schedule: AnnealSchedule::default(),
            timeout_secs: 120,
            gibbs_sweeps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Gibbs sweeps at T = 1 before the T = 0 relaxation.
    pub sweeps: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { sweeps: 100 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Resolve invalid label readouts by the one-hot completion of lowest
    /// free energy instead of counting them as errors.
    pub free_energy_fallback: bool,
    /// Use only the first this many test patterns.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    /// Visible indices to reconstruct. Defaults to the second half of the
    /// pixel units (the bottom four rows of an 8x7 image).
    pub mask: Option<Vec<usize>>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Images kept per class.
    pub k: usize,
    /// Classes to generate; all label classes when absent.
    pub classes: Option<Vec<usize>>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            k: 5,
            classes: None,
        }
    }
}

/// Depth used as the denominator and threshold of the width parameter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum WidthDepth {
    /// The fitted activation energy.
    #[default]
    EAct,
    /// The magnitude of the fitted log-prefactor.
    Intercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Gibbs sweeps at T = 1 before relaxation when attributing a state.
    pub pre_steps: usize,
    pub escape: EscapeConfig,
    /// Ladder of the warming traces that feed the width parameter.
    pub warming: WarmingSchedule,
    pub width_traces: usize,
    pub width_depth: WidthDepth,
    /// Cap on the annealer-side valleys characterized by escape and width,
    /// taken in order of decreasing hits. All when absent.
    pub max_characterized: Option<usize>,
    pub histogram_bins: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            pre_steps: DEFAULT_PRE_STEPS,
            escape: EscapeConfig::default(),
            warming: WarmingSchedule::default(),
            width_traces: 10,
            width_depth: WidthDepth::EAct,
            max_characterized: None,
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    /// Training settings; `train.seed` is replaced by a seed derived from
    /// the top-level `seed`.
    pub train: TrainConfig,
    /// Write a checkpoint model every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub embedding: EmbeddingConfig,
    pub backend: BackendConfig,
    /// Reads per classification, reconstruction or generation problem.
    pub task_reads: usize,
    /// Reads of the unclamped sample compared against the training valleys.
    pub sampling_reads: usize,
    pub mcmc: McmcConfig,
    pub classify: ClassifyConfig,
    pub reconstruct: ReconstructConfig,
    pub generate: GenerateConfig,
    pub compare: CompareConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            checkpoint_every: None,
            embedding: EmbeddingConfig::default(),
            backend: BackendConfig::default(),
            task_reads: DEFAULT_TASK_READS,
            sampling_reads: DEFAULT_SAMPLING_READS,
            mcmc: McmcConfig::default(),
            classify: ClassifyConfig::default(),
            reconstruct: ReconstructConfig::default(),
            generate: GenerateConfig::default(),
            compare: CompareConfig::default(),
            seed: 0,
            out_dir: "out".into(),
        }
    }
}

fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model.hidden_units == 0 {
            return Err(domain("model.hidden_units must be positive"));
        }
        if !(self.model.init_std >= 0.0 && self.model.init_std.is_finite()) {
            return Err(domain("model.init_std must be finite and nonnegative"));
        }
        self.train.validate()?;
        if self.checkpoint_every == Some(0) {
            return Err(domain("checkpoint_every must be positive"));
        }
        self.embedding.graph()?;
        let e = &self.embedding;
        if !(e.scale >= 1.0) || e.scales.iter().any(|s| !(*s >= 1.0)) {
            return Err(domain("scale factors must be at least 1"));
        }
        if !(e.chain_strength > 0.0) || !(e.j_floor >= 0.0) {
            return Err(domain(
                "chain_strength must be positive and j_floor nonnegative",
            ));
        }
        self.backend.schedule.validate()?;
        crate::backend::BackendKind::parse(&self.backend.name)?;
        if self.task_reads == 0 || self.sampling_reads == 0 {
            return Err(domain("read counts must be positive"));
        }
        if let DatasetConfig::Optdigits { preprocess, .. } = &self.dataset {
            if !(1..=16).contains(&preprocess.threshold) {
                return Err(domain("preprocess.threshold must lie in 1..=16"));
            }
        }
        if let DatasetConfig::BarsAndStripes { side } = self.dataset {
            if side == 0 {
                return Err(domain("bars-and-stripes side must be positive"));
            }
        }
        self.compare.warming.validate()?;
        let esc = &self.compare.escape;
        if esc.trials == 0 || esc.max_jumps == 0 || esc.temperatures.is_empty() {
            return Err(domain(
                "escape needs trials, a jump budget and temperatures",
            ));
        }
        if self.compare.histogram_bins == 0 {
            return Err(domain("compare.histogram_bins must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads a config; relative dataset paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Optdigits {
                train_path,
                test_path,
                ..
            } => {
                fix(train_path);
                fix(test_path);
            }
            DatasetConfig::Patterns {
                train_path,
                test_path,
            } => {
                fix(train_path);
                if let Some(t) = test_path {
                    fix(t);
                }
            }
            DatasetConfig::BarsAndStripes { .. } => {}
        }
    }

    /// SHA-256 of the compact JSON form. The output directory is excluded
    /// so that relocated runs share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn schema_json() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(ExperimentConfig))
        .expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_json("{}").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"sead": 3}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"task_reads": 0}"#,
            r#"{"backend": {"name": "quantum"}}"#,
            r#"{"embedding": {"scale": 0.5}}"#,
            r#"{"embedding": {"rows": 0}}"#,
            r#"{"train": {"cd_steps": 0}}"#,
        ] {
            assert!(ExperimentConfig::from_json(text).is_err(), "{text}");
        }
    }

    #[test]
    fn fingerprint_tracks_content_not_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn schema_names_every_section() {
        let schema = schema_json();
        for key in [
            "dataset",
            "train",
            "embedding",
            "backend",
            "compare",
            "task_reads",
        ] {
            assert!(schema.contains(key), "{key}");
        }
    }
}
