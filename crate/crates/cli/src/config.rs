use std::path::{Path, PathBuf};

use saekit::autonaming::{DetectionConfig, VlmEndpointConfig};
use saekit::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// The whole pipeline in one JSON document. Unknown keys are rejected at
/// every level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed. Every stage derives its own seed from this one.
    pub seed: u64,
    pub paths: Paths,
    /// `train.seed` is overwritten by the stage seed derived from `seed`.
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub naming: NamingConfig,
    pub synth: SynthConfig,
}

/// Input and output locations. Relative paths resolve against the config
/// file's directory. Unset inputs default to the files `synth` writes into
/// `output_dir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_embeddings: Option<PathBuf>,
    /// Split used by `analyze`, `name` and `detect`; defaults to the training
    /// split.
    pub eval_embeddings: Option<PathBuf>,
    /// Labels for the evaluation split.
    pub labels: Option<PathBuf>,
    /// `sample_index,path` CSV. Without one, images are placeholders.
    pub image_manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Overrides `train.dead_threshold` for evaluation when set.
    pub dead_threshold: Option<f64>,
    pub chunk_rows: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            dead_threshold: None,
            chunk_rows: saekit::metrics::DEFAULT_CHUNK_ROWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NamingConfig {
    pub endpoint: VlmEndpointConfig,
    /// Images shown when naming a neuron.
    pub n_top: usize,
    pub detection: DetectionConfig,
    /// Report cutoff on detection accuracy.
    pub threshold: f64,
    /// Upper bound on the number of neurons sent for naming.
    pub max_neurons: usize,
    /// Detection runs per neuron; counts are pooled across runs.
    pub repeats: usize,
    pub naming_template: Option<String>,
    pub detection_template: Option<String>,
    pub max_payload_bytes: usize,
    pub backoff_ms: u64,
}

impl Default for NamingConfig {
    fn default() -> Self {
        Self {
            endpoint: VlmEndpointConfig::default(),
            n_top: 10,
            detection: DetectionConfig::default(),
            threshold: 0.70,
            max_neurons: 64,
            repeats: 1,
            naming_template: None,
            detection_template: None,
            max_payload_bytes: 32 << 20,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub t: usize,
    pub k: usize,
    pub sparsity: f64,
    pub n: usize,
    pub noise_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 64,
            t: 100,
            k: 8,
            sparsity: 3.0,
            n: 5000,
            noise_sigma: 0.01,
        }
    }
}

pub const EMBEDDINGS_FILE: &str = "embeddings.saem";
pub const LABELS_FILE: &str = "labels.csv";
pub const CODES_FILE: &str = "codes.saem";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const CHECKPOINT_FILE: &str = "sae.ckpt";
pub const PROGRESS_FILE: &str = "train_progress.jsonl";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const SAE_PROFILES_FILE: &str = "sae_profiles.jsonl";
pub const RAW_PROFILES_FILE: &str = "raw_profiles.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const NAMES_FILE: &str = "names.jsonl";
pub const FINDINGS_FILE: &str = "findings.jsonl";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_TXT_FILE: &str = "report.txt";

impl PipelineConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let n = &self.naming;
        if n.n_top == 0 || n.detection.n_per_side == 0 || n.repeats == 0 {
            return Err(CliError::Config(
                "naming.n_top, naming.detection.n_per_side and naming.repeats must be positive"
                    .into(),
            ));
        }
        if !(0.0..=1.0).contains(&n.threshold) {
            return Err(CliError::Config(
                "naming.threshold must lie in [0, 1]".into(),
            ));
        }
        if !(n.detection.positive_quantile > 0.0 && n.detection.positive_quantile <= 1.0) {
            return Err(CliError::Config(
                "naming.detection.positive_quantile must lie in (0, 1]".into(),
            ));
        }
        if n.endpoint.timeout_secs == 0 {
            return Err(CliError::Config(
                "naming.endpoint.timeout_secs must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("saekit-out"))
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir().join(file)
    }

    pub fn train_embeddings(&self) -> PathBuf {
        self.paths
            .train_embeddings
            .clone()
            .unwrap_or_else(|| self.out(EMBEDDINGS_FILE))
    }

    pub fn eval_embeddings(&self) -> PathBuf {
        self.paths
            .eval_embeddings
            .clone()
            .unwrap_or_else(|| self.train_embeddings())
    }

    pub fn labels(&self) -> PathBuf {
        self.paths
            .labels
            .clone()
            .unwrap_or_else(|| self.out(LABELS_FILE))
    }

    pub fn dead_threshold(&self) -> f64 {
        self.metrics
            .dead_threshold
            .unwrap_or(self.train.dead_threshold)
    }

    /// Seed for a named stage, derived from the root seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        saekit::seed::sub_seed(self.seed, stage)
    }

    /// Fails with a config error naming the first path that does not exist.
    pub fn require_inputs(&self, paths: &[(&str, PathBuf)]) -> Result<(), CliError> {
        for (what, p) in paths {
            if !p.exists() {
                return Err(CliError::Config(format!(
                    "{what} not found: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.train_embeddings,
            &mut self.eval_embeddings,
            &mut self.labels,
            &mut self.image_manifest,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
