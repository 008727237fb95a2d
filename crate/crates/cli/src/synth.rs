use saekit::embedding_io::{write_labels, write_matrix};
use saekit::synthgen::{gen_ground_truth, gen_samples, GroundTruthFile};
use serde::Serialize;

use crate::config::{PipelineConfig, CODES_FILE, EMBEDDINGS_FILE, GROUND_TRUTH_FILE, LABELS_FILE};
use crate::error::CliError;
use crate::files::write_json;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub n: usize,
    pub d: usize,
    pub t: usize,
    pub k: usize,
    pub mean_active_features: f64,
    /// Positive samples per label.
    pub label_counts: Vec<usize>,
}

/// Writes embeddings, labels, true codes and the ground-truth sidecar into the
/// output directory.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SynthSummary, CliError> {
    let s = &cfg.synth;
    let gt = gen_ground_truth(
        s.d,
        s.t,
        s.k,
        s.sparsity,
        cfg.stage_seed("synth/ground_truth"),
    )?;
    if s.noise_sigma.is_nan() || s.noise_sigma < 0.0 {
        return Err(CliError::Config(
            "synth.noise_sigma must be non-negative".into(),
        ));
    }
    let samples = gen_samples(&gt, s.n, s.noise_sigma, cfg.stage_seed("synth/samples"));

    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    write_matrix(&samples.embeddings, out.join(EMBEDDINGS_FILE))?;
    write_matrix(&samples.codes, out.join(CODES_FILE))?;
    write_labels(&samples.labels, out.join(LABELS_FILE))?;
    write_json(&out.join(GROUND_TRUTH_FILE), &GroundTruthFile::from(&gt))?;

    let active = samples
        .codes
        .as_slice()
        .iter()
        .filter(|v| **v != 0.0)
        .count();
    let values = samples.labels.values();
    Ok(SynthSummary {
        n: s.n,
        d: s.d,
        t: s.t,
        k: s.k,
        mean_active_features: active as f64 / s.n.max(1) as f64,
        label_counts: (0..s.k)
            .map(|j| values.column(j).iter().filter(|v| **v == 1.0).count())
            .collect(),
    })
}
