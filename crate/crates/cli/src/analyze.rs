use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use saekit::embedding_io::{apply_normalization, read_labels, read_matrix};
use saekit::metrics::{
    activation_matrix, mean_entropy, mean_entropy_dead_as_max, neuron_profiles,
    raw_feature_profiles, MeanEntropy, NeuronProfile,
};
use saekit::sae::{dead_neurons, decode, fve, l0_rate, load_checkpoint};
use saekit::synthgen::{recovery_score, recovery_score_masked, GroundTruth, GroundTruthFile};
use saekit::{LabelMatrix, Matrix, SaeParams};
use serde::{Deserialize, Serialize};

use crate::config::{
    PipelineConfig, CHECKPOINT_FILE, GROUND_TRUTH_FILE, RAW_PROFILES_FILE, SAE_PROFILES_FILE,
    SUMMARY_FILE,
};
use crate::error::CliError;
use crate::files::{read_json, write_json, write_jsonl};

/// Checkpoint plus the normalized evaluation split and its labels.
pub(crate) struct EvalData {
    pub params: SaeParams,
    pub x: Matrix,
    pub labels: LabelMatrix,
}

pub(crate) fn load_eval(cfg: &PipelineConfig) -> Result<EvalData, CliError> {
    let ckpt = cfg.out(CHECKPOINT_FILE);
    cfg.require_inputs(&[
        ("checkpoint", ckpt.clone()),
        ("evaluation embeddings", cfg.eval_embeddings()),
        ("labels", cfg.labels()),
    ])?;
    let (params, meta) = load_checkpoint(&ckpt)?;
    let raw = read_matrix(cfg.eval_embeddings())?;
    let x = apply_normalization(&raw, &meta.normalization)?;
    let labels = read_labels(cfg.labels())?;
    if labels.rows() != x.rows() {
        return Err(CliError::Config(format!(
            "{} label rows for {} evaluation samples",
            labels.rows(),
            x.rows()
        )));
    }
    Ok(EvalData { params, x, labels })
}

/// Dictionary recovery against the synthetic ground truth, when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub score: f64,
    /// Same score restricted to alive latents.
    pub score_alive: f64,
    /// Score of a random Gaussian decoder of the same shape.
    pub null_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub n_samples: usize,
    pub d: usize,
    pub m: usize,
    pub label_count: usize,
    pub entropy_max: f64,
    /// Alive latents with a defined entropy.
    pub mean_entropy_sae: MeanEntropy,
    /// Every latent; dead or undefined ones count as `entropy_max`.
    pub mean_entropy_sae_dead_included: MeanEntropy,
    /// Seeded uniform sample of alive latents, as many as raw dimensions.
    pub mean_entropy_sae_count_matched: MeanEntropy,
    pub mean_entropy_raw: MeanEntropy,
    pub l0_rate: f64,
    pub fve: f64,
    pub dead_fraction: f64,
    pub alive_count: usize,
    pub recovery: Option<RecoverySummary>,
}

pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<AnalysisSummary, CliError> {
    cfg.validate()?;
    let ev = load_eval(cfg)?;
    let z = activation_matrix(&ev.params, &ev.x, cfg.metrics.chunk_rows)?;
    let x_hat = decode(&ev.params, &z)?;
    let dead = dead_neurons(&z, cfg.dead_threshold());
    let n_top = cfg.naming.n_top;

    let sae = neuron_profiles(&z, &ev.labels, Some(&dead.alive), n_top)?;
    let raw = raw_feature_profiles(&ev.x, &ev.labels, n_top)?;
    let k = ev.labels.label_count();

    let summary = AnalysisSummary {
        n_samples: ev.x.rows(),
        d: ev.params.d(),
        m: ev.params.m(),
        label_count: k,
        entropy_max: (k as f64).log2(),
        mean_entropy_sae: mean_entropy(&sae)?,
        mean_entropy_sae_dead_included: mean_entropy_dead_as_max(&sae, k)?,
        mean_entropy_sae_count_matched: count_matched(
            &sae,
            ev.params.d(),
            cfg.stage_seed("analyze/count-matched"),
        )?,
        mean_entropy_raw: mean_entropy(&raw)?,
        l0_rate: l0_rate(&z),
        fve: fve(&ev.x, &x_hat)?,
        dead_fraction: dead.dead_fraction,
        alive_count: dead.alive.iter().filter(|a| **a).count(),
        recovery: recovery(cfg, &ev.params, &dead.alive)?,
    };
    tracing::info!(
        sae = summary.mean_entropy_sae.mean,
        raw = summary.mean_entropy_raw.mean,
        "mean concept entropy (bits)"
    );

    let out = cfg.output_dir();
    write_jsonl(&out.join(SAE_PROFILES_FILE), &sae)?;
    write_jsonl(&out.join(RAW_PROFILES_FILE), &raw)?;
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn count_matched(
    profiles: &[NeuronProfile],
    count: usize,
    seed: u64,
) -> Result<MeanEntropy, CliError> {
    let eligible: Vec<&NeuronProfile> = profiles
        .iter()
        .filter(|p| p.alive && p.entropy.is_some())
        .collect();
    let take = count.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), take).into_vec();
    picked.sort_unstable();
    let subset: Vec<NeuronProfile> = picked.iter().map(|&i| eligible[i].clone()).collect();
    Ok(mean_entropy(&subset)?)
}

fn recovery(
    cfg: &PipelineConfig,
    params: &SaeParams,
    alive: &[bool],
) -> Result<Option<RecoverySummary>, CliError> {
    let path = cfg.out(GROUND_TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let file: GroundTruthFile = read_json(&path)?;
    let gt = GroundTruth::try_from(file)?;
    if gt.d() != params.d() {
        tracing::warn!("ground truth dimension differs from the checkpoint; skipping recovery");
        return Ok(None);
    }
    let null = random_decoder(
        params.d(),
        params.m(),
        cfg.stage_seed("analyze/null-decoder"),
    );
    Ok(Some(RecoverySummary {
        score: recovery_score(&params.w_dec, &gt).mean,
        score_alive: recovery_score_masked(&params.w_dec, &gt, Some(alive)).mean,
        null_baseline: recovery_score(&null, &gt).mean,
    }))
}

/// Gaussian `d x m` matrix, the null model for recovery scores.
pub fn random_decoder(d: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng))
}
