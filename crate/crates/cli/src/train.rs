use std::fs::File;
use std::io::{BufWriter, Write};

use saekit::embedding_io::{apply_normalization, fit_normalization, read_matrix};
use saekit::sae::{save_checkpoint, train_with_progress, CheckpointMeta, EpochRecord};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, CHECKPOINT_FILE, PROGRESS_FILE, TRAIN_REPORT_FILE};
use crate::error::CliError;
use crate::files::write_json;

/// Training outcome as persisted. Wall time is logged, never written, so
/// reruns produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub n_train: usize,
    pub d: usize,
    pub m: usize,
    pub epochs: usize,
    pub final_epoch: Option<EpochRecord>,
    pub l0_rate: f64,
    pub fve: f64,
    pub dead_fraction: f64,
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    cfg.require_inputs(&[
        ("training embeddings", cfg.train_embeddings()),
        ("labels", cfg.labels()),
    ])?;
    let raw = read_matrix(cfg.train_embeddings())?;
    let stats = fit_normalization(&raw)?;
    let data = apply_normalization(&raw, &stats)?;
    drop(raw);

    let mut tc = cfg.train.clone();
    tc.seed = cfg.stage_seed("train");

    let out = cfg.output_dir();
    std::fs::create_dir_all(&out)?;
    let mut progress = BufWriter::new(File::create(out.join(PROGRESS_FILE))?);
    let mut write_err = None;
    let (params, report) = train_with_progress(&tc, &data, |rec| {
        tracing::info!(
            epoch = rec.epoch,
            loss = rec.total,
            l0 = rec.l0_rate,
            dead = rec.dead_fraction,
            "epoch done"
        );
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(progress, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    progress.flush()?;
    tracing::info!(seconds = report.wall_time_secs, "training finished");

    let meta = CheckpointMeta {
        d: params.d(),
        m: params.m(),
        expansion_factor: tc.expansion_factor,
        lambda: tc.l1_coefficient,
        seed: tc.seed,
        normalization: stats,
        epoch: report.epochs.len(),
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &params, &meta)?;

    let summary = TrainSummary {
        n_train: data.rows(),
        d: params.d(),
        m: params.m(),
        epochs: report.epochs.len(),
        final_epoch: report.epochs.last().cloned(),
        l0_rate: report.l0_rate,
        fve: report.fve,
        dead_fraction: report.dead_fraction,
    };
    write_json(&out.join(TRAIN_REPORT_FILE), &summary)?;
    Ok(summary)
}
