use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, dead_neurons, decode, encode, fve, grad_loss_tracking, l0_rate, AdamState,
    LossBreakdown, Result, SaeError, SaeParams,
};
use crate::matrix::Matrix;

/// Optimizer and architecture settings. Defaults are the reference
/// configuration for 512-dimensional image embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l1_coefficient: f64,
    pub expansion_factor: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Activation level at or below which a latent counts as dead.
    pub dead_threshold: f64,
    pub normalize_decoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 7e-6,
            l1_coefficient: 3e-4,
            expansion_factor: 16,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            dead_threshold: 0.0,
            normalize_decoder: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SaeError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l1_coefficient >= 0.0 && self.l1_coefficient.is_finite()) {
            return bad("l1_coefficient must be non-negative");
        }
        if self.expansion_factor < 1 {
            return bad("expansion_factor must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        Ok(())
    }
}

/// Per-epoch training record, also the line format of the progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub reconstruction: f64,
    pub sparsity: f64,
    pub total: f64,
    /// Over the epoch's forward passes, before each step.
    pub l0_rate: f64,
    /// Fraction of latents that never fired during the epoch.
    pub dead_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub l0_rate: f64,
    pub fve: f64,
    pub dead_fraction: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<LossBreakdown> {
        self.epochs
            .iter()
            .map(|e| LossBreakdown {
                reconstruction: e.reconstruction,
                sparsity: e.sparsity,
                total: e.total,
            })
            .collect()
    }
}

pub fn train(cfg: &TrainConfig, data: &Matrix) -> Result<(SaeParams, TrainReport)> {
    train_with_progress(cfg, data, |_| {})
}

/// Trains from `SaeParams::init(d, d * expansion, seed)`.
///
/// Each epoch visits the rows in an order drawn by Fisher-Yates from a ChaCha
/// stream keyed on `(seed, epoch)`; the final partial batch is kept. The
/// whole run is single-threaded and bit-reproducible.
pub fn train_with_progress(
    cfg: &TrainConfig,
    data: &Matrix,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(SaeParams, TrainReport)> {
    cfg.validate()?;
    let (n, d) = data.shape();
    if n < cfg.batch_size {
        return Err(SaeError::InsufficientData {
            rows: n,
            batch_size: cfg.batch_size,
        });
    }
    if d == 0 {
        return Err(SaeError::DegenerateData("zero-width data".into()));
    }
    let m = d * cfg.expansion_factor;
    let start = Instant::now();

    let mut params = SaeParams::init(d, m, cfg.seed);
    let mut state = AdamState::new(d, m);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let (mut rec, mut sp, mut tot) = (0.0, 0.0, 0.0);
        let mut fired = vec![false; m];
        let mut active = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let xb = data.select_rows(batch);
            let (g, l, fired_count) =
                grad_loss_tracking(&params, &xb, cfg.l1_coefficient, Some(&mut fired))?;
            if !l.total.is_finite() {
                return Err(SaeError::NonFiniteLoss { epoch, batch: b });
            }
            let w = batch.len() as f64;
            rec += l.reconstruction * w;
            sp += l.sparsity * w;
            tot += l.total * w;
            active += fired_count;
            adam_step(&mut params, g, &mut state, cfg);
        }
        let nf = n as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            reconstruction: rec / nf,
            sparsity: sp / nf,
            total: tot / nf,
            l0_rate: active as f64 / (nf * m as f64),
            dead_fraction: fired.iter().filter(|f| !**f).count() as f64 / m as f64,
        };
        on_epoch(&record);
        records.push(record);
    }

    let z = encode(&params, data)?;
    let x_hat = decode(&params, &z)?;
    let report = TrainReport {
        epochs: records,
        l0_rate: l0_rate(&z),
        fve: fve(data, &x_hat)?,
        dead_fraction: dead_neurons(&z, cfg.dead_threshold).dead_fraction,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}
