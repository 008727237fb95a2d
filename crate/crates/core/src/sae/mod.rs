//! Single-layer ReLU sparse autoencoder.
//!
//! ```text
//! z     = ReLU(W_enc (x - b_pre) + b_enc)
//! x_hat = W_dec z + b_pre
//! L     = mean_batch ||x - x_hat||^2 + lambda * mean_batch ||z||_1
//! ```
//!
//! `W_enc` is stored `m x d` (one encoder row per latent) and `W_dec` is
//! `d x m` (one dictionary direction per column).

mod adam;
mod checkpoint;
mod diagnostics;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, CheckpointMeta};
pub use diagnostics::{dead_neurons, fve, l0_rate, DeadNeurons};
pub use train::{train, train_with_progress, EpochRecord, TrainConfig, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::embedding_io::EmbeddingIoError;
use crate::matrix::{dot, Matrix};

#[derive(Debug, Error)]
pub enum SaeError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data has {rows} rows, fewer than batch size {batch_size}")]
    InsufficientData { rows: usize, batch_size: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Format(#[from] EmbeddingIoError),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SaeError>;

/// Autoencoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    /// `m x d`
    pub w_enc: Matrix,
    /// `d x m`
    pub w_dec: Matrix,
    /// length `d`
    pub b_pre: Vec<f64>,
    /// length `m`
    pub b_enc: Vec<f64>,
}

/// Gradients, shaped like [`SaeParams`].
pub type SaeGrads = SaeParams;

impl SaeParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            w_enc: Matrix::zeros(m, d),
            w_dec: Matrix::zeros(d, m),
            b_pre: vec![0.0; d],
            b_enc: vec![0.0; m],
        }
    }

    /// Gaussian decoder columns normalized to unit length, encoder set to the
    /// decoder transpose, zero biases.
    pub fn init(d: usize, m: usize, seed: u64) -> Self {
        assert!(d >= 1 && m >= 1, "init_params needs d >= 1 and m >= 1");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_dec = Matrix::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng));
        normalize_columns(&mut w_dec);
        Self {
            w_enc: w_dec.transpose(),
            w_dec,
            b_pre: vec![0.0; d],
            b_enc: vec![0.0; m],
        }
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.b_pre.len()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.b_enc.len()
    }

    /// Checks internal shape consistency and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (d, m) = (self.d(), self.m());
        if self.w_enc.shape() != (m, d) {
            return Err(SaeError::Checkpoint(format!(
                "w_enc is {:?}, expected ({m}, {d})",
                self.w_enc.shape()
            )));
        }
        if self.w_dec.shape() != (d, m) {
            return Err(SaeError::Checkpoint(format!(
                "w_dec is {:?}, expected ({d}, {m})",
                self.w_dec.shape()
            )));
        }
        let finite = self.w_enc.first_non_finite().is_none()
            && self.w_dec.first_non_finite().is_none()
            && self.b_pre.iter().chain(&self.b_enc).all(|v| v.is_finite());
        if !finite {
            return Err(SaeError::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Euclidean norm of every decoder column.
    pub fn decoder_column_norms(&self) -> Vec<f64> {
        column_norms(&self.w_dec)
    }
}

pub(crate) fn column_norms(w: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; w.cols()];
    for row in w.row_iter() {
        for (s, v) in sq.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Scales each nonzero column to unit Euclidean norm.
pub(crate) fn normalize_columns(w: &mut Matrix) {
    let norms = column_norms(w);
    for r in 0..w.rows() {
        for (v, n) in w.row_mut(r).iter_mut().zip(&norms) {
            if *n > 0.0 {
                *v /= n;
            }
        }
    }
}

fn check_cols(x: &Matrix, expected: usize) -> Result<()> {
    if x.cols() != expected {
        return Err(SaeError::DimensionMismatch {
            expected,
            found: x.cols(),
        });
    }
    Ok(())
}

/// Pre-activations for one input row, written into `pre`. `centered`
/// receives `x - b_pre`.
#[inline]
fn preactivate(p: &SaeParams, x: &[f64], centered: &mut [f64], pre: &mut [f64]) {
    for ((c, xi), b) in centered.iter_mut().zip(x).zip(&p.b_pre) {
        *c = xi - b;
    }
    for (j, out) in pre.iter_mut().enumerate() {
        *out = dot(p.w_enc.row(j), centered) + p.b_enc[j];
    }
}

/// Latent activations, `n x m`, entrywise non-negative.
pub fn encode(p: &SaeParams, x: &Matrix) -> Result<Matrix> {
    check_cols(x, p.d())?;
    let (d, m) = (p.d(), p.m());
    let mut z = Matrix::zeros(x.rows(), m);
    let mut centered = vec![0.0; d];
    for r in 0..x.rows() {
        let out = z.row_mut(r);
        preactivate(p, x.row(r), &mut centered, out);
        for v in out.iter_mut() {
            *v = v.max(0.0);
        }
    }
    Ok(z)
}

/// Reconstructions, `n x d`.
pub fn decode(p: &SaeParams, z: &Matrix) -> Result<Matrix> {
    check_cols(z, p.m())?;
    let d = p.d();
    let mut out = Matrix::zeros(z.rows(), d);
    for r in 0..z.rows() {
        let zr = z.row(r);
        let row = out.row_mut(r);
        for (i, o) in row.iter_mut().enumerate() {
            *o = dot(p.w_dec.row(i), zr) + p.b_pre[i];
        }
    }
    Ok(out)
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub sparsity: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn from_sums(rec: f64, sparsity: f64, n: usize, lambda: f64) -> Self {
        let inv = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        let reconstruction = rec * inv;
        let sparsity = sparsity * inv;
        Self {
            reconstruction,
            sparsity,
            total: reconstruction + lambda * sparsity,
        }
    }
}

pub fn loss(p: &SaeParams, x: &Matrix, lambda: f64) -> Result<LossBreakdown> {
    check_cols(x, p.d())?;
    let (d, m) = (p.d(), p.m());
    let mut centered = vec![0.0; d];
    let mut pre = vec![0.0; m];
    let mut xhat = vec![0.0; d];
    let (mut rec, mut l1) = (0.0, 0.0);
    for row in x.row_iter() {
        preactivate(p, row, &mut centered, &mut pre);
        xhat.copy_from_slice(&p.b_pre);
        for (j, &a) in pre.iter().enumerate() {
            if a > 0.0 {
                l1 += a;
                for (i, xh) in xhat.iter_mut().enumerate() {
                    *xh += p.w_dec.get(i, j) * a;
                }
            }
        }
        rec += xhat
            .iter()
            .zip(row)
            .map(|(h, v)| (h - v) * (h - v))
            .sum::<f64>();
    }
    Ok(LossBreakdown::from_sums(rec, l1, x.rows(), lambda))
}

/// Analytic gradient of the batch-mean loss.
pub fn grad(p: &SaeParams, x: &Matrix, lambda: f64) -> Result<SaeGrads> {
    grad_and_loss(p, x, lambda).map(|(g, _)| g)
}

/// Gradient together with the loss of the same forward pass.
///
/// Only latents with positive pre-activation carry gradient (ReLU and L1
/// subgradients at zero are zero), so the per-row work outside the dense
/// encoder product scales with the number of active latents.
pub fn grad_and_loss(p: &SaeParams, x: &Matrix, lambda: f64) -> Result<(SaeGrads, LossBreakdown)> {
    grad_loss_tracking(p, x, lambda, None).map(|(g, l, _)| (g, l))
}

/// [`grad_and_loss`] that also marks every latent that fired in `fired` and
/// returns the number of positive activations seen.
pub(crate) fn grad_loss_tracking(
    p: &SaeParams,
    x: &Matrix,
    lambda: f64,
    mut fired: Option<&mut [bool]>,
) -> Result<(SaeGrads, LossBreakdown, usize)> {
    check_cols(x, p.d())?;
    let (d, m) = (p.d(), p.m());
    let n = x.rows();
    let mut g = SaeParams::zeros(d, m);
    if n == 0 {
        return Ok((g, LossBreakdown::from_sums(0.0, 0.0, 0, lambda), 0));
    }
    let inv_n = 1.0 / n as f64;
    let l1_grad = lambda * inv_n;

    let mut centered = vec![0.0; d];
    let mut pre = vec![0.0; m];
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    let mut active: Vec<usize> = Vec::with_capacity(m);
    let (mut rec, mut l1) = (0.0, 0.0);
    let mut active_total = 0;

    for row in x.row_iter() {
        preactivate(p, row, &mut centered, &mut pre);
        active.clear();
        active.extend((0..m).filter(|&j| pre[j] > 0.0));
        active_total += active.len();
        if let Some(f) = fired.as_deref_mut() {
            for &j in &active {
                f[j] = true;
            }
        }

        xhat.copy_from_slice(&p.b_pre);
        for &j in &active {
            let a = pre[j];
            l1 += a;
            for (i, xh) in xhat.iter_mut().enumerate() {
                *xh += p.w_dec.get(i, j) * a;
            }
        }
        for i in 0..d {
            let r = xhat[i] - row[i];
            rec += r * r;
            dxhat[i] = 2.0 * r * inv_n;
            g.b_pre[i] += dxhat[i];
        }

        for &j in &active {
            let a = pre[j];
            let mut dz = l1_grad;
            for (i, dx) in dxhat.iter().enumerate() {
                dz += p.w_dec.get(i, j) * dx;
                let gd = g.w_dec.get(i, j);
                g.w_dec.set(i, j, gd + dx * a);
            }
            g.b_enc[j] += dz;
            for (gb, e) in g.b_pre.iter_mut().zip(p.w_enc.row(j)) {
                *gb -= dz * e;
            }
            for (ge, c) in g.w_enc.row_mut(j).iter_mut().zip(&centered) {
                *ge += dz * c;
            }
        }
    }
    Ok((
        g,
        LossBreakdown::from_sums(rec, l1, n, lambda),
        active_total,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_normalized() {
        let a = SaeParams::init(4, 8, 7);
        let b = SaeParams::init(4, 8, 7);
        assert_eq!(a, b);
        for n in a.decoder_column_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(a.b_enc.iter().all(|v| *v == 0.0));
        assert!(a.b_pre.iter().all(|v| *v == 0.0));
        assert_eq!(a.w_enc, a.w_dec.transpose());
        assert_ne!(a, SaeParams::init(4, 8, 8));
    }

    #[test]
    fn encode_clips_negative() {
        let mut p = SaeParams::zeros(2, 2);
        p.w_enc = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let z = encode(&p, &Matrix::from_rows(&[[-1.0, 2.0]])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn encode_at_b_pre_gives_relu_b_enc() {
        let mut p = SaeParams::init(3, 5, 1);
        p.b_pre = vec![0.2, -0.4, 1.0];
        p.b_enc = vec![0.5, -0.1, 0.0, 2.0, -3.0];
        let z = encode(&p, &Matrix::row_vector(p.b_pre.clone())).unwrap();
        assert_eq!(z.as_slice(), &[0.5, 0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn decode_zero_and_one_hot() {
        let mut p = SaeParams::init(3, 4, 2);
        p.b_pre = vec![1.0, 2.0, 3.0];
        let out = decode(&p, &Matrix::zeros(2, 4)).unwrap();
        assert_eq!(out.row(1), &[1.0, 2.0, 3.0]);
        let mut z = Matrix::zeros(1, 4);
        z.set(0, 2, 2.5);
        let out = decode(&p, &z).unwrap();
        for i in 0..3 {
            let expect = 2.5 * p.w_dec.get(i, 2) + p.b_pre[i];
            assert!((out.get(0, i) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_errors() {
        let p = SaeParams::init(3, 4, 2);
        assert!(matches!(
            encode(&p, &Matrix::zeros(1, 2)),
            Err(SaeError::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
        assert!(decode(&p, &Matrix::zeros(1, 3)).is_err());
        assert!(loss(&p, &Matrix::zeros(1, 4), 0.1).is_err());
        assert!(grad(&p, &Matrix::zeros(1, 4), 0.1).is_err());
    }

    #[test]
    fn perfect_autoencoder_has_zero_loss() {
        // z == 0 everywhere and x == b_pre reconstructs exactly
        let mut p = SaeParams::zeros(2, 3);
        p.b_pre = vec![0.5, -1.0];
        p.b_enc = vec![-1.0; 3];
        let x = Matrix::from_rows(&[[0.5, -1.0], [0.5, -1.0]]);
        let l = loss(&p, &x, 0.3).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn zero_lambda_total_is_reconstruction() {
        let p = SaeParams::init(4, 6, 3);
        let x = Matrix::from_fn(5, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let l = loss(&p, &x, 0.0).unwrap();
        assert_eq!(l.total, l.reconstruction);
    }

    #[test]
    fn zero_batch_zero_biases_b_pre_grad_vanishes() {
        let p = SaeParams::init(4, 6, 3);
        let g = grad(&p, &Matrix::zeros(3, 4), 0.1).unwrap();
        assert!(g.b_pre.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grad_and_loss_agree_with_loss() {
        let mut p = SaeParams::init(5, 9, 4);
        p.b_enc = (0..9).map(|j| 0.1 * j as f64 - 0.3).collect();
        let x = Matrix::from_fn(6, 5, |r, c| ((r * 11 + c * 5) % 7) as f64 * 0.3 - 1.0);
        let (_, a) = grad_and_loss(&p, &x, 0.05).unwrap();
        let b = loss(&p, &x, 0.05).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }
}
