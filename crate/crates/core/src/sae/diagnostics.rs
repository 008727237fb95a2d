use super::{Result, SaeError};
use crate::matrix::Matrix;

/// Mean fraction of strictly positive latents per sample.
pub fn l0_rate(z: &Matrix) -> f64 {
    let (n, m) = z.shape();
    if n == 0 || m == 0 {
        return 0.0;
    }
    let active = z.as_slice().iter().filter(|v| **v > 0.0).count();
    active as f64 / (n as f64 * m as f64)
}

/// Fraction of variance explained: `1 - sum ||x - x_hat||^2 / sum ||x - mean(x)||^2`.
pub fn fve(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(SaeError::DimensionMismatch {
            expected: x.cols(),
            found: x_hat.cols(),
        });
    }
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for row in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n.max(1) as f64;
    }
    let mut residual = 0.0;
    let mut total = 0.0;
    for (row, hat) in x.row_iter().zip(x_hat.row_iter()) {
        for i in 0..d {
            let e = row[i] - hat[i];
            residual += e * e;
            let c = row[i] - mean[i];
            total += c * c;
        }
    }
    if total == 0.0 {
        return Err(SaeError::DegenerateData(
            "input has zero total variance".into(),
        ));
    }
    Ok(1.0 - residual / total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeadNeurons {
    pub alive: Vec<bool>,
    pub dead_fraction: f64,
}

/// A latent is dead when its maximum activation over `z` is `<= threshold`.
pub fn dead_neurons(z: &Matrix, threshold: f64) -> DeadNeurons {
    let m = z.cols();
    let mut alive = vec![false; m];
    for row in z.row_iter() {
        for (a, v) in alive.iter_mut().zip(row) {
            if *v > threshold {
                *a = true;
            }
        }
    }
    let dead = alive.iter().filter(|a| !**a).count();
    DeadNeurons {
        dead_fraction: if m == 0 { 0.0 } else { dead as f64 / m as f64 },
        alive,
    }
}
