//! Monosemanticity metrics.
//!
//! For every latent `i` and label `j` the population Pearson correlation
//! `rho_ij` between activations and label indicators is computed. The
//! absolute correlations of a latent are normalized into a distribution over
//! labels, `p_ij = |rho_ij| / sum_l |rho_il|`, and its base-2 Shannon entropy
//! measures how concentrated the latent is on a single concept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_io::LabelMatrix;
use crate::matrix::Matrix;
use crate::sae::{self, SaeError, SaeParams};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no neuron has a defined entropy")]
    NoDefinedNeurons,
    #[error("index {index} out of range for {len} neurons")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Sae(#[from] SaeError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Default row chunk for [`activation_matrix`].
pub const DEFAULT_CHUNK_ROWS: usize = 512;

/// `encode(p, data)` evaluated in row chunks, chunks in parallel.
///
/// Rows are independent, so the result is bitwise identical to a single
/// [`sae::encode`] call for any chunk size.
pub fn activation_matrix(p: &SaeParams, data: &Matrix, chunk_rows: usize) -> Result<Matrix> {
    let chunk_rows = chunk_rows.max(1);
    let n = data.rows();
    let starts: Vec<usize> = (0..n).step_by(chunk_rows).collect();
    let parts: Vec<Matrix> = starts
        .par_iter()
        .map(|&s| sae::encode(p, &data.slice_rows(s, (s + chunk_rows).min(n))))
        .collect::<std::result::Result<_, _>>()?;
    let mut z = sae::encode(p, &Matrix::zeros(0, p.d()))?;
    for part in &parts {
        z.extend_rows(part);
    }
    Ok(z)
}

/// Streams activations chunk by chunk without materializing the full matrix.
/// `f` receives the first row index of each chunk and its activations.
pub fn for_each_activation_chunk(
    p: &SaeParams,
    data: &Matrix,
    chunk_rows: usize,
    mut f: impl FnMut(usize, &Matrix),
) -> Result<()> {
    let chunk_rows = chunk_rows.max(1);
    for s in (0..data.rows()).step_by(chunk_rows) {
        let z = sae::encode(p, &data.slice_rows(s, (s + chunk_rows).min(data.rows())))?;
        f(s, &z);
    }
    Ok(())
}

/// Neuron-by-label Pearson correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    /// `m x k`; zero where invalid.
    pub values: Matrix,
    /// Row-major `m x k`; false where either variable has zero variance.
    pub valid: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn neuron_count(&self) -> usize {
        self.values.rows()
    }

    pub fn label_count(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, neuron: usize, label: usize) -> Option<f64> {
        let k = self.label_count();
        self.valid[neuron * k + label].then(|| self.values.get(neuron, label))
    }
}

fn is_constant(col: &[f64]) -> bool {
    col.iter().all(|v| *v == col[0])
}

/// Mean-centered column and its population standard deviation; `None` for a
/// constant column.
fn center(col: &[f64]) -> Option<(Vec<f64>, f64)> {
    if col.is_empty() || is_constant(col) {
        return None;
    }
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let centered: Vec<f64> = col.iter().map(|v| v - mean).collect();
    let var = centered.iter().map(|v| v * v).sum::<f64>() / n;
    (var > 0.0).then_some((centered, var.sqrt()))
}

/// Population-moment Pearson correlation of every activation column against
/// every label column. Pairs involving a constant column are marked invalid.
pub fn pearson(z: &Matrix, y: &LabelMatrix) -> Result<CorrelationMatrix> {
    pearson_columns(z, y.values())
}

pub(crate) fn pearson_columns(z: &Matrix, y: &Matrix) -> Result<CorrelationMatrix> {
    if z.rows() != y.rows() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} activation rows vs {} label rows",
            z.rows(),
            y.rows()
        )));
    }
    if z.rows() < 2 {
        return Err(MetricsError::ShapeMismatch(format!(
            "need at least 2 samples, got {}",
            z.rows()
        )));
    }
    let n = z.rows() as f64;
    let (m, k) = (z.cols(), y.cols());
    let labels: Vec<Option<(Vec<f64>, f64)>> = (0..k).map(|j| center(&y.column(j))).collect();
    let zt = z.transpose();

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut vals = vec![0.0; k];
            let mut ok = vec![false; k];
            if let Some((zc, sz)) = center(zt.row(i)) {
                for (j, label) in labels.iter().enumerate() {
                    if let Some((yc, sy)) = label {
                        let cov = zc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n;
                        vals[j] = (cov / (sz * sy)).clamp(-1.0, 1.0);
                        ok[j] = true;
                    }
                }
            }
            (vals, ok)
        })
        .collect();

    let mut values = Matrix::zeros(m, k);
    let mut valid = Vec::with_capacity(m * k);
    for (i, (vals, ok)) in rows.into_iter().enumerate() {
        values.row_mut(i).copy_from_slice(&vals);
        valid.extend(ok);
    }
    Ok(CorrelationMatrix { values, valid })
}

/// Normalized absolute correlation row; invalid entries count as zero.
/// `None` when nothing is valid or every valid correlation is zero.
pub fn concept_distribution_row(c: &CorrelationMatrix, neuron: usize) -> Option<Vec<f64>> {
    let k = c.label_count();
    let abs: Vec<f64> = (0..k)
        .map(|j| c.get(neuron, j).map_or(0.0, f64::abs))
        .collect();
    let total: f64 = abs.iter().sum();
    (total > 0.0).then(|| abs.iter().map(|a| a / total).collect())
}

pub fn concept_distribution(c: &CorrelationMatrix) -> Vec<Option<Vec<f64>>> {
    (0..c.neuron_count())
        .map(|i| concept_distribution_row(c, i))
        .collect()
}

/// Shannon entropy in bits, with `0 log 0 = 0`, clamped to `[0, log2 k]`.
pub fn entropy(dist: &[f64]) -> f64 {
    let h: f64 = dist
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.log2())
        .sum();
    let max = (dist.len().max(1) as f64).log2();
    // adding 0.0 turns -0.0 (one-hot input) into +0.0
    h.clamp(0.0, max) + 0.0
}

/// Indices of the `count` largest values of column `neuron`, largest first,
/// ties broken by ascending sample index.
pub fn top_activating(z: &Matrix, neuron: usize, count: usize) -> Result<Vec<usize>> {
    if neuron >= z.cols() {
        return Err(MetricsError::IndexOutOfRange {
            index: neuron,
            len: z.cols(),
        });
    }
    Ok(top_of_column(&z.column(neuron), count))
}

pub(crate) fn top_of_column(col: &[f64], count: usize) -> Vec<usize> {
    let order = |a: &usize, b: &usize| col[*b].total_cmp(&col[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..col.len()).collect();
    let count = count.min(idx.len());
    if count == 0 {
        return Vec::new();
    }
    if count < idx.len() {
        idx.select_nth_unstable_by(count - 1, order);
        idx.truncate(count);
    }
    idx.sort_unstable_by(order);
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestLabel {
    pub index: usize,
    pub name: String,
}

/// Per-neuron summary; one JSON line per neuron in profile exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronProfile {
    pub neuron_id: usize,
    /// Bits; `None` when the distribution is undefined.
    pub entropy: Option<f64>,
    pub best_label: Option<BestLabel>,
    pub best_abs_correlation: f64,
    pub alive: bool,
    pub distribution: Option<Vec<f64>>,
    pub top_samples: Vec<usize>,
}

/// Profiles for every column of `z`.
///
/// `alive` overrides the liveness flag; when absent a column is alive iff it
/// is not constant.
pub fn neuron_profiles(
    z: &Matrix,
    y: &LabelMatrix,
    alive: Option<&[bool]>,
    n_top: usize,
) -> Result<Vec<NeuronProfile>> {
    let corr = pearson(z, y)?;
    let zt = z.transpose();
    let k = y.label_count();
    let profiles = (0..z.cols())
        .into_par_iter()
        .map(|i| {
            let col = zt.row(i);
            let distribution = concept_distribution_row(&corr, i);
            let mut best: Option<(usize, f64)> = None;
            for j in 0..k {
                if let Some(r) = corr.get(i, j) {
                    if best.is_none_or(|(_, b)| r.abs() > b) {
                        best = Some((j, r.abs()));
                    }
                }
            }
            NeuronProfile {
                neuron_id: i,
                entropy: distribution.as_deref().map(entropy),
                best_label: best.map(|(j, _)| BestLabel {
                    index: j,
                    name: y.names()[j].clone(),
                }),
                best_abs_correlation: best.map_or(0.0, |(_, r)| r),
                alive: alive.map_or_else(|| !is_constant(col), |a| a[i]),
                distribution,
                top_samples: top_of_column(col, n_top),
            }
        })
        .collect();
    Ok(profiles)
}

/// Baseline profiles over raw embedding dimensions, through the same code
/// path as latent profiles.
pub fn raw_feature_profiles(
    embeddings: &Matrix,
    y: &LabelMatrix,
    n_top: usize,
) -> Result<Vec<NeuronProfile>> {
    neuron_profiles(embeddings, y, None, n_top)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEntropy {
    pub mean: f64,
    pub included: usize,
    pub excluded: usize,
}

/// Mean over alive neurons with a defined entropy.
pub fn mean_entropy(profiles: &[NeuronProfile]) -> Result<MeanEntropy> {
    let defined: Vec<f64> = profiles
        .iter()
        .filter(|p| p.alive)
        .filter_map(|p| p.entropy)
        .collect();
    if defined.is_empty() {
        return Err(MetricsError::NoDefinedNeurons);
    }
    Ok(MeanEntropy {
        mean: defined.iter().sum::<f64>() / defined.len() as f64,
        included: defined.len(),
        excluded: profiles.len() - defined.len(),
    })
}

/// Mean over every neuron, scoring undefined or dead neurons at the maximum
/// entropy `log2(label_count)`.
pub fn mean_entropy_dead_as_max(
    profiles: &[NeuronProfile],
    label_count: usize,
) -> Result<MeanEntropy> {
    if profiles.is_empty() {
        return Err(MetricsError::NoDefinedNeurons);
    }
    let max = (label_count.max(1) as f64).log2();
    let sum: f64 = profiles
        .iter()
        .map(|p| match (p.alive, p.entropy) {
            (true, Some(h)) => h,
            _ => max,
        })
        .sum();
    Ok(MeanEntropy {
        mean: sum / profiles.len() as f64,
        included: profiles.len(),
        excluded: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(rows: &[[f64; 2]]) -> LabelMatrix {
        LabelMatrix::new(Matrix::from_rows(rows), vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn identical_column_correlates_perfectly() {
        let y = labels(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
        let z = Matrix::from_rows(&[[1.0, 3.0], [0.0, 3.0], [1.0, 3.0], [1.0, 3.0]]);
        let c = pearson(&z, &y).unwrap();
        assert!((c.get(0, 0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(c.get(1, 0), None);
        assert_eq!(c.get(1, 1), None);
        assert!(concept_distribution_row(&c, 1).is_none());
    }

    #[test]
    fn pearson_shape_errors() {
        let y = labels(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(pearson(&Matrix::zeros(3, 1), &y).is_err());
        let y1 = labels(&[[1.0, 0.0]]);
        assert!(pearson(&Matrix::zeros(1, 1), &y1).is_err());
    }

    #[test]
    fn distribution_examples() {
        let c = CorrelationMatrix {
            values: Matrix::from_rows(&[[0.5, -0.5, 0.0], [0.7, 0.0, 0.0], [0.0, 0.0, 0.0]]),
            valid: vec![true; 9],
        };
        let d = concept_distribution(&c);
        assert_eq!(d[0].as_deref(), Some(&[0.5, 0.5, 0.0][..]));
        assert_eq!(d[1].as_deref(), Some(&[1.0, 0.0, 0.0][..]));
        assert_eq!(d[2], None);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert_eq!(entropy(&[0.5, 0.5]), 1.0);
        let u = vec![1.0 / 14.0; 14];
        assert!((entropy(&u) - 14f64.log2()).abs() < 1e-12);
        assert!((14f64.log2() - 3.8074).abs() < 1e-4);
    }

    #[test]
    fn mean_entropy_examples() {
        let mk = |h: Option<f64>, alive| NeuronProfile {
            neuron_id: 0,
            entropy: h,
            best_label: None,
            best_abs_correlation: 0.0,
            alive,
            distribution: None,
            top_samples: vec![],
        };
        let m = mean_entropy(&[mk(Some(0.0), true), mk(Some(1.0), true), mk(None, false)]).unwrap();
        assert_eq!(m.mean, 0.5);
        assert_eq!((m.included, m.excluded), (2, 1));
        assert!(matches!(
            mean_entropy(&[mk(None, false), mk(None, true)]),
            Err(MetricsError::NoDefinedNeurons)
        ));
        let all = mean_entropy_dead_as_max(&[mk(Some(0.0), true), mk(None, false)], 4).unwrap();
        assert_eq!(all.mean, 1.0);
    }

    #[test]
    fn top_activating_examples() {
        let z = Matrix::from_rows(&[[0.0], [5.0], [3.0]]);
        assert_eq!(top_activating(&z, 0, 2).unwrap(), vec![1, 2]);
        let flat = Matrix::from_rows(&[[1.0], [1.0], [1.0]]);
        assert_eq!(top_activating(&flat, 0, 2).unwrap(), vec![0, 1]);
        assert_eq!(top_activating(&flat, 0, 10).unwrap(), vec![0, 1, 2]);
        assert!(matches!(
            top_activating(&z, 1, 1),
            Err(MetricsError::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn chunked_activations_match_unchunked() {
        let p = SaeParams::init(4, 12, 3);
        let x = Matrix::from_fn(10, 4, |r, c| ((r * 5 + c * 7) % 9) as f64 / 3.0 - 1.2);
        let full = sae::encode(&p, &x).unwrap();
        assert_eq!(activation_matrix(&p, &x, 3).unwrap(), full);
        assert_eq!(
            activation_matrix(&p, &x.slice_rows(4, 5), 3)
                .unwrap()
                .row(0),
            full.row(4)
        );
        let mut streamed = Matrix::zeros(0, 12);
        for_each_activation_chunk(&p, &x, 4, |_, z| streamed.extend_rows(z)).unwrap();
        assert_eq!(streamed, full);
    }

    #[test]
    fn profiles_shape_and_best_label() {
        let y = labels(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.0]]);
        let z = Matrix::from_rows(&[[2.0, 0.0], [0.0, 0.0], [1.5, 0.0], [0.1, 0.0]]);
        let ps = neuron_profiles(&z, &y, None, 2).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].best_label.as_ref().unwrap().name, "a");
        assert_eq!(ps[0].top_samples, vec![0, 2]);
        assert!(!ps[1].alive);
        assert_eq!(ps[1].entropy, None);
    }
}
