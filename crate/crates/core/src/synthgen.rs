//! Synthetic superposition data with a known dictionary.
//!
//! `t` unit-norm feature directions live in `d` dimensions (usually `t > d`).
//! Each sample switches every feature on independently with probability
//! `sparsity / t`, gives active features a coefficient in `[0.5, 1.5]`, sums
//! the directions and adds isotropic Gaussian noise. Feature `f` belongs to
//! label `f % k`; a sample carries label `j` when any of its features does.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_io::LabelMatrix;
use crate::matrix::{dot, norm2, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `d x t`, unit-norm columns.
    pub dictionary: Matrix,
    /// Label index of every feature.
    pub feature_labels: Vec<usize>,
    pub label_count: usize,
    /// Expected number of active features per sample.
    pub sparsity: f64,
    pub seed: u64,
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.dictionary.rows()
    }

    pub fn t(&self) -> usize {
        self.dictionary.cols()
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.label_count)
            .map(|j| format!("label_{j}"))
            .collect()
    }
}

/// JSON sidecar form of [`GroundTruth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub d: usize,
    pub t: usize,
    pub k: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub feature_labels: Vec<usize>,
    pub label_names: Vec<String>,
    /// Row-major `d x t`.
    pub dictionary: Vec<f64>,
}

impl From<&GroundTruth> for GroundTruthFile {
    fn from(gt: &GroundTruth) -> Self {
        Self {
            d: gt.d(),
            t: gt.t(),
            k: gt.label_count,
            sparsity: gt.sparsity,
            seed: gt.seed,
            feature_labels: gt.feature_labels.clone(),
            label_names: gt.label_names(),
            dictionary: gt.dictionary.as_slice().to_vec(),
        }
    }
}

impl TryFrom<GroundTruthFile> for GroundTruth {
    type Error = SynthError;

    fn try_from(f: GroundTruthFile) -> Result<Self, SynthError> {
        let dictionary = Matrix::new(f.d, f.t, f.dictionary)
            .map_err(|e| SynthError::InvalidShape(e.to_string()))?;
        if f.feature_labels.len() != f.t || f.feature_labels.iter().any(|&l| l >= f.k) {
            return Err(SynthError::InvalidShape("bad feature label map".into()));
        }
        Ok(GroundTruth {
            dictionary,
            feature_labels: f.feature_labels,
            label_count: f.k,
            sparsity: f.sparsity,
            seed: f.seed,
        })
    }
}

pub fn gen_ground_truth(
    d: usize,
    t: usize,
    k: usize,
    sparsity: f64,
    seed: u64,
) -> Result<GroundTruth, SynthError> {
    if d < 2 {
        return Err(SynthError::InvalidShape(format!("d = {d}, need d >= 2")));
    }
    if k < 1 || t < k {
        return Err(SynthError::InvalidShape(format!(
            "need t >= k >= 1, got t = {t}, k = {k}"
        )));
    }
    if !(sparsity >= 1.0 && sparsity <= t as f64) {
        return Err(SynthError::InvalidShape(format!(
            "sparsity {sparsity} outside [1, {t}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dictionary = Matrix::zeros(d, t);
    let mut col = vec![0.0; d];
    for f in 0..t {
        loop {
            for v in col.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let n = norm2(&col);
            if n > 1e-8 {
                for (i, v) in col.iter().enumerate() {
                    dictionary.set(i, f, v / n);
                }
                break;
            }
        }
    }
    Ok(GroundTruth {
        dictionary,
        feature_labels: (0..t).map(|f| f % k).collect(),
        label_count: k,
        sparsity,
        seed,
    })
}

#[derive(Debug, Clone)]
pub struct SyntheticSamples {
    /// `n x d`
    pub embeddings: Matrix,
    pub labels: LabelMatrix,
    /// `n x t` true coefficients (zero where inactive).
    pub codes: Matrix,
}

pub fn gen_samples(gt: &GroundTruth, n: usize, noise_sigma: f64, seed: u64) -> SyntheticSamples {
    assert!(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    let (d, t, k) = (gt.d(), gt.t(), gt.label_count);
    let p = gt.sparsity / t as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma checked");

    let mut embeddings = Matrix::zeros(n, d);
    let mut codes = Matrix::zeros(n, t);
    let mut labels = Matrix::zeros(n, k);
    for s in 0..n {
        for f in 0..t {
            if rng.random::<f64>() < p {
                let c = rng.random_range(0.5..=1.5);
                codes.set(s, f, c);
                labels.set(s, gt.feature_labels[f], 1.0);
            }
        }
        let code = codes.row(s).to_vec();
        let x = embeddings.row_mut(s);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = dot(gt.dictionary.row(i), &code);
        }
        if noise_sigma > 0.0 {
            for xi in x.iter_mut() {
                *xi += noise.sample(&mut rng);
            }
        }
    }
    SyntheticSamples {
        embeddings,
        labels: LabelMatrix::new(labels, gt.label_names()).expect("labels are binary"),
        codes,
    }
}

/// Mean-max-cosine dictionary recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub mean: f64,
    /// Best absolute cosine for each ground-truth feature.
    pub per_feature: Vec<f64>,
}

/// For each true feature, the largest `|cos|` against any decoder column.
pub fn recovery_score(w_dec: &Matrix, gt: &GroundTruth) -> Recovery {
    recovery_score_masked(w_dec, gt, None)
}

/// [`recovery_score`] restricted to columns whose `alive` flag is set.
/// Zero-norm columns never match.
pub fn recovery_score_masked(w_dec: &Matrix, gt: &GroundTruth, alive: Option<&[bool]>) -> Recovery {
    assert_eq!(
        w_dec.rows(),
        gt.d(),
        "decoder and dictionary dimensions differ"
    );
    let cols: Vec<Vec<f64>> = (0..w_dec.cols())
        .filter(|&j| alive.is_none_or(|a| a[j]))
        .map(|j| w_dec.column(j))
        .filter_map(|c| {
            let n = norm2(&c);
            (n > 0.0).then(|| c.iter().map(|v| v / n).collect())
        })
        .collect();
    let per_feature: Vec<f64> = (0..gt.t())
        .map(|f| {
            let truth = gt.dictionary.column(f);
            let tn = norm2(&truth);
            cols.iter()
                .map(|c| (dot(c, &truth) / tn).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let mean = if per_feature.is_empty() {
        0.0
    } else {
        per_feature.iter().sum::<f64>() / per_feature.len() as f64
    };
    Recovery { mean, per_feature }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_errors() {
        assert!(gen_ground_truth(1, 4, 2, 1.0, 0).is_err());
        assert!(gen_ground_truth(4, 2, 3, 1.0, 0).is_err());
        assert!(gen_ground_truth(4, 4, 0, 1.0, 0).is_err());
        assert!(gen_ground_truth(4, 4, 2, 0.5, 0).is_err());
        assert!(gen_ground_truth(4, 4, 2, 5.0, 0).is_err());
        let gt = gen_ground_truth(8, 6, 6, 2.0, 1).unwrap();
        // t == k gives a bijection
        let mut seen = gt.feature_labels.clone();
        seen.sort();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn unit_columns_and_determinism() {
        let a = gen_ground_truth(16, 40, 5, 3.0, 9).unwrap();
        for f in 0..40 {
            assert!((norm2(&a.dictionary.column(f)) - 1.0).abs() < 1e-12);
        }
        assert_eq!(a, gen_ground_truth(16, 40, 5, 3.0, 9).unwrap());
        assert_ne!(a, gen_ground_truth(16, 40, 5, 3.0, 10).unwrap());
        // every label owns a feature
        for j in 0..5 {
            assert!(a.feature_labels.contains(&j));
        }
    }

    #[test]
    fn noiseless_single_feature() {
        let gt = gen_ground_truth(6, 10, 2, 1.0, 3).unwrap();
        let s = gen_samples(&gt, 400, 0.0, 4);
        let mut checked = 0;
        for r in 0..400 {
            let code = s.codes.row(r);
            let active: Vec<usize> = (0..10).filter(|&f| code[f] != 0.0).collect();
            if active.len() == 1 {
                let f = active[0];
                for i in 0..6 {
                    assert_eq!(s.embeddings.get(r, i), code[f] * gt.dictionary.get(i, f));
                }
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn file_round_trip() {
        let gt = gen_ground_truth(5, 7, 3, 2.0, 5).unwrap();
        let file = GroundTruthFile::from(&gt);
        let json = serde_json::to_string(&file).unwrap();
        let back: GroundTruthFile = serde_json::from_str(&json).unwrap();
        assert_eq!(GroundTruth::try_from(back).unwrap(), gt);
    }

    #[test]
    fn recovery_of_dictionary_itself_is_one() {
        let gt = gen_ground_truth(10, 20, 4, 2.0, 2).unwrap();
        let r = recovery_score(&gt.dictionary, &gt);
        assert!((r.mean - 1.0).abs() < 1e-12);
        let mask = vec![false; 20];
        assert_eq!(
            recovery_score_masked(&gt.dictionary, &gt, Some(&mask)).mean,
            0.0
        );
    }
}
