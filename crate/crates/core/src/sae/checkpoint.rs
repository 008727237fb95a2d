//! Checkpoint = four concatenated SAEM matrices (`w_enc`, `w_dec`, `b_pre` as
//! `1 x d`, `b_enc` as `1 x m`) plus a JSON sidecar at `<path>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, SaeError, SaeParams};
use crate::embedding_io::{decode_matrices, encode_matrix, Dtype, NormalizationStats};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub d: usize,
    pub m: usize,
    pub expansion_factor: usize,
    pub lambda: f64,
    pub seed: u64,
    pub normalization: NormalizationStats,
    /// Completed epochs.
    pub epoch: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, params: &SaeParams, meta: &CheckpointMeta) -> Result<()> {
    params.validate()?;
    if meta.d != params.d() || meta.m != params.m() {
        return Err(SaeError::Checkpoint(format!(
            "metadata shape ({}, {}) disagrees with parameters ({}, {})",
            meta.d,
            meta.m,
            params.d(),
            params.m()
        )));
    }
    let mut buf = Vec::new();
    encode_matrix(&params.w_enc, Dtype::F64, &mut buf);
    encode_matrix(&params.w_dec, Dtype::F64, &mut buf);
    encode_matrix(
        &Matrix::row_vector(params.b_pre.clone()),
        Dtype::F64,
        &mut buf,
    );
    encode_matrix(
        &Matrix::row_vector(params.b_enc.clone()),
        Dtype::F64,
        &mut buf,
    );
    fs::write(path, buf)?;
    let json =
        serde_json::to_string_pretty(meta).map_err(|e| SaeError::Checkpoint(e.to_string()))?;
    fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SaeParams, CheckpointMeta)> {
    let mats = decode_matrices(&fs::read(path)?)?;
    let [w_enc, w_dec, b_pre, b_enc]: [Matrix; 4] = mats.try_into().map_err(|v: Vec<Matrix>| {
        SaeError::Checkpoint(format!("expected 4 matrices, found {}", v.len()))
    })?;
    if b_pre.rows() != 1 || b_enc.rows() != 1 {
        return Err(SaeError::Checkpoint(
            "bias matrices must be single rows".into(),
        ));
    }
    let params = SaeParams {
        w_enc,
        w_dec,
        b_pre: b_pre.into_vec(),
        b_enc: b_enc.into_vec(),
    };
    params.validate()?;
    let text = fs::read_to_string(sidecar_path(path))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| SaeError::Checkpoint(e.to_string()))?;
    if meta.d != params.d() || meta.m != params.m() {
        return Err(SaeError::Checkpoint(
            "sidecar shape disagrees with weights".into(),
        ));
    }
    meta.normalization.validate()?;
    Ok((params, meta))
}
