//! Embedding and label ingestion, plus center-and-scale normalization.
//!
//! # SAEM layout
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SAEM"
//!      4     2  version (u16 LE) = 1
//!      6     2  dtype   (u16 LE) 0 = f32, 1 = f64
//!      8     8  rows    (u64 LE)
//!     16     8  cols    (u64 LE)
//!     24     *  rows*cols values, little endian, row-major
//! ```
//!
//! f32 payloads are promoted to f64 on load. Several matrices may be
//! concatenated back to back in one file (checkpoints do this); use
//! [`decode_matrices`] for those.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{norm2, Matrix};

pub const SAEM_MAGIC: &[u8; 4] = b"SAEM";
pub const SAEM_VERSION: u16 = 1;
pub const SAEM_HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum EmbeddingIoError {
    #[error("malformed SAEM header: {0}")]
    MalformedHeader(String),
    #[error("payload holds {found} bytes, header declares {expected}")]
    ShapeMismatch { expected: u128, found: u128 },
    #[error("non-finite value at flat index {index}")]
    NonFiniteEntry { index: usize },
    #[error("line {line}, column {column}: entry {value:?} is not 0 or 1")]
    NonBinaryEntry {
        line: usize,
        column: usize,
        value: String,
    },
    #[error("line {line} has {found} fields, header has {expected}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("label file has no header row")]
    EmptyHeader,
    #[error("invalid label name {0:?} (names must be unique and non-empty)")]
    InvalidLabelName(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("dimension mismatch: expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, EmbeddingIoError>;

/// On-disk element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u16 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

// ---------------------------------------------------------------------------
// SAEM matrices
// ---------------------------------------------------------------------------

/// Appends the SAEM encoding of `m` to `out`.
pub fn encode_matrix(m: &Matrix, dtype: Dtype, out: &mut Vec<u8>) {
    out.reserve(SAEM_HEADER_LEN + m.as_slice().len() * dtype.width());
    out.extend_from_slice(SAEM_MAGIC);
    out.extend_from_slice(&SAEM_VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match dtype {
        Dtype::F64 => {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Dtype::F32 => {
            for v in m.as_slice() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
}

/// Decodes one matrix from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_matrix_prefix(bytes: &[u8]) -> Result<(Matrix, usize)> {
    if bytes.len() < SAEM_HEADER_LEN {
        return Err(EmbeddingIoError::MalformedHeader(format!(
            "need {SAEM_HEADER_LEN} header bytes, found {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != SAEM_MAGIC {
        return Err(EmbeddingIoError::MalformedHeader(format!(
            "bad magic {:?}",
            &bytes[0..4]
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SAEM_VERSION {
        return Err(EmbeddingIoError::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let dtype = match u16::from_le_bytes([bytes[6], bytes[7]]) {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => {
            return Err(EmbeddingIoError::MalformedHeader(format!(
                "unknown dtype code {other}"
            )))
        }
    };
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let payload = &bytes[SAEM_HEADER_LEN..];
    let expected = (rows as u128 * cols as u128).saturating_mul(dtype.width() as u128);
    if (payload.len() as u128) < expected {
        return Err(EmbeddingIoError::ShapeMismatch {
            expected,
            found: payload.len() as u128,
        });
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let count = rows * cols;
    let data: Vec<f64> = match dtype {
        Dtype::F64 => payload[..count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload[..count * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(EmbeddingIoError::NonFiniteEntry { index });
    }
    let consumed = SAEM_HEADER_LEN + count * dtype.width();
    Ok((
        Matrix::new(rows, cols, data).expect("shape checked"),
        consumed,
    ))
}

/// Decodes a buffer holding exactly one matrix.
pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let (m, used) = decode_matrix_prefix(bytes)?;
    if used != bytes.len() {
        return Err(EmbeddingIoError::ShapeMismatch {
            expected: (used - SAEM_HEADER_LEN) as u128,
            found: (bytes.len() - SAEM_HEADER_LEN) as u128,
        });
    }
    Ok(m)
}

/// Decodes a buffer holding a sequence of concatenated matrices.
pub fn decode_matrices(mut bytes: &[u8]) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (m, used) = decode_matrix_prefix(bytes)?;
        out.push(m);
        bytes = &bytes[used..];
    }
    Ok(out)
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    decode_matrix(&fs::read(path)?)
}

/// Writes `m` as f64 SAEM.
pub fn write_matrix(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    write_matrix_as(m, path, Dtype::F64)
}

/// Writes `m` with the requested on-disk precision. f32 output rounds each
/// value to nearest.
pub fn write_matrix_as(m: &Matrix, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    if let Some(index) = m.first_non_finite() {
        return Err(EmbeddingIoError::NonFiniteEntry { index });
    }
    let mut buf = Vec::new();
    encode_matrix(m, dtype, &mut buf);
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

/// Binary (one-hot or multi-hot) label matrix with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    values: Matrix,
    names: Vec<String>,
}

impl LabelMatrix {
    /// Validates entries (0/1 only) and names (unique, non-empty).
    pub fn new(values: Matrix, names: Vec<String>) -> Result<Self> {
        if names.len() != values.cols() {
            return Err(EmbeddingIoError::DimensionMismatch {
                expected: values.cols(),
                found: names.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if name.is_empty() || !seen.insert(name.as_str()) {
                return Err(EmbeddingIoError::InvalidLabelName(name.clone()));
            }
        }
        for (i, v) in values.as_slice().iter().enumerate() {
            if *v != 0.0 && *v != 1.0 {
                let cols = values.cols().max(1);
                return Err(EmbeddingIoError::NonBinaryEntry {
                    line: i / cols + 2,
                    column: i % cols + 1,
                    value: v.to_string(),
                });
            }
        }
        Ok(Self { values, names })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn label_count(&self) -> usize {
        self.values.cols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> LabelMatrix {
        LabelMatrix {
            values: self.values.select_rows(indices),
            names: self.names.clone(),
        }
    }
}

/// Parses label CSV text. Line numbers in errors are 1-based.
pub fn parse_labels(text: &str) -> Result<LabelMatrix> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = match lines.next() {
        Some(h) if !h.trim().is_empty() => h,
        _ => return Err(EmbeddingIoError::EmptyHeader),
    };
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let k = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k {
            return Err(EmbeddingIoError::RaggedRow {
                line: line_no,
                expected: k,
                found: fields.len(),
            });
        }
        for (c, field) in fields.iter().enumerate() {
            let v = match field.trim() {
                "0" => 0.0,
                "1" => 1.0,
                other => {
                    return Err(EmbeddingIoError::NonBinaryEntry {
                        line: line_no,
                        column: c + 1,
                        value: other.to_string(),
                    })
                }
            };
            data.push(v);
        }
        rows += 1;
    }
    LabelMatrix::new(Matrix::new(rows, k, data).expect("counted"), names)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMatrix> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn format_labels(labels: &LabelMatrix) -> String {
    let mut out = labels.names.join(",");
    out.push('\n');
    for row in labels.values.row_iter() {
        let fields: Vec<&str> = row
            .iter()
            .map(|v| if *v == 1.0 { "1" } else { "0" })
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_labels(labels: &LabelMatrix, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_labels(labels))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Frozen centering vector and global scale, fit on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub d: usize,
}

impl NormalizationStats {
    /// Identity transform for `d` dimensions.
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: 1.0,
            d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.d {
            return Err(EmbeddingIoError::DimensionMismatch {
                expected: self.d,
                found: self.mean.len(),
            });
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(EmbeddingIoError::DegenerateData(format!(
                "scale {} must be positive and finite",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Column means, then a single scale chosen so that the mean row norm of the
/// centered data becomes `sqrt(d)`.
pub fn fit_normalization(train: &Matrix) -> Result<NormalizationStats> {
    let (n, d) = train.shape();
    if n == 0 {
        return Err(EmbeddingIoError::DegenerateData(
            "cannot fit normalization on zero rows".into(),
        ));
    }
    let first = train.row(0);
    if train.row_iter().all(|r| r == first) {
        return Err(EmbeddingIoError::DegenerateData(
            "all training rows are identical".into(),
        ));
    }

    let mut mean = vec![0.0; d];
    for row in train.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut centered = vec![0.0; d];
    let mut norm_sum = 0.0;
    for row in train.row_iter() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - m;
        }
        norm_sum += norm2(&centered);
    }
    let mean_norm = norm_sum / n as f64;
    if !(mean_norm > 0.0 && mean_norm.is_finite()) {
        return Err(EmbeddingIoError::DegenerateData(format!(
            "mean centered norm is {mean_norm}"
        )));
    }
    let stats = NormalizationStats {
        mean,
        scale: (d as f64).sqrt() / mean_norm,
        d,
    };
    stats.validate()?;
    Ok(stats)
}

/// Maps every row to `scale * (row - mean)`.
pub fn apply_normalization(x: &Matrix, stats: &NormalizationStats) -> Result<Matrix> {
    if x.cols() != stats.d {
        return Err(EmbeddingIoError::DimensionMismatch {
            expected: stats.d,
            found: x.cols(),
        });
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(&stats.mean) {
            *v = stats.scale * (*v - m);
        }
    }
    Ok(out)
}

/// Inverse of [`apply_normalization`].
pub fn invert_normalization(x: &Matrix, stats: &NormalizationStats) -> Result<Matrix> {
    if x.cols() != stats.d {
        return Err(EmbeddingIoError::DimensionMismatch {
            expected: stats.d,
            found: x.cols(),
        });
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(&stats.mean) {
            *v = *v / stats.scale + m;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(rows: u64, cols: u64, dtype: u16) -> Vec<u8> {
        let mut b = b"SAEM".to_vec();
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&dtype.to_le_bytes());
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&cols.to_le_bytes());
        b
    }

    #[test]
    fn decodes_hand_built_file() {
        let mut b = header(2, 3, 1);
        for v in [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_matrix(&b).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn short_payload_is_shape_mismatch() {
        let mut b = header(2, 3, 1);
        for v in [1.0f64, 2.0, 3.0, 4.0, 5.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode_matrix(&b),
            Err(EmbeddingIoError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let mut buf = Vec::new();
        encode_matrix(&Matrix::zeros(0, 0), Dtype::F64, &mut buf);
        assert_eq!(buf.len(), 24);
        assert_eq!(decode_matrix(&buf).unwrap().shape(), (0, 0));
    }

    #[test]
    fn single_value_layout() {
        let mut buf = Vec::new();
        encode_matrix(&Matrix::row_vector(vec![3.5]), Dtype::F64, &mut buf);
        assert_eq!(buf.len(), 32);
        assert_eq!(&buf[24..], &3.5f64.to_le_bytes());
        assert_eq!(&buf[0..4], b"SAEM");
        assert_eq!(&buf[6..8], &[1, 0]);
    }

    #[test]
    fn bad_magic_version_dtype() {
        let mut b = header(0, 0, 1);
        b[0] = b'X';
        assert!(matches!(
            decode_matrix(&b),
            Err(EmbeddingIoError::MalformedHeader(_))
        ));
        let mut b = header(0, 0, 1);
        b[4] = 2;
        assert!(matches!(
            decode_matrix(&b),
            Err(EmbeddingIoError::MalformedHeader(_))
        ));
        let b = header(0, 0, 7);
        assert!(matches!(
            decode_matrix(&b),
            Err(EmbeddingIoError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_matrix(&b"SAEM"[..]),
            Err(EmbeddingIoError::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_reports_index() {
        let mut b = header(1, 3, 0);
        for v in [1.0f32, f32::NAN, 2.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(
            decode_matrix(&b),
            Err(EmbeddingIoError::NonFiniteEntry { index: 1 })
        ));
    }

    #[test]
    fn concatenated_matrices() {
        let mut buf = Vec::new();
        encode_matrix(&Matrix::row_vector(vec![1.0, 2.0]), Dtype::F64, &mut buf);
        encode_matrix(&Matrix::zeros(2, 1), Dtype::F32, &mut buf);
        let ms = decode_matrices(&buf).unwrap();
        assert_eq!(ms.len(), 2);
        assert_eq!(ms[1].shape(), (2, 1));
        assert!(decode_matrix(&buf).is_err());
    }

    #[test]
    fn labels_parse() {
        let l = parse_labels("edema,effusion\n1,0\n0,1\n").unwrap();
        assert_eq!(l.rows(), 2);
        assert_eq!(l.names(), &["edema", "effusion"]);
        assert_eq!(l.values().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn labels_errors() {
        assert!(matches!(
            parse_labels("a,b\n1,2\n"),
            Err(EmbeddingIoError::NonBinaryEntry {
                line: 2,
                column: 2,
                ..
            })
        ));
        assert!(matches!(
            parse_labels("a,b\n-1,0\n"),
            Err(EmbeddingIoError::NonBinaryEntry { .. })
        ));
        assert!(matches!(
            parse_labels("a,b\n1,0,1\n"),
            Err(EmbeddingIoError::RaggedRow {
                line: 2,
                expected: 2,
                found: 3
            })
        ));
        assert!(matches!(
            parse_labels(""),
            Err(EmbeddingIoError::EmptyHeader)
        ));
        assert!(matches!(
            parse_labels("a,a\n1,0\n"),
            Err(EmbeddingIoError::InvalidLabelName(_))
        ));
        assert!(matches!(
            parse_labels("a,\n1,0\n"),
            Err(EmbeddingIoError::InvalidLabelName(_))
        ));
    }

    #[test]
    fn labels_format_round_trip() {
        let text = "x,y,z\n1,0,1\n0,0,0\n";
        let l = parse_labels(text).unwrap();
        assert_eq!(format_labels(&l), text);
    }

    #[test]
    fn normalization_hand_example() {
        let train = Matrix::from_rows(&[[1.0, 1.0], [3.0, 3.0]]);
        let s = fit_normalization(&train).unwrap();
        assert_eq!(s.mean, vec![2.0, 2.0]);
        assert!((s.scale - 1.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_degenerate() {
        let train = Matrix::from_rows(&[[0.3, -1.0], [0.3, -1.0], [0.3, -1.0]]);
        assert!(matches!(
            fit_normalization(&train),
            Err(EmbeddingIoError::DegenerateData(_))
        ));
        assert!(fit_normalization(&Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn apply_identity_and_mean_row() {
        let x = Matrix::from_rows(&[[1.5, -2.0, 0.25]]);
        let id = NormalizationStats::identity(3);
        assert_eq!(apply_normalization(&x, &id).unwrap(), x);
        let s = NormalizationStats {
            mean: vec![1.5, -2.0, 0.25],
            scale: 3.0,
            d: 3,
        };
        assert_eq!(apply_normalization(&x, &s).unwrap().as_slice(), &[0.0; 3]);
        assert!(matches!(
            apply_normalization(&Matrix::zeros(1, 2), &s),
            Err(EmbeddingIoError::DimensionMismatch { .. })
        ));
    }
}
