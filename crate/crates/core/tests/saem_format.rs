use proptest::prelude::*;
use saekit::embedding_io::{
    apply_normalization, decode_matrix, encode_matrix, fit_normalization, read_matrix,
    write_matrix_as, Dtype, EmbeddingIoError,
};
use saekit::Matrix;

fn finite_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (0..=max_rows, 0..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(
            prop_oneof![
                -1e300f64..1e300,
                -1.0f64..1.0,
                Just(0.0),
                Just(-0.0),
                Just(f64::MIN_POSITIVE),
                Just(f64::MAX),
            ],
            r * c,
        )
        .prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

/// Hand-rolled SAEM encoder used as an oracle for the library one.
fn oracle_bytes(rows: u64, cols: u64, dtype: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = b"SAEM".to_vec();
    out.extend(1u16.to_le_bytes());
    out.extend(dtype.to_le_bytes());
    out.extend(rows.to_le_bytes());
    out.extend(cols.to_le_bytes());
    out.extend_from_slice(payload);
    out
}

proptest! {
    #[test]
    fn f64_round_trip_is_bitwise(m in finite_matrix(12, 12)) {
        let mut bytes = Vec::new();
        encode_matrix(&m, Dtype::F64, &mut bytes);
        let payload: Vec<u8> = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        prop_assert_eq!(&bytes, &oracle_bytes(m.rows() as u64, m.cols() as u64, 1, &payload));
        let back = decode_matrix(&bytes).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_payload_promotes_exactly(vals in prop::collection::vec(-1e30f32..1e30, 0..60)) {
        let n = vals.len() as u64;
        let payload: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let m = decode_matrix(&oracle_bytes(n, 1, 0, &payload)).unwrap();
        for (a, b) in m.as_slice().iter().zip(&vals) {
            prop_assert_eq!(a.to_bits(), (*b as f64).to_bits());
        }
    }

    #[test]
    fn normalization_centers_and_scales(
        seed in 0u64..1000,
        n in 3usize..40,
        d in 1usize..8,
        offset in -50.0f64..50.0,
        spread in 0.01f64..100.0,
    ) {
        let x = seeded(seed, n, d, offset, spread);
        let stats = fit_normalization(&x).unwrap();
        let y = apply_normalization(&x, &stats).unwrap();
        for c in 0..d {
            let mean = y.column(c).iter().sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9, "column {} mean {}", c, mean);
        }
        let mean_norm = y
            .row_iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        let target = (d as f64).sqrt();
        prop_assert!((mean_norm - target).abs() / target < 1e-9);
    }

    #[test]
    fn normalization_is_affine(
        seed in 0u64..1000,
        alpha in -2.0f64..3.0,
    ) {
        let x = seeded(seed, 10, 4, 1.0, 3.0);
        let stats = fit_normalization(&x).unwrap();
        let a = seeded(seed + 1, 5, 4, -2.0, 2.0);
        let b = seeded(seed + 2, 5, 4, 4.0, 0.5);
        let mix = Matrix::from_fn(5, 4, |r, c| alpha * a.get(r, c) + (1.0 - alpha) * b.get(r, c));
        let lhs = apply_normalization(&mix, &stats).unwrap();
        let na = apply_normalization(&a, &stats).unwrap();
        let nb = apply_normalization(&b, &stats).unwrap();
        for r in 0..5 {
            for c in 0..4 {
                let rhs = alpha * na.get(r, c) + (1.0 - alpha) * nb.get(r, c);
                prop_assert!((lhs.get(r, c) - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}

fn seeded(seed: u64, n: usize, d: usize, offset: f64, spread: f64) -> Matrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(n, d, |_, _| offset + spread * rng.random_range(-1.0..1.0))
}

#[test]
fn crafted_corrupt_files() {
    let good = oracle_bytes(2, 2, 1, &[0u8; 32]);

    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut bad_version = good.clone();
    bad_version[4] = 9;
    let mut bad_dtype = good.clone();
    bad_dtype[6] = 7;
    for (name, bytes) in [
        ("magic", bad_magic),
        ("version", bad_version),
        ("dtype", bad_dtype),
        ("short header", good[..10].to_vec()),
    ] {
        assert!(
            matches!(
                decode_matrix(&bytes),
                Err(EmbeddingIoError::MalformedHeader(_))
            ),
            "{name}"
        );
    }

    assert!(matches!(
        decode_matrix(&good[..good.len() - 1]),
        Err(EmbeddingIoError::ShapeMismatch { .. })
    ));
    let mut trailing = good.clone();
    trailing.push(0);
    assert!(matches!(
        decode_matrix(&trailing),
        Err(EmbeddingIoError::ShapeMismatch { .. })
    ));
    // rows * cols overflows usize arithmetic
    assert!(decode_matrix(&oracle_bytes(u64::MAX, u64::MAX, 1, &[])).is_err());

    let mut nan = good.clone();
    nan[24 + 16..24 + 24].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(matches!(
        decode_matrix(&nan),
        Err(EmbeddingIoError::NonFiniteEntry { index: 2 })
    ));
    let inf32 = oracle_bytes(1, 1, 0, &f32::INFINITY.to_le_bytes());
    assert!(matches!(
        decode_matrix(&inf32),
        Err(EmbeddingIoError::NonFiniteEntry { index: 0 })
    ));
}

#[test]
fn f32_file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.saem");
    let m = Matrix::from_rows(&[[0.1, 2.5], [-3.0, 1e-3]]);
    write_matrix_as(&m, &path, Dtype::F32).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + 4 * 4);
    let back = read_matrix(&path).unwrap();
    for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    assert!(matches!(
        read_matrix(dir.path().join("missing.saem")),
        Err(EmbeddingIoError::Io(_))
    ));
}
