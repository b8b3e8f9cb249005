mod common;

use std::sync::Arc;

use common::*;
use dpsft_core::io::{
    decode_pmat, decode_pvec, encode_pmat, encode_pvec, load_dataset, save_dataset, Dataset, PMAT_MAGIC, PVEC_MAGIC,
};
use dpsft_core::models::{ModelSpec, ParameterVector};
use dpsft_core::rng::{Phase, Purpose, StreamId};
use dpsft_core::subspace::random_orthonormal_basis;
use rand::Rng;

#[test]
fn projection_corruption_is_caught() {
    let p = random_orthonormal_basis(20, 5, StreamId::new(1, Phase::Init, Purpose::Frame, 0)).unwrap();
    let bytes = encode_pmat(&p);
    let floats = 8 + 16;
    let mut r = rng(2);
    let mut rejected = 0;
    for _ in 0..100 {
        let mut bad = bytes.clone();
        // Flip the sign/exponent byte of one stored float.
        let idx = r.random_range(0..20 * 5);
        bad[floats + idx * 8 + 7] ^= 0xFF;
        if decode_pmat(&bad).is_err() {
            rejected += 1;
        }
    }
    assert!(rejected >= 99, "{rejected} of 100 rejected");
}

#[test]
fn layouts_are_little_endian_and_fixed() {
    let p = random_orthonormal_basis(3, 2, StreamId::new(4, Phase::Init, Purpose::Frame, 0)).unwrap();
    let bytes = encode_pmat(&p);
    assert_eq!(&bytes[..8], PMAT_MAGIC);
    assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
    for i in 0..3 {
        for j in 0..2 {
            let at = 24 + (i * 2 + j) * 8;
            assert_eq!(f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()).to_bits(), p.columns().get(i, j).to_bits());
        }
    }

    let spec = ModelSpec::logistic_regression(3, 2);
    let mut r = rng(5);
    let v = ParameterVector::new(Arc::new(spec.layout()), gaussian_vec(&mut r, 8)).unwrap();
    let bytes = encode_pvec(&v);
    assert_eq!(&bytes[..8], PVEC_MAGIC);
    assert_eq!(decode_pvec(&bytes).unwrap(), v);
    for cut in [0, 7, 12, bytes.len() - 1] {
        assert!(decode_pvec(&bytes[..cut]).is_err());
    }
}

#[test]
fn datasets_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = tiny_task(6, 50, 7, 4);
    let path = dir.path().join("train.csv");
    let ds = Dataset::with_default_names(7, data.train.clone());
    save_dataset(&path, &ds).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}
