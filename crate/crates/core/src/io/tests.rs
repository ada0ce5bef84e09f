use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::autodiff::Tensor;
use crate::error::FormatError;
use crate::kspace::{make_coil_maps, make_mask, make_phantom, CoilData, Contrast};
use crate::{Complex64, Error};

fn format_error(r: Result<impl std::fmt::Debug>) -> FormatError {
    match r {
        Err(Error::Format(f)) => f,
        other => panic!("expected a format error, got {other:?}"),
    }
}

fn volume_from(values: &[f64], coils: usize, h: usize, w: usize, slices: usize, precision: Precision) -> KspaceVolume {
    let per = coils * h * w;
    let data: Vec<CoilData> = (0..slices)
        .map(|s| {
            let d = (0..per).map(|i| Complex64::new(values[(s * per + i) % values.len()], values[(s * per + i + 1) % values.len()])).collect();
            CoilData::new(coils, h, w, d).unwrap()
        })
        .collect();
    KspaceVolume::new(Contrast::Flair, precision, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kspace_round_trip_is_bit_exact(
        values in prop::collection::vec(-1e6f64..1e6, 1..64),
        coils in 1usize..4, h in 1usize..6, w in 1usize..6, slices in 1usize..3,
        single in any::<bool>(),
    ) {
        let precision = if single { Precision::Complex64 } else { Precision::Complex128 };
        let values: Vec<f64> = if single { values.iter().map(|&v| v as f32 as f64).collect() } else { values };
        let vol = volume_from(&values, coils, h, w, slices, precision);
        let bytes = write_kspace(&vol).unwrap();
        let back = read_kspace(&bytes).unwrap();
        prop_assert_eq!(&back, &vol);
        prop_assert_eq!(write_kspace(&back).unwrap(), bytes);
    }

    #[test]
    fn mask_round_trip_is_bit_exact(h in 4usize..64, w in 1usize..16, accel in 1usize..9, acs_frac in 0.0f64..1.0) {
        let acs = (acs_frac * h as f64) as usize;
        let mask = make_mask(h, w, accel, acs, 0).unwrap();
        let bytes = write_mask(&mask).unwrap();
        prop_assert_eq!(read_mask(&bytes).unwrap(), mask);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40), step in any::<u64>()) {
        let n = values.len();
        let mut config = BTreeMap::new();
        config.insert("n_unrolled".to_string(), "6".to_string());
        config.insert("filters".to_string(), "8,16".to_string());
        let ckpt = Checkpoint {
            config,
            params: vec![NamedTensor { name: "a.weight".into(), value: Tensor::new(vec![n], values.clone()).unwrap() }],
            optimizer_step: step,
            optimizer: vec![NamedTensor { name: "m/a.weight".into(), value: Tensor::new(vec![1, n], values).unwrap() }],
        };
        let bytes = write_checkpoint(&ckpt).unwrap();
        prop_assert_eq!(read_checkpoint(&bytes).unwrap(), ckpt);
    }
}

#[test]
fn layout_matches_the_documented_header() {
    let vol = volume_from(&[1.0, 2.0, 3.0], 2, 3, 4, 5, Precision::Complex64);
    let bytes = write_kspace(&vol).unwrap();
    assert_eq!(&bytes[..4], b"KSP1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 5);
    assert_eq!(bytes[20], 0);
    assert_eq!(bytes[21], 2);
    assert_eq!(bytes.len(), 22 + 5 * 2 * 3 * 4 * 8);
    // first sample: re then im of slice 0, coil 0, row 0
    assert_eq!(f32::from_le_bytes(bytes[22..26].try_into().unwrap()), 1.0);
    assert_eq!(f32::from_le_bytes(bytes[26..30].try_into().unwrap()), 2.0);

    let mask = make_mask(16, 8, 4, 4, 0).unwrap();
    let bytes = write_mask(&mask).unwrap();
    assert_eq!(&bytes[..4], b"MSK1");
    assert_eq!(bytes.len(), 20 + 16);
    assert_eq!(&bytes[20..24], &[1, 0, 0, 0]);
}

#[test]
fn truncated_files_report_truncation() {
    let vol = volume_from(&[0.5, -0.25], 2, 4, 4, 2, Precision::Complex128);
    let bytes = write_kspace(&vol).unwrap();
    for cut in [3, 10, 21, bytes.len() - 1] {
        assert!(matches!(format_error(read_kspace(&bytes[..cut])), FormatError::Truncated(_) | FormatError::BadMagic { .. }), "cut {cut}");
    }
    assert!(matches!(format_error(read_kspace(&bytes[..30])), FormatError::Truncated(_)));

    let ckpt = Checkpoint { params: vec![NamedTensor { name: "w".into(), value: Tensor::zeros(&[3, 3]) }], ..Default::default() };
    let bytes = write_checkpoint(&ckpt).unwrap();
    assert!(matches!(format_error(read_checkpoint(&bytes[..bytes.len() - 2])), FormatError::Truncated(_)));
    assert!(matches!(format_error(read_checkpoint(&bytes[..20])), FormatError::Truncated(_)));
}

#[test]
fn corrupted_files_produce_distinct_errors() {
    let maps = make_coil_maps(8, 2);
    let mut bytes = write_maps(&maps, Precision::Complex128).unwrap();
    bytes[0] = b'X';
    assert!(matches!(format_error(read_maps(&bytes)), FormatError::BadMagic { .. }));

    let vol = volume_from(&[1.0], 1, 2, 2, 1, Precision::Complex64);
    let mut bytes = write_kspace(&vol).unwrap();
    bytes[20] = 7;
    assert_eq!(format_error(read_kspace(&bytes)), FormatError::UnknownTag { field: "dtype", value: 7 });
    bytes[20] = 0;
    bytes[21] = 9;
    assert_eq!(format_error(read_kspace(&bytes)), FormatError::UnknownTag { field: "contrast", value: 9 });

    let ckpt = Checkpoint { params: vec![NamedTensor { name: "w".into(), value: Tensor::full(&[4], 0.25) }], ..Default::default() };
    let good = write_checkpoint(&ckpt).unwrap();
    let mut flipped = good.clone();
    let at = good.len() - 12;
    flipped[at] ^= 0x10;
    assert!(matches!(format_error(read_checkpoint(&flipped)), FormatError::Checksum { .. }));
    let mut versioned = good.clone();
    versioned[5] = 2;
    assert_eq!(format_error(read_checkpoint(&versioned)), FormatError::UnsupportedVersion(2));
    let mut extra = good;
    extra.push(0);
    assert!(matches!(format_error(read_checkpoint(&extra)), FormatError::Malformed(_)));
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let img = make_phantom(16);
    save_image(dir.path().join("x.ksp"), &img, Contrast::T2).unwrap();
    assert_eq!(load_image(dir.path().join("x.ksp")).unwrap(), (img, Contrast::T2));

    let maps = make_coil_maps(8, 3);
    save_maps(dir.path().join("m.smp"), &maps).unwrap();
    assert_eq!(load_maps(dir.path().join("m.smp")).unwrap().data(), maps.data());

    let mask = make_mask(32, 32, 8, 4, 3).unwrap();
    save_mask(dir.path().join("m.msk"), &mask).unwrap();
    assert_eq!(load_mask(dir.path().join("m.msk")).unwrap(), mask);

    assert!(matches!(load_mask(dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn pgm_scales_to_the_image_maximum() {
    let img = [0.0, 0.5, 1.0, 2.0];
    let bytes = encode_pgm(&img, 2, 2).unwrap();
    assert!(bytes.starts_with(b"P5\n2 2\n65535\n"));
    let (pixels, h, w) = decode_pgm(&bytes).unwrap();
    assert_eq!((h, w), (2, 2));
    assert_eq!(pixels, vec![0, 16384, 32768, 65535]);
    let (zeros, _, _) = decode_pgm(&encode_pgm(&[0.0; 6], 2, 3).unwrap()).unwrap();
    assert_eq!(zeros, vec![0; 6]);
    assert!(encode_pgm(&[f64::NAN], 1, 1).is_err());
}

#[test]
fn metrics_csv_round_trips_and_caps_psnr() {
    let rows = vec![
        MetricsRow { volume_id: "vol0".into(), slice: 0, method: "zf".into(), accel: 4, psnr_db: 31.25, ssim: 0.875, ms_ssim: 0.9375 },
        MetricsRow { volume_id: "vol0".into(), slice: 1, method: "pdhg".into(), accel: 4, psnr_db: f64::INFINITY, ssim: 1.0, ms_ssim: 1.0 },
    ];
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("volume_id,slice,method,accel,psnr_db,ssim,ms_ssim\n"));
    let back = read_metrics_csv(buf.as_slice()).unwrap();
    assert_eq!(back[0], rows[0]);
    assert_eq!(back[1].psnr_db, 100.0);
}

#[test]
fn hdf5_conversion_is_a_documented_stub() {
    assert!(matches!(convert_fastmri_h5("file_brain_AXT1_0.h5"), Err(Error::InvalidInput(_))));
}
