use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};
use kidforge::features::{
    compression_views, dataset_center, featurize_image, load_feature_table, FeatureTable, FeatureVector, BUILTIN_DIM, HIST_BINS,
};
use kidforge::schema::{DatasetManifest, SampleRecord};
use kidforge::Error;
use proptest::prelude::*;

fn png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

fn fv(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec()).unwrap()
}

#[test]
fn pure_red_has_one_bin_and_red_mean() {
    let v = featurize_image(&png(&RgbImage::from_pixel(64, 64, Rgb([255, 0, 0])))).unwrap();
    let hist = &v.as_slice()[..HIST_BINS];
    assert_eq!(hist.iter().filter(|h| **h > 0.0).count(), 1);
    assert!((hist.iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
    let tail = &v.as_slice()[HIST_BINS..];
    for (a, b) in tail.iter().zip([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]) {
        assert!((a - b).abs() < 1e-12, "{tail:?}");
    }
}

#[test]
fn checkerboard_has_two_half_bins() {
    let img = RgbImage::from_fn(64, 64, |x, y| if (x / 8 + y / 8) % 2 == 0 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
    let v = featurize_image(&png(&img)).unwrap();
    let mut nonzero: Vec<f64> = v.as_slice()[..HIST_BINS].iter().cloned().filter(|h| *h > 0.0).collect();
    nonzero.sort_by(f64::total_cmp);
    assert_eq!(nonzero.len(), 2);
    assert!((nonzero[0] - 0.5).abs() < 1e-12 && (nonzero[1] - 0.5).abs() < 1e-12);
}

#[test]
fn compression_view_counts() {
    let img = RgbImage::from_fn(40, 30, |x, y| Rgb([(x * 6) as u8, (y * 8) as u8, 90]));
    assert_eq!(compression_views(&png(&img), &[90, 70, 50]).unwrap().views.len(), 4);
    let single = compression_views(&png(&img), &[]).unwrap();
    assert_eq!(single.views.len(), 1);
    assert_eq!(single.views[0], featurize_image(&png(&img)).unwrap());
}

#[test]
fn uniform_image_survives_jpeg() {
    let img = RgbImage::from_pixel(64, 64, Rgb([30, 140, 200]));
    let vs = compression_views(&png(&img), &[90, 70, 50]).unwrap();
    for a in &vs.views {
        for b in &vs.views {
            let d: f64 = a.as_slice()[..HIST_BINS].iter().zip(&b.as_slice()[..HIST_BINS]).map(|(x, y)| (x - y).abs()).sum();
            assert!(d < 0.05, "{d}");
        }
    }
}

#[test]
fn feature_table_examples() {
    let t = FeatureTable::parse("dim=4\na 1 2 3 4\nb 0 0 0 0.5\n").unwrap();
    assert_eq!((t.dimension, t.rows.len()), (4, 2));
    assert!(matches!(FeatureTable::parse("dim=4\na 1 2 3\n"), Err(Error::Format(m)) if m.contains("row 2")));
    assert!(matches!(FeatureTable::parse("dim=2\na 1 NaN\n"), Err(Error::Format(_))));
    assert_eq!(FeatureTable::parse(&t.to_text()).unwrap(), t);
}

#[test]
fn feature_table_coverage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.txt"), "dim=1\na 1\n").unwrap();
    let record = |id: &str| SampleRecord { sample_id: id.into(), image: None, feature_ref: Some("t.txt".into()), annotations: Default::default() };
    let mut m = DatasetManifest::new("d", &[], vec![record("a"), record("b")]);
    m.root = Some(dir.path().to_path_buf());
    assert!(matches!(load_feature_table(&dir.path().join("t.txt"), &m), Err(Error::Coverage(id)) if id == "b"));
}

#[test]
fn center_examples() {
    assert_eq!(dataset_center(&[&fv(&[0.0, 0.0]), &fv(&[2.0, 2.0])]).unwrap(), fv(&[1.0, 1.0]));
    assert_eq!(dataset_center(&[&fv(&[3.5, -1.0])]).unwrap(), fv(&[3.5, -1.0]));
    assert_eq!(dataset_center(&[&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0]), &fv(&[2.0, 2.0])]).unwrap(), fv(&[1.0, 1.0]));
    assert!(matches!(dataset_center(&[]), Err(Error::EmptyInput(_))));
    assert!(matches!(dataset_center(&[&fv(&[1.0]), &fv(&[1.0, 2.0])]), Err(Error::Shape { .. })));
}

fn arb_image() -> impl Strategy<Value = RgbImage> {
    (1u32..48, 1u32..48, any::<u64>()).prop_map(|(w, h, seed)| {
        RgbImage::from_fn(w, h, |x, y| {
            let v = seed.wrapping_mul(x as u64 * 31 + y as u64 * 17 + 1);
            Rgb([(v >> 8) as u8, (v >> 16) as u8, (v >> 24) as u8])
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn featurizer_contract(img in arb_image()) {
        let bytes = png(&img);
        let v = featurize_image(&bytes).unwrap();
        prop_assert_eq!(v.dim(), BUILTIN_DIM);
        let l1: f64 = v.as_slice()[..HIST_BINS].iter().sum();
        prop_assert!((l1 - 1.0).abs() < 1e-9);
        prop_assert_eq!(featurize_image(&bytes).unwrap(), v);
    }

    #[test]
    fn center_is_permutation_invariant(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..12), rot in 0usize..12) {
        let vs: Vec<FeatureVector> = rows.iter().map(|r| fv(r)).collect();
        let mut refs: Vec<&FeatureVector> = vs.iter().collect();
        let a = dataset_center(&refs).unwrap();
        let k = rot % refs.len();
        refs.rotate_left(k);
        refs.reverse();
        let b = dataset_center(&refs).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
