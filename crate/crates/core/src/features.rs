//! Sample representations. The built-in 518-dimensional colour featurizer
//! and its JPEG compression views feed the sidecar feature tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::schema::{DatasetManifest, Federation};

/// Side length images are resized to before featurization.
pub const RASTER_SIDE: u32 = 64;
/// 8 bins per channel, joint RGB histogram.
pub const HIST_BINS: usize = 512;
pub const BUILTIN_DIM: usize = HIST_BINS + 6;
/// Quality factors of the default compression views.
pub const DEFAULT_QUALITY_FACTORS: [u8; 3] = [90, 70, 50];
/// Identifies the JPEG encoder/decoder pair; compressed views are only
/// comparable within one codec.
pub const CODEC_ID: &str = "image-0.25/jpeg";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite feature entry at index {i}")));
        }
        Ok(FeatureVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l2_distance(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    pub fn l1_distance(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Copies of one sample: the uncompressed original first, then one view
/// per quality factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<FeatureVector>,
    pub quality_factors: Vec<u8>,
}

impl ViewSet {
    pub fn single(v: FeatureVector) -> Self {
        ViewSet { views: vec![v], quality_factors: Vec::new() }
    }

    pub fn original(&self) -> &FeatureVector {
        &self.views[0]
    }

    /// The original plus at most `extra` compressed views.
    pub fn prefix(&self, extra: usize) -> &[FeatureVector] {
        &self.views[..(1 + extra).min(self.views.len())]
    }
}

fn decode(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes).map(|img| img.to_rgb8()).map_err(|e| Error::Codec(e.to_string()))
}

/// 512-bin joint RGB histogram (L1-normalized) followed by per-channel
/// means and standard deviations in [0,1].
pub fn featurize_rgb(img: &RgbImage) -> FeatureVector {
    let resized;
    let img = if img.dimensions() == (RASTER_SIDE, RASTER_SIDE) {
        img
    } else {
        resized = image::imageops::resize(img, RASTER_SIDE, RASTER_SIDE, FilterType::Triangle);
        &resized
    };
    let n = (RASTER_SIDE * RASTER_SIDE) as f64;
    let mut values = vec![0.0; BUILTIN_DIM];
    let mut sums = [0.0f64; 3];
    for p in img.pixels() {
        let [r, g, b] = p.0;
        values[((r >> 5) as usize) * 64 + ((g >> 5) as usize) * 8 + (b >> 5) as usize] += 1.0;
        for c in 0..3 {
            sums[c] += p.0[c] as f64 / 255.0;
        }
    }
    for v in &mut values[..HIST_BINS] {
        *v /= n;
    }
    let means = sums.map(|s| s / n);
    let mut sq = [0.0f64; 3];
    for p in img.pixels() {
        for c in 0..3 {
            let d = p.0[c] as f64 / 255.0 - means[c];
            sq[c] += d * d;
        }
    }
    for c in 0..3 {
        values[HIST_BINS + c] = means[c];
        values[HIST_BINS + 3 + c] = (sq[c] / n).sqrt();
    }
    FeatureVector(values)
}

pub fn featurize_image(bytes: &[u8]) -> Result<FeatureVector> {
    Ok(featurize_rgb(&decode(bytes)?))
}

/// Re-encode as JPEG at `quality` and decode again.
pub fn jpeg_roundtrip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Codec(format!("quality factor {quality} outside [1,100]")));
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(img)
        .map_err(|e| Error::Codec(e.to_string()))?;
    decode(&buf)
}

pub fn compression_views_rgb(img: &RgbImage, quality_factors: &[u8]) -> Result<ViewSet> {
    let mut views = Vec::with_capacity(1 + quality_factors.len());
    views.push(featurize_rgb(img));
    for &q in quality_factors {
        views.push(featurize_rgb(&jpeg_roundtrip(img, q)?));
    }
    Ok(ViewSet { views, quality_factors: quality_factors.to_vec() })
}

pub fn compression_views(bytes: &[u8], quality_factors: &[u8]) -> Result<ViewSet> {
    compression_views_rgb(&decode(bytes)?, quality_factors)
}

/// Precomputed embeddings keyed by sample_id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dimension: usize,
    pub rows: BTreeMap<String, FeatureVector>,
}

impl FeatureTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format("missing `dim=<N>` header".into()))?;
        let dimension: usize = header
            .trim()
            .strip_prefix("dim=")
            .and_then(|d| d.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Format(format!("bad header `{header}`")))?;
        let mut rows = BTreeMap::new();
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line").to_string();
            let values = parts
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("row {} (`{id}`): {e}", i + 1)))?;
            if values.len() != dimension {
                return Err(Error::Format(format!(
                    "row {} (`{id}`): {} values under dim={dimension}",
                    i + 1,
                    values.len()
                )));
            }
            let v = FeatureVector::new(values).map_err(|e| Error::Format(format!("row {} (`{id}`): {e}", i + 1)))?;
            rows.insert(id, v);
        }
        Ok(FeatureTable { dimension, rows })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("dim={}\n", self.dimension);
        for (id, v) in &self.rows {
            out.push_str(id);
            for x in v.as_slice() {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

/// Load a feature table and check that it covers every sample of
/// `manifest` whose feature_ref points at `path`.
pub fn load_feature_table(path: &Path, manifest: &DatasetManifest) -> Result<FeatureTable> {
    let table = FeatureTable::parse(&std::fs::read_to_string(path)?)?;
    for s in &manifest.samples {
        let Some(r) = &s.feature_ref else { continue };
        if same_file(&manifest.resolve(r), path) && !table.rows.contains_key(&s.sample_id) {
            return Err(Error::Coverage(s.sample_id.clone()));
        }
    }
    Ok(table)
}

/// Elementwise mean, summed left to right in input order.
pub fn dataset_center(features: &[&FeatureVector]) -> Result<FeatureVector> {
    let first = features.first().ok_or_else(|| Error::EmptyInput("dataset_center of no vectors".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in features {
        if v.dim() != dim {
            return Err(Error::Shape { expected: dim, got: v.dim() });
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = features.len() as f64;
    Ok(FeatureVector(acc.into_iter().map(|a| a / n).collect()))
}

/// Resolved view sets for every sample of a federation, keyed by dataset
/// then sample id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    dim: Option<usize>,
    by_dataset: HashMap<String, HashMap<String, ViewSet>>,
}

impl FeatureStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn insert(&mut self, dataset_id: &str, sample_id: &str, views: ViewSet) -> Result<()> {
        let d = views.original().dim();
        match self.dim {
            Some(expected) if expected != d => return Err(Error::Shape { expected, got: d }),
            _ => self.dim = Some(d),
        }
        self.by_dataset.entry(dataset_id.to_string()).or_default().insert(sample_id.to_string(), views);
        Ok(())
    }

    pub fn get(&self, dataset_id: &str, sample_id: &str) -> Result<&ViewSet> {
        self.by_dataset
            .get(dataset_id)
            .and_then(|m| m.get(sample_id))
            .ok_or_else(|| Error::Coverage(format!("{dataset_id}/{sample_id}")))
    }

    /// Resolve features for every sample: rows from feature tables when a
    /// sample has a feature_ref, otherwise the image plus compression views.
    pub fn from_federation(fed: &Federation, quality_factors: &[u8]) -> Result<Self> {
        let mut store = FeatureStore::new();
        for d in &fed.datasets {
            let mut tables: HashMap<PathBuf, FeatureTable> = HashMap::new();
            for s in &d.samples {
                if let Some(r) = &s.feature_ref {
                    let path = d.resolve(r);
                    if !tables.contains_key(&path) {
                        let t = load_feature_table(&path, d)?;
                        tables.insert(path, t);
                    }
                }
            }
            let resolved: Vec<(String, ViewSet)> = d
                .samples
                .par_iter()
                .map(|s| {
                    if let Some(r) = &s.feature_ref {
                        let table = &tables[&d.resolve(r)];
                        let v = table.rows.get(&s.sample_id).ok_or_else(|| Error::Coverage(s.sample_id.clone()))?;
                        Ok((s.sample_id.clone(), ViewSet::single(v.clone())))
                    } else if let Some(img) = &s.image {
                        let bytes = std::fs::read(d.resolve(img))?;
                        Ok((s.sample_id.clone(), compression_views(&bytes, quality_factors)?))
                    } else {
                        Err(Error::Coverage(s.sample_id.clone()))
                    }
                })
                .collect::<Result<_>>()?;
            for (id, views) in resolved {
                store.insert(&d.dataset_id, &id, views)?;
            }
        }
        Ok(store)
    }
}
