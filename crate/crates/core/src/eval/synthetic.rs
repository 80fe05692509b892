//! Seeded synthetic federations with controllable domain shift.
//!
//! Feature mode places class prototypes on a simplex (pairwise distance
//! `class_separation`), applies a per-dataset rotation and translation, and
//! adds isotropic Gaussian noise. Image mode renders 64×64 tiles in a class
//! colour, applies a per-dataset colour rotation and cast, and adds
//! per-pixel sensor noise whose amplitude differs between datasets.

use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::derive_seed;
use crate::features::{compression_views_rgb, FeatureStore, FeatureTable, FeatureVector, ViewSet, RASTER_SIDE};
use crate::schema::{AnnotationSpec, DatasetManifest, Federation, GlobalSchema, SampleRecord};

/// Rotation bound (radians per Givens step) per unit of `domain_shift`.
const ROTATION_PER_SHIFT: f64 = 0.25;
/// Colour-space rotation bound (radians) per unit of `domain_shift`.
const HUE_ROTATION_PER_SHIFT: f64 = 0.35;
/// Colour cast standard deviation (intensity levels) per unit of `domain_shift`.
const CAST_PER_SHIFT: f64 = 20.0;
/// Per-sample illumination jitter (intensity levels) per unit of `noise`.
const JITTER_PER_NOISE: f64 = 20.0;

/// Scene backgrounds a dataset can be photographed against: asphalt,
/// grass, sky, sand.
const SCENES: [[f64; 3]; 4] = [[105.0, 105.0, 110.0], [70.0, 125.0, 60.0], [150.0, 175.0, 210.0], [195.0, 175.0, 135.0]];

const COLOR_NAMES: [&str; 14] = [
    "black", "blue", "green", "cyan", "red", "magenta", "yellow", "white", "maroon", "navy", "olive", "teal", "purple", "gray",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    Features,
    Images,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SynthAnnotation {
    Categorical { name: String, classes: usize },
    /// Dataset-local makes; neighbouring datasets share `overlap` of their makes.
    Cluster { name: String, makes: usize, overlap: f64 },
}

impl SynthAnnotation {
    pub fn name(&self) -> &str {
        match self {
            SynthAnnotation::Categorical { name, .. } | SynthAnnotation::Cluster { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_datasets: usize,
    pub annotation: SynthAnnotation,
    pub samples_per_dataset: usize,
    /// Ignored in image mode, where the built-in featurizer fixes 518.
    pub feature_dim: usize,
    pub class_separation: f64,
    pub domain_shift: f64,
    pub noise: f64,
    /// Image mode: scale of the per-dataset sensor noise (intensity levels).
    pub sensor_noise: f64,
    /// Image mode: share of each tile showing the dataset's scene
    /// background instead of the object.
    #[serde(default)]
    pub background_fraction: f64,
    pub mode: SynthMode,
    /// Image mode: quality factors of the stored compression views.
    pub quality_factors: Vec<u8>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Feature-mode benchmark: 3 datasets, 8 classes.
    pub fn features_default(seed: u64) -> Self {
        SyntheticSpec {
            num_datasets: 3,
            annotation: SynthAnnotation::Categorical { name: "color".into(), classes: 8 },
            samples_per_dataset: 400,
            feature_dim: 16,
            class_separation: 4.0,
            domain_shift: 1.0,
            noise: 1.0,
            sensor_noise: 0.0,
            background_fraction: 0.0,
            mode: SynthMode::Features,
            quality_factors: vec![],
            seed,
        }
    }

    /// Image-mode benchmark used for the mitigation ladder: 3 datasets,
    /// 8 colour classes, compression views at 90/70/50.
    pub fn images_default(seed: u64) -> Self {
        SyntheticSpec {
            num_datasets: 3,
            annotation: SynthAnnotation::Categorical { name: "color".into(), classes: 8 },
            samples_per_dataset: 400,
            feature_dim: crate::features::BUILTIN_DIM,
            class_separation: 0.5,
            domain_shift: 0.7,
            noise: 1.0,
            sensor_noise: 50.0,
            background_fraction: 0.0,
            mode: SynthMode::Images,
            quality_factors: crate::features::DEFAULT_QUALITY_FACTORS.to_vec(),
            seed,
        }
    }

    /// Make benchmark: 12 makes over 2 datasets sharing half their makes.
    pub fn makes_default(seed: u64) -> Self {
        SyntheticSpec {
            num_datasets: 2,
            annotation: SynthAnnotation::Cluster { name: "make".into(), makes: 12, overlap: 0.5 },
            samples_per_dataset: 480,
            feature_dim: 16,
            class_separation: 10.0,
            domain_shift: 0.0,
            noise: 0.1,
            sensor_noise: 0.0,
            background_fraction: 0.0,
            mode: SynthMode::Features,
            quality_factors: vec![],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_datasets == 0 || self.samples_per_dataset == 0 {
            return bad("need at least one dataset and one sample");
        }
        if [self.class_separation, self.domain_shift, self.noise, self.sensor_noise].iter().any(|v| !(*v >= 0.0)) {
            return bad("magnitudes must be non-negative");
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return bad("background_fraction must lie in [0,1)");
        }
        match &self.annotation {
            SynthAnnotation::Categorical { classes, .. } => {
                if *classes < 2 {
                    return bad("categorical annotations need at least 2 classes");
                }
                if self.mode == SynthMode::Features && self.feature_dim < *classes {
                    return bad("feature_dim must be at least the class count");
                }
                if self.mode == SynthMode::Images && *classes > COLOR_NAMES.len() {
                    return bad("image mode supports at most 14 classes");
                }
            }
            SynthAnnotation::Cluster { makes, overlap, .. } => {
                if self.mode != SynthMode::Features {
                    return bad("cluster annotations are feature-mode only");
                }
                if !(0.0..1.0).contains(overlap) || *makes == 0 || self.feature_dim < *makes {
                    return bad("cluster annotations need overlap in [0,1) and feature_dim >= makes");
                }
            }
        }
        Ok(())
    }

    /// Labels of class `c`.
    pub fn class_name(&self, c: usize) -> String {
        match (&self.annotation, self.mode) {
            (SynthAnnotation::Categorical { classes, .. }, SynthMode::Images) if *classes <= COLOR_NAMES.len() => {
                COLOR_NAMES[c].to_string()
            }
            (SynthAnnotation::Cluster { .. }, _) => format!("make-{c:02}"),
            _ => format!("class-{c:02}"),
        }
    }

    fn class_count(&self) -> usize {
        match &self.annotation {
            SynthAnnotation::Categorical { classes, .. } => *classes,
            SynthAnnotation::Cluster { makes, .. } => *makes,
        }
    }

    /// Classes (makes) present in dataset `d`.
    pub fn classes_of(&self, d: usize) -> Vec<usize> {
        match &self.annotation {
            SynthAnnotation::Categorical { classes, .. } => (0..*classes).collect(),
            SynthAnnotation::Cluster { makes, overlap, .. } => {
                let n = self.num_datasets as f64;
                let per = ((*makes as f64) / (1.0 + (n - 1.0) * (1.0 - overlap))).round() as usize;
                let stride = ((per as f64) * (1.0 - overlap)).round() as usize;
                (d * stride..(d * stride + per).min(*makes)).collect()
            }
        }
    }

    pub fn schema(&self) -> GlobalSchema {
        let spec = match &self.annotation {
            SynthAnnotation::Categorical { name, .. } => AnnotationSpec {
                name: name.clone(),
                kind: crate::schema::AnnotationKind::Categorical,
                label_set: Some((0..self.class_count()).map(|c| self.class_name(c)).collect()),
            },
            SynthAnnotation::Cluster { name, .. } => AnnotationSpec::cluster(name),
        };
        GlobalSchema::new(vec![spec]).expect("synthetic schema is valid")
    }
}

/// A generated federation, its resolved features, and the true label of
/// every sample (also for samples whose label is hidden).
#[derive(Debug, Clone)]
pub struct SyntheticFederation {
    pub spec: SyntheticSpec,
    pub federation: Federation,
    pub store: FeatureStore,
    pub truth: BTreeMap<(String, String), String>,
    /// Image mode only: the rendered tiles.
    pub images: BTreeMap<(String, String), RgbImage>,
}

fn dataset_id(d: usize) -> String {
    format!("synth-{d}")
}

struct FeatureDomain {
    rotation: Vec<f64>,
    translation: Vec<f64>,
}

fn givens_rotation(dim: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut r = vec![0.0; dim * dim];
    for i in 0..dim {
        r[i * dim + i] = 1.0;
    }
    if bound == 0.0 || dim < 2 {
        return r;
    }
    for _ in 0..dim {
        let a = rng.random_range(0..dim);
        let mut b = rng.random_range(0..dim - 1);
        if b >= a {
            b += 1;
        }
        let theta = rng.random_range(-bound..=bound);
        let (s, c) = theta.sin_cos();
        for col in 0..dim {
            let (ra, rb) = (r[a * dim + col], r[b * dim + col]);
            r[a * dim + col] = c * ra - s * rb;
            r[b * dim + col] = s * ra + c * rb;
        }
    }
    r
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    (0..dim).map(|i| (0..dim).map(|j| m[i * dim + j] * v[j]).sum()).collect()
}

pub fn generate_synthetic_federation(spec: &SyntheticSpec) -> Result<SyntheticFederation> {
    spec.validate()?;
    let schema = spec.schema();
    let annotation = spec.annotation.name().to_string();
    let mut datasets = Vec::with_capacity(spec.num_datasets);
    let mut store = FeatureStore::new();
    let mut truth = BTreeMap::new();
    let mut images = BTreeMap::new();

    for d in 0..spec.num_datasets {
        let id = dataset_id(d);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &["dataset", &id]));
        let classes = spec.classes_of(d);
        let labels: Vec<usize> = (0..spec.samples_per_dataset).map(|i| classes[i % classes.len()]).collect();
        let sample_ids: Vec<String> = (0..spec.samples_per_dataset).map(|i| format!("s{i:05}")).collect();

        let views: Vec<(ViewSet, Option<RgbImage>)> = match spec.mode {
            SynthMode::Features => {
                let dim = spec.feature_dim;
                let domain = FeatureDomain {
                    rotation: givens_rotation(dim, spec.domain_shift * ROTATION_PER_SHIFT, &mut rng),
                    translation: (0..dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z * spec.domain_shift * spec.class_separation / (2.0 * (dim as f64).sqrt())
                        })
                        .collect(),
                };
                let scale = spec.class_separation / std::f64::consts::SQRT_2;
                labels
                    .iter()
                    .map(|&c| {
                        let mut proto = vec![0.0; dim];
                        proto[c] = scale;
                        let shifted = mat_vec(&domain.rotation, &proto);
                        let values = shifted
                            .iter()
                            .zip(&domain.translation)
                            .map(|(p, t)| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                p + t + spec.noise * z
                            })
                            .collect();
                        Ok((ViewSet::single(FeatureVector::new(values)?), None))
                    })
                    .collect::<Result<_>>()?
            }
            SynthMode::Images => {
                let theta = rng.random_range(-1.0..=1.0) * spec.domain_shift * HUE_ROTATION_PER_SHIFT;
                let cast: [f64; 3] = std::array::from_fn(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * spec.domain_shift * CAST_PER_SHIFT
                });
                let sensor = spec.sensor_noise * (0.25 + 1.5 * rng.random::<f64>());
                let scene = SCENES[rng.random_range(0..SCENES.len())].map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + z * spec.domain_shift * CAST_PER_SHIFT
                });
                let bg_rows = (spec.background_fraction * RASTER_SIDE as f64).round() as u32;
                let tile_seeds: Vec<(u64, [f64; 3])> = labels
                    .iter()
                    .map(|&c| {
                        let base = class_color(c, spec.class_separation);
                        let rotated = rotate_about_gray(base, theta);
                        let color = std::array::from_fn(|k| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            rotated[k] + cast[k] + spec.noise * JITTER_PER_NOISE * z
                        });
                        (rng.random::<u64>(), color)
                    })
                    .collect();
                tile_seeds
                    .par_iter()
                    .map(|&(seed, color)| {
                        let img = render_tile(color, scene, bg_rows, sensor, seed);
                        let vs = compression_views_rgb(&img, &spec.quality_factors)?;
                        Ok((vs, Some(img)))
                    })
                    .collect::<Result<_>>()?
            }
        };

        let mut samples = Vec::with_capacity(spec.samples_per_dataset);
        for ((sid, &c), (vs, img)) in sample_ids.iter().zip(&labels).zip(views) {
            let label = spec.class_name(c);
            let (image, feature_ref) = match spec.mode {
                SynthMode::Features => (None, Some(format!("{id}.features"))),
                SynthMode::Images => (Some(format!("images/{id}/{sid}.png")), None),
            };
            samples.push(SampleRecord {
                sample_id: sid.clone(),
                image,
                feature_ref,
                annotations: [(annotation.clone(), Some(label.clone()))].into_iter().collect(),
            });
            truth.insert((id.clone(), sid.clone()), label);
            store.insert(&id, sid, vs)?;
            if let Some(img) = img {
                images.insert((id.clone(), sid.clone()), img);
            }
        }
        let mut manifest = DatasetManifest::new(&id, &[annotation.as_str()], samples);
        manifest.split_seed = derive_seed(spec.seed, &["split", &id]);
        datasets.push(manifest);
    }
    Ok(SyntheticFederation { spec: spec.clone(), federation: Federation::new(schema, datasets)?, store, truth, images })
}

fn class_color(c: usize, separation: f64) -> [f64; 3] {
    let corner: [f64; 3] = if c < 8 {
        [((c >> 2) & 1) as f64 * 2.0 - 1.0, ((c >> 1) & 1) as f64 * 2.0 - 1.0, (c & 1) as f64 * 2.0 - 1.0]
    } else {
        // Face centres of the colour cube, then the centre itself.
        const FACES: [[f64; 3]; 6] =
            [[0.0, 0.0, -1.0], [0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        FACES[c - 8]
    };
    corner.map(|v| 127.5 + separation * 90.0 * v)
}

fn rotate_about_gray(color: [f64; 3], theta: f64) -> [f64; 3] {
    let k = 1.0 / 3.0f64.sqrt();
    let v = color.map(|x| x - 127.5);
    let (s, c) = theta.sin_cos();
    let dot = k * (v[0] + v[1] + v[2]);
    let cross = [k * (v[2] - v[1]), k * (v[0] - v[2]), k * (v[1] - v[0])];
    std::array::from_fn(|i| 127.5 + v[i] * c + cross[i] * s + k * dot * (1.0 - c))
}

/// Object colour below the first `bg_rows` rows of scene, plus per-pixel
/// sensor noise.
fn render_tile(color: [f64; 3], scene: [f64; 3], bg_rows: u32, sensor: f64, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sensor.max(f64::MIN_POSITIVE)).expect("finite sigma");
    RgbImage::from_fn(RASTER_SIDE, RASTER_SIDE, |_, y| {
        let base = if y < bg_rows { scene } else { color };
        Rgb(std::array::from_fn(|k| {
            let n = if sensor > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            (base[k] + n).round().clamp(0.0, 255.0) as u8
        }))
    })
}

impl SyntheticFederation {
    /// Write schema, manifests and feature tables (feature mode) or PNG
    /// tiles (image mode) under `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("schema.json"), self.federation.schema.to_json() + "\n")?;
        for d in &self.federation.datasets {
            d.write(&dir.join(format!("{}.jsonl", d.dataset_id)))?;
            match self.spec.mode {
                SynthMode::Features => {
                    let mut rows = BTreeMap::new();
                    for s in &d.samples {
                        rows.insert(s.sample_id.clone(), self.store.get(&d.dataset_id, &s.sample_id)?.original().clone());
                    }
                    let dimension = self.store.dim().unwrap_or(self.spec.feature_dim);
                    let table = FeatureTable { dimension, rows };
                    std::fs::write(dir.join(format!("{}.features", d.dataset_id)), table.to_text())?;
                }
                SynthMode::Images => {
                    std::fs::create_dir_all(dir.join("images").join(&d.dataset_id))?;
                    for s in &d.samples {
                        let img = &self.images[&(d.dataset_id.clone(), s.sample_id.clone())];
                        let path = d.resolve(s.image.as_deref().expect("image mode sets image"));
                        img.save(dir.join(path)).map_err(|e| Error::Codec(e.to_string()))?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy of the federation with annotation labels removed from `dataset_id`.
    pub fn hide_labels(&self, dataset_id: &str) -> Federation {
        let mut fed = self.federation.clone();
        for d in fed.datasets.iter_mut().filter(|d| d.dataset_id == dataset_id) {
            d.declared_annotations.clear();
            for s in &mut d.samples {
                s.annotations.values_mut().for_each(|v| *v = None);
            }
        }
        fed
    }
}
