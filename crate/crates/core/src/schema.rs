//! Global annotation schema, dataset manifests and the per-annotation
//! partition of a federation.
//!
//! A manifest is a line-delimited JSON file. An optional first line is a
//! header `{"dataset_id": .., "declared_annotations": [..], "split_seed": ..}`;
//! every other line is one sample record. Without a header the dataset id is
//! the file stem and the declared annotations are the keys that carry at
//! least one label.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Minimum fraction of labeled samples for a declared annotation to count.
pub const DEFAULT_MIN_COVERAGE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Categorical,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSpec {
    pub name: String,
    pub kind: AnnotationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_set: Option<Vec<String>>,
}

impl AnnotationSpec {
    pub fn categorical(name: &str, labels: &[&str]) -> Self {
        AnnotationSpec {
            name: name.to_string(),
            kind: AnnotationKind::Categorical,
            label_set: Some(labels.iter().map(|l| normalize_label(l)).collect()),
        }
    }

    pub fn cluster(name: &str) -> Self {
        AnnotationSpec { name: name.to_string(), kind: AnnotationKind::Cluster, label_set: None }
    }

    pub fn accepts(&self, label: &str) -> bool {
        match &self.label_set {
            Some(set) => set.iter().any(|l| l == label),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalSchema {
    annotations: Vec<AnnotationSpec>,
}

impl GlobalSchema {
    pub fn new(annotations: Vec<AnnotationSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut normalized = Vec::with_capacity(annotations.len());
        for mut a in annotations {
            if !seen.insert(a.name.clone()) {
                return Err(Error::Schema(format!("duplicate annotation `{}`", a.name)));
            }
            match (a.kind, &a.label_set) {
                (AnnotationKind::Categorical, None) => {
                    return Err(Error::Schema(format!("categorical annotation `{}` needs a label_set", a.name)))
                }
                (AnnotationKind::Categorical, Some(set)) if set.is_empty() => {
                    return Err(Error::Schema(format!("categorical annotation `{}` has an empty label_set", a.name)))
                }
                (AnnotationKind::Cluster, Some(_)) => {
                    return Err(Error::Schema(format!("cluster annotation `{}` cannot fix a label_set", a.name)))
                }
                _ => {}
            }
            if let Some(set) = a.label_set.as_mut() {
                for l in set.iter_mut() {
                    *l = normalize_label(l);
                }
            }
            normalized.push(a);
        }
        Ok(GlobalSchema { annotations: normalized })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: GlobalSchema = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        GlobalSchema::new(raw.annotations)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn annotations(&self) -> &[AnnotationSpec] {
        &self.annotations
    }

    pub fn get(&self, name: &str) -> Option<&AnnotationSpec> {
        self.annotations.iter().find(|a| a.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.annotations.iter().map(|a| a.name.as_str())
    }
}

/// Lowercase and trim; cross-dataset vocabularies differ in casing.
pub fn normalize_label(label: &str) -> String {
    label.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub feature_ref: Option<String>,
    #[serde(default)]
    pub annotations: BTreeMap<String, Option<String>>,
}

impl SampleRecord {
    pub fn label(&self, annotation: &str) -> Option<&str> {
        self.annotations.get(annotation).and_then(|l| l.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub declared_annotations: BTreeSet<String>,
    pub samples: Vec<SampleRecord>,
    pub split_seed: u64,
    /// Directory that relative image and feature paths resolve against.
    pub root: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    dataset_id: String,
    #[serde(default)]
    declared_annotations: Vec<String>,
    #[serde(default)]
    split_seed: u64,
}

impl DatasetManifest {
    pub fn new(dataset_id: &str, declared: &[&str], samples: Vec<SampleRecord>) -> Self {
        DatasetManifest {
            dataset_id: dataset_id.to_string(),
            declared_annotations: declared.iter().map(|s| s.to_string()).collect(),
            samples,
            split_seed: 0,
            root: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Fraction of samples with a non-null label for `annotation`.
    pub fn coverage(&self, annotation: &str) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let labeled = self.samples.iter().filter(|s| s.label(annotation).is_some()).count();
        labeled as f64 / self.samples.len() as f64
    }

    /// Declares `annotation` and labels at least `min_coverage` of its samples.
    pub fn contains_annotation(&self, annotation: &str, min_coverage: f64) -> bool {
        self.declared_annotations.contains(annotation)
            && !self.samples.is_empty()
            && self.coverage(annotation) >= min_coverage
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn split_of(&self, sample_id: &str) -> Split {
        Split::of(self.split_seed, sample_id)
    }

    pub fn samples_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |s| self.split_of(&s.sample_id) == split)
    }

    /// Serialize in the manifest format (header line plus one line per record).
    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            dataset_id: self.dataset_id.clone(),
            declared_annotations: self.declared_annotations.iter().cloned().collect(),
            split_seed: self.split_seed,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

/// Seeded 80/10/10 assignment of a sample to train/val/test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn of(seed: u64, sample_id: &str) -> Split {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(sample_id.as_bytes());
        let digest = h.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        match u64::from_le_bytes(head) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Federation {
    pub schema: GlobalSchema,
    pub datasets: Vec<DatasetManifest>,
}

impl Federation {
    pub fn new(schema: GlobalSchema, datasets: Vec<DatasetManifest>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::Schema("a federation needs at least one dataset".into()));
        }
        let mut ids = HashSet::new();
        for d in &datasets {
            if !ids.insert(d.dataset_id.as_str()) {
                return Err(Error::Schema(format!("duplicate dataset_id `{}`", d.dataset_id)));
            }
        }
        Ok(Federation { schema, datasets })
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetManifest> {
        self.datasets.iter().find(|d| d.dataset_id == id)
    }

    pub fn total_samples(&self) -> usize {
        self.datasets.iter().map(|d| d.len()).sum()
    }
}

/// Parse a manifest without checking it against a schema. Labels are
/// normalized; null labels stay null.
pub fn parse_manifest_unchecked(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    let mut manifest = parse_manifest_str(&text, stem, path)?;
    manifest.root = path.parent().map(Path::to_path_buf);
    Ok(manifest)
}

pub(crate) fn parse_manifest_str(text: &str, default_id: &str, path: &Path) -> Result<DatasetManifest> {
    let mut header: Option<ManifestHeader> = None;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: line_no, msg };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| err("expected a JSON object".into()))?;
        if !obj.contains_key("sample_id") && obj.contains_key("dataset_id") {
            if header.is_some() || !samples.is_empty() {
                return Err(err("header must be the first record".into()));
            }
            header = Some(serde_json::from_value(value).map_err(|e| err(e.to_string()))?);
            continue;
        }
        let mut record: SampleRecord = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        for label in record.annotations.values_mut().flatten() {
            *label = normalize_label(label);
        }
        samples.push(record);
    }
    Ok(match header {
        Some(h) => DatasetManifest {
            dataset_id: h.dataset_id,
            declared_annotations: h.declared_annotations.into_iter().collect(),
            samples,
            split_seed: h.split_seed,
            root: None,
        },
        None => {
            let declared = samples
                .iter()
                .flat_map(|s| s.annotations.iter())
                .filter(|(_, v)| v.is_some())
                .map(|(k, _)| k.clone())
                .collect();
            let dataset_id = if samples.is_empty() { String::new() } else { default_id.to_string() };
            DatasetManifest { dataset_id, declared_annotations: declared, samples, split_seed: 0, root: None }
        }
    })
}

/// Parse a manifest and validate every record against `schema`.
pub fn parse_manifest(path: &Path, schema: &GlobalSchema) -> Result<DatasetManifest> {
    let manifest = parse_manifest_unchecked(path)?;
    let violations = manifest_violations(&manifest, schema, None);
    match violations.into_iter().next() {
        Some(v) => Err(Error::Schema(v.to_string())),
        None => Ok(manifest),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateDatasetId,
    DuplicateSampleId,
    UnknownAnnotation,
    UndeclaredAnnotation,
    LabelOutsideSet,
    LowCoverage,
    MissingFile,
    MissingSource,
    EmptyFederation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub dataset_id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {:?}: {}", self.dataset_id, self.kind, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in &self.violations {
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

fn manifest_violations(m: &DatasetManifest, schema: &GlobalSchema, check_files: Option<f64>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| out.push(Violation { dataset_id: m.dataset_id.clone(), kind, detail });

    for name in &m.declared_annotations {
        if schema.get(name).is_none() {
            push(ViolationKind::UnknownAnnotation, format!("declared annotation `{name}` is not in the schema"));
        }
    }
    let mut ids = HashSet::new();
    for s in &m.samples {
        if !ids.insert(s.sample_id.as_str()) {
            push(ViolationKind::DuplicateSampleId, format!("sample_id `{}` appears more than once", s.sample_id));
        }
        for (name, label) in &s.annotations {
            let Some(label) = label else { continue };
            let Some(spec) = schema.get(name) else {
                push(ViolationKind::UnknownAnnotation, format!("sample `{}` uses unknown annotation `{name}`", s.sample_id));
                continue;
            };
            if !m.declared_annotations.contains(name) {
                push(
                    ViolationKind::UndeclaredAnnotation,
                    format!("sample `{}` labels undeclared annotation `{name}`", s.sample_id),
                );
            }
            if !spec.accepts(label) {
                push(
                    ViolationKind::LabelOutsideSet,
                    format!("sample `{}`: label `{label}` not in the `{name}` label_set", s.sample_id),
                );
            }
        }
    }
    if let Some(min_coverage) = check_files {
        for name in &m.declared_annotations {
            let cov = m.coverage(name);
            if !m.samples.is_empty() && cov < min_coverage {
                push(
                    ViolationKind::LowCoverage,
                    format!("annotation `{name}` labels {:.1}% of samples (< {:.1}%)", cov * 100.0, min_coverage * 100.0),
                );
            }
        }
        for s in &m.samples {
            if s.image.is_none() && s.feature_ref.is_none() {
                push(ViolationKind::MissingSource, format!("sample `{}` has neither image nor feature_ref", s.sample_id));
            }
            for rel in s.image.iter().chain(s.feature_ref.iter()) {
                if !m.resolve(rel).exists() {
                    push(ViolationKind::MissingFile, format!("sample `{}`: `{rel}` does not exist", s.sample_id));
                }
            }
        }
    }
    out
}

/// Report every violation, duplicate ids and missing files included. The
/// report is empty iff the federation is valid.
pub fn validate_federation(fed: &Federation) -> ValidationReport {
    validate_federation_with(fed, DEFAULT_MIN_COVERAGE)
}

pub fn validate_federation_with(fed: &Federation, min_coverage: f64) -> ValidationReport {
    let mut violations = Vec::new();
    if fed.datasets.is_empty() {
        violations.push(Violation {
            dataset_id: String::new(),
            kind: ViolationKind::EmptyFederation,
            detail: "no datasets".into(),
        });
    }
    let mut ids = HashSet::new();
    for d in &fed.datasets {
        if !ids.insert(d.dataset_id.as_str()) {
            violations.push(Violation {
                dataset_id: d.dataset_id.clone(),
                kind: ViolationKind::DuplicateDatasetId,
                detail: format!("dataset_id `{}` appears more than once", d.dataset_id),
            });
        }
        violations.extend(manifest_violations(d, &fed.schema, Some(min_coverage)));
    }
    ValidationReport { violations }
}

/// Datasets that contain annotation `k` and those that lack it.
#[derive(Debug, Clone)]
pub struct Partition<'a> {
    pub annotated: Vec<&'a DatasetManifest>,
    pub unannotated: Vec<&'a DatasetManifest>,
}

pub fn partition_by_annotation<'a>(fed: &'a Federation, k: &str) -> Result<Partition<'a>> {
    partition_by_annotation_with(fed, k, DEFAULT_MIN_COVERAGE)
}

pub fn partition_by_annotation_with<'a>(fed: &'a Federation, k: &str, min_coverage: f64) -> Result<Partition<'a>> {
    if fed.schema.get(k).is_none() {
        return Err(Error::Config(format!("annotation `{k}` is not in the schema")));
    }
    let (annotated, unannotated): (Vec<_>, Vec<_>) =
        fed.datasets.iter().partition(|d| d.contains_annotation(k, min_coverage));
    if annotated.is_empty() {
        return Err(Error::NoSource(k.to_string()));
    }
    Ok(Partition { annotated, unannotated })
}
