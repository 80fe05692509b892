//! Knowledge-integrated dataset: the union of every component dataset with
//! original labels kept and gaps filled by teams or make clusters.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{transfer_make_clusters, ClusterModel};
use crate::error::{Error, Result};
use crate::features::{FeatureStore, FeatureVector};
use crate::schema::{AnnotationKind, DatasetManifest, Federation, GlobalSchema, SampleRecord};
use crate::team::{label_samples, Team};

pub const KID_DATASET_ID: &str = "kid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Original,
    Inferred,
    Abstained,
}

/// One annotation of one KID record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidAnnotation {
    pub value: Option<String>,
    pub source: LabelSource,
    pub agreement: Option<f64>,
    pub threshold: Option<f64>,
    pub team_version: Option<String>,
}

impl KidAnnotation {
    fn original(value: &str) -> Self {
        KidAnnotation { value: Some(value.to_string()), source: LabelSource::Original, agreement: None, threshold: None, team_version: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KidRecord {
    /// `<dataset_id>/<local sample id>`.
    pub sample_id: String,
    pub source_dataset: String,
    pub image: Option<String>,
    pub feature_ref: Option<String>,
    pub annotations: BTreeMap<String, KidAnnotation>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub original: usize,
    pub inferred: usize,
    pub abstained: usize,
}

impl SourceCounts {
    fn add(&mut self, source: LabelSource) {
        match source {
            LabelSource::Original => self.original += 1,
            LabelSource::Inferred => self.inferred += 1,
            LabelSource::Abstained => self.abstained += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.original + self.inferred + self.abstained
    }

    /// Share of records with a value; 0 for an empty count.
    pub fn coverage(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.original + self.inferred) as f64 / n as f64,
        }
    }
}

/// What produced a KID; everything here is reproducible from the inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub codec: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KidManifest {
    pub schema: GlobalSchema,
    pub records: Vec<KidRecord>,
    pub provenance_summary: BTreeMap<String, SourceCounts>,
    pub meta: BuildMeta,
}

fn summarize(schema: &GlobalSchema, records: &[KidRecord]) -> BTreeMap<String, SourceCounts> {
    let mut summary: BTreeMap<String, SourceCounts> = schema.names().map(|n| (n.to_string(), SourceCounts::default())).collect();
    for r in records {
        for (k, a) in &r.annotations {
            summary.entry(k.clone()).or_default().add(a.source);
        }
    }
    summary
}

/// Content hash of a cluster model, used as its version.
pub fn cluster_model_version(model: &ClusterModel) -> String {
    hex::encode(&Sha256::digest(model.to_text().as_bytes())[..8])
}

fn global_id(d: &DatasetManifest, s: &SampleRecord) -> String {
    format!("{}/{}", d.dataset_id, s.sample_id)
}

/// Union every dataset of `fed`, keeping original labels and filling each
/// gap with the team (categorical) or cluster model (cluster kind) of its
/// annotation.
pub fn build_kid(
    fed: &Federation,
    teams: &BTreeMap<String, Team>,
    cluster_model: Option<&ClusterModel>,
    store: &FeatureStore,
    meta: BuildMeta,
) -> Result<KidManifest> {
    let mut records: Vec<KidRecord> = fed
        .datasets
        .iter()
        .flat_map(|d| {
            d.samples.iter().map(move |s| KidRecord {
                sample_id: global_id(d, s),
                source_dataset: d.dataset_id.clone(),
                image: s.image.as_ref().map(|p| d.resolve(p).to_string_lossy().into_owned()),
                feature_ref: s.feature_ref.as_ref().map(|p| d.resolve(p).to_string_lossy().into_owned()),
                annotations: s.annotations.iter().filter_map(|(k, v)| v.as_deref().map(|v| (k.clone(), KidAnnotation::original(v)))).collect(),
            })
        })
        .collect();
    let index: BTreeMap<String, usize> = records.iter().enumerate().map(|(i, r)| (r.sample_id.clone(), i)).collect();

    for spec in fed.schema.annotations() {
        let k = spec.name.as_str();
        let gaps: Vec<(&DatasetManifest, &SampleRecord)> =
            fed.datasets.iter().flat_map(|d| d.samples.iter().filter(|s| s.label(k).is_none()).map(move |s| (d, s))).collect();
        if gaps.is_empty() {
            continue;
        }
        match spec.kind {
            AnnotationKind::Categorical => {
                let team = teams
                    .get(k)
                    .ok_or_else(|| Error::Config(format!("annotation `{k}` has {} unlabeled samples and no team", gaps.len())))?;
                let version = team.version();
                for d in &fed.datasets {
                    let ids: Vec<&str> = d.samples.iter().filter(|s| s.label(k).is_none()).map(|s| s.sample_id.as_str()).collect();
                    if ids.is_empty() {
                        continue;
                    }
                    for dec in label_samples(team, &d.dataset_id, ids, store)? {
                        let (value, source) = match dec.label() {
                            Some(l) => (Some(l.to_string()), LabelSource::Inferred),
                            None => (None, LabelSource::Abstained),
                        };
                        let annotation = KidAnnotation {
                            value,
                            source,
                            agreement: Some(dec.winning_fraction),
                            threshold: dec.threshold,
                            team_version: Some(version.clone()),
                        };
                        let i = index[&format!("{}/{}", d.dataset_id, dec.sample_id)];
                        records[i].annotations.insert(k.to_string(), annotation);
                    }
                }
            }
            AnnotationKind::Cluster => {
                let model = cluster_model
                    .ok_or_else(|| Error::Config(format!("annotation `{k}` has {} unlabeled samples and no cluster model", gaps.len())))?;
                let version = cluster_model_version(model);
                let xs: Vec<(String, &FeatureVector)> = gaps
                    .par_iter()
                    .map(|(d, s)| Ok((global_id(d, s), store.get(&d.dataset_id, &s.sample_id)?.original())))
                    .collect::<Result<_>>()?;
                let refs: Vec<(&str, &FeatureVector)> = xs.iter().map(|(id, x)| (id.as_str(), *x)).collect();
                let (assignments, augmented) = transfer_make_clusters(model, &refs)?;
                for a in assignments {
                    let value = augmented.label_of(&a.cluster_id).map(str::to_string).unwrap_or_else(|| a.cluster_id.clone());
                    let annotation = KidAnnotation {
                        value: Some(value),
                        source: LabelSource::Inferred,
                        agreement: None,
                        threshold: None,
                        team_version: Some(version.clone()),
                    };
                    records[index[&a.sample_id]].annotations.insert(k.to_string(), annotation);
                }
            }
        }
    }
    let provenance_summary = summarize(&fed.schema, &records);
    Ok(KidManifest { schema: fed.schema.clone(), records, provenance_summary, meta })
}

/// Per-annotation and per-source-dataset provenance counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KidStats {
    pub total: usize,
    pub per_annotation: BTreeMap<String, SourceCounts>,
    pub coverage: BTreeMap<String, f64>,
    pub per_dataset: BTreeMap<String, BTreeMap<String, SourceCounts>>,
}

pub fn kid_stats(kid: &KidManifest) -> KidStats {
    let per_annotation = summarize(&kid.schema, &kid.records);
    let coverage = per_annotation.iter().map(|(k, c)| (k.clone(), c.coverage())).collect();
    let mut per_dataset: BTreeMap<String, BTreeMap<String, SourceCounts>> = BTreeMap::new();
    for r in &kid.records {
        let entry = per_dataset.entry(r.source_dataset.clone()).or_default();
        for (k, a) in &r.annotations {
            entry.entry(k.clone()).or_default().add(a.source);
        }
    }
    KidStats { total: kid.records.len(), per_annotation, coverage, per_dataset }
}

#[derive(Serialize, Deserialize)]
struct KidHeader {
    dataset_id: String,
    declared_annotations: Vec<String>,
    split_seed: u64,
    build: BuildMeta,
}

#[derive(Serialize, Deserialize)]
struct Provenance {
    source: LabelSource,
    agreement: Option<f64>,
    threshold: Option<f64>,
    team_version: Option<String>,
}

/// Manifest-compatible line: the plain fields any manifest reader
/// understands plus `source_dataset` and `provenance`.
#[derive(Serialize, Deserialize)]
struct KidLine {
    sample_id: String,
    #[serde(default)]
    image: Option<String>,
    #[serde(default)]
    feature_ref: Option<String>,
    annotations: BTreeMap<String, Option<String>>,
    source_dataset: String,
    provenance: BTreeMap<String, Provenance>,
}

impl KidManifest {
    /// Line-delimited export readable as an ordinary dataset manifest.
    pub fn to_jsonl(&self) -> String {
        let header = KidHeader {
            dataset_id: KID_DATASET_ID.to_string(),
            declared_annotations: self.schema.names().map(str::to_string).collect(),
            split_seed: 0,
            build: self.meta.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes") + "\n";
        for r in &self.records {
            let line = KidLine {
                sample_id: r.sample_id.clone(),
                image: r.image.clone(),
                feature_ref: r.feature_ref.clone(),
                annotations: r.annotations.iter().map(|(k, a)| (k.clone(), a.value.clone())).collect(),
                source_dataset: r.source_dataset.clone(),
                provenance: r
                    .annotations
                    .iter()
                    .map(|(k, a)| {
                        let p = Provenance {
                            source: a.source,
                            agreement: a.agreement,
                            threshold: a.threshold,
                            team_version: a.team_version.clone(),
                        };
                        (k.clone(), p)
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`KidManifest::to_jsonl`].
    pub fn from_jsonl(text: &str, schema: &GlobalSchema) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, msg: String| Error::Parse { path: "<kid>".into(), line: line + 1, msg };
        let (n, first) = lines.next().ok_or_else(|| Error::Format("empty KID manifest".into()))?;
        let header: KidHeader = serde_json::from_str(first).map_err(|e| parse_err(n, e.to_string()))?;
        let mut records = Vec::new();
        for (n, line) in lines {
            let l: KidLine = serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
            let mut annotations = BTreeMap::new();
            for (k, p) in l.provenance {
                let value = l.annotations.get(&k).cloned().flatten();
                annotations.insert(
                    k,
                    KidAnnotation { value, source: p.source, agreement: p.agreement, threshold: p.threshold, team_version: p.team_version },
                );
            }
            records.push(KidRecord {
                sample_id: l.sample_id,
                source_dataset: l.source_dataset,
                image: l.image,
                feature_ref: l.feature_ref,
                annotations,
            });
        }
        let provenance_summary = summarize(schema, &records);
        Ok(KidManifest { schema: schema.clone(), records, provenance_summary, meta: header.build })
    }

    /// Summary file with per-annotation counts and build metadata.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            records: usize,
            provenance_summary: &'a BTreeMap<String, SourceCounts>,
            stats: KidStats,
            build: &'a BuildMeta,
        }
        let s = Summary { records: self.records.len(), provenance_summary: &self.provenance_summary, stats: kid_stats(self), build: &self.meta };
        serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"
    }

    /// Write `kid.jsonl` and `kid_summary.json` into `dir`.
    pub fn write(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("kid.jsonl"), self.to_jsonl())?;
        std::fs::write(dir.join("kid_summary.json"), self.summary_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_arithmetic() {
        let c = SourceCounts { original: 5, inferred: 2, abstained: 3 };
        assert_eq!(c.total(), 10);
        assert!((c.coverage() - 0.7).abs() < 1e-12);
        assert_eq!(SourceCounts::default().coverage(), 0.0);
    }
}
