//! Make-style labeling for dataset-local label spaces: per-make centroids,
//! cross-dataset merging, and single-pass transfer that opens novel
//! clusters for samples outside every known centroid's radius.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dataset_center, FeatureVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: BTreeMap<String, FeatureVector>,
    pub known: BTreeMap<String, Option<String>>,
    /// Assignment radius.
    pub tau: f64,
}

/// Labeled samples of one dataset; make labels are local to the dataset.
#[derive(Debug, Clone)]
pub struct MakeSet<'a> {
    pub dataset_id: String,
    pub samples: Vec<(&'a FeatureVector, &'a str)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub sample_id: String,
    pub cluster_id: String,
    pub distance: f64,
    pub novel: bool,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Nearest-rank percentile of an unsorted list.
fn percentile(values: &mut [f64], pct: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = ((pct / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

/// Fit one centroid per dataset-local make and merge makes of different
/// datasets whose centroids are closer than `tau`. Without an explicit
/// `tau` the radius is the 95th percentile of sample-to-centroid distances.
pub fn fit_make_centroids(labeled: &[MakeSet<'_>], tau: Option<f64>) -> Result<ClusterModel> {
    struct Group<'a> {
        dataset: &'a str,
        make: &'a str,
        samples: Vec<&'a FeatureVector>,
        centroid: FeatureVector,
    }
    let mut groups: Vec<Group<'_>> = Vec::new();
    for set in labeled {
        let mut by_make: BTreeMap<&str, Vec<&FeatureVector>> = BTreeMap::new();
        for (x, make) in &set.samples {
            by_make.entry(make).or_default().push(x);
        }
        for (make, samples) in by_make {
            let centroid = dataset_center(&samples)?;
            groups.push(Group { dataset: &set.dataset_id, make, samples, centroid });
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("no labeled makes to fit".into()));
    }
    let tau = match tau {
        Some(t) => t,
        None => {
            let mut d: Vec<f64> =
                groups.iter().flat_map(|g| g.samples.iter().map(|x| x.l2_distance(&g.centroid))).collect();
            percentile(&mut d, 95.0)
        }
    }
    .max(1e-12);

    let mut uf = UnionFind::new(groups.len());
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            if groups[i].dataset != groups[j].dataset && groups[i].centroid.l2_distance(&groups[j].centroid) < tau {
                uf.union(i, j);
            }
        }
    }
    let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..groups.len() {
        let root = uf.find(i);
        merged.entry(root).or_default().push(i);
    }
    let mut model = ClusterModel { centroids: BTreeMap::new(), known: BTreeMap::new(), tau };
    for members in merged.values() {
        let id = members.iter().map(|&i| format!("{}:{}", groups[i].dataset, groups[i].make)).min().expect("non-empty");
        let label = members.iter().map(|&i| groups[i].make).min().expect("non-empty");
        let samples: Vec<&FeatureVector> = members.iter().flat_map(|&i| groups[i].samples.iter().copied()).collect();
        model.centroids.insert(id.clone(), dataset_center(&samples)?);
        model.known.insert(id, Some(label.to_string()));
    }
    Ok(model)
}

impl ClusterModel {
    fn nearest(&self, x: &FeatureVector) -> Option<(&String, f64)> {
        let mut best: Option<(&String, f64)> = None;
        for (id, c) in &self.centroids {
            let d = x.l2_distance(c);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((id, d));
            }
        }
        best
    }

    pub fn dim(&self) -> Option<usize> {
        self.centroids.values().next().map(FeatureVector::dim)
    }

    pub fn label_of(&self, cluster_id: &str) -> Option<&str> {
        self.known.get(cluster_id).and_then(|l| l.as_deref())
    }

    /// `tau=<x>` then one line per centroid: `cluster_id make|- v1 .. vN`.
    pub fn to_text(&self) -> String {
        let mut out = format!("tau={}\n", self.tau);
        for (id, c) in &self.centroids {
            let make = self.label_of(id).unwrap_or("-");
            let _ = write!(out, "{id} {make}");
            for v in c.as_slice() {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let tau = lines
            .next()
            .and_then(|l| l.strip_prefix("tau="))
            .and_then(|t| t.parse::<f64>().ok())
            .ok_or_else(|| Error::Format("cluster model needs a `tau=` header".into()))?;
        let mut model = ClusterModel { centroids: BTreeMap::new(), known: BTreeMap::new(), tau };
        for line in lines {
            let mut parts = line.split_whitespace();
            let (Some(id), Some(make)) = (parts.next(), parts.next()) else {
                return Err(Error::Format(format!("bad centroid line `{line}`")));
            };
            let values = parts
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("centroid `{id}`: {e}")))?;
            model.centroids.insert(id.to_string(), FeatureVector::new(values)?);
            model.known.insert(id.to_string(), (make != "-").then(|| make.to_string()));
        }
        Ok(model)
    }
}

/// Assign samples in sample-id order to the nearest centroid within `tau`,
/// opening a novel cluster at any sample farther than `tau` from all.
/// Returns the assignments and the model augmented with the novel clusters.
pub fn transfer_make_clusters(
    model: &ClusterModel,
    samples: &[(&str, &FeatureVector)],
) -> Result<(Vec<ClusterAssignment>, ClusterModel)> {
    let mut model = model.clone();
    let mut order: Vec<&(&str, &FeatureVector)> = samples.iter().collect();
    order.sort_by(|a, b| a.0.cmp(b.0));
    let mut novel_ids: BTreeSet<String> = BTreeSet::new();
    let mut next = model.centroids.keys().filter(|k| k.starts_with("novel-")).count();
    let mut out = Vec::with_capacity(samples.len());
    for (sample_id, x) in order {
        if let Some(dim) = model.dim() {
            if x.dim() != dim {
                return Err(Error::Shape { expected: dim, got: x.dim() });
            }
        }
        let assignment = match model.nearest(x) {
            Some((id, d)) if d <= model.tau => {
                ClusterAssignment { sample_id: sample_id.to_string(), cluster_id: id.clone(), distance: d, novel: novel_ids.contains(id) }
            }
            _ => {
                let id = loop {
                    let candidate = format!("novel-{next:04}");
                    next += 1;
                    if !model.centroids.contains_key(&candidate) {
                        break candidate;
                    }
                };
                model.centroids.insert(id.clone(), (*x).clone());
                model.known.insert(id.clone(), None);
                novel_ids.insert(id.clone());
                ClusterAssignment { sample_id: sample_id.to_string(), cluster_id: id, distance: 0.0, novel: true }
            }
        };
        out.push(assignment);
    }
    Ok((out, model))
}

/// Fraction of makes for which some cluster holds a strict majority of the
/// make's samples and has that make as its plurality (ties to the
/// lexicographically smallest make).
pub fn make_detection_score(assignments: &[ClusterAssignment], ground_truth: &BTreeMap<String, String>) -> Result<f64> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyInput("empty make ground truth".into()));
    }
    let mut per_cluster: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    let mut per_make: BTreeMap<&str, usize> = BTreeMap::new();
    for a in assignments {
        let make = ground_truth.get(&a.sample_id).ok_or_else(|| Error::Coverage(a.sample_id.clone()))?;
        *per_cluster.entry(&a.cluster_id).or_default().entry(make).or_default() += 1;
        *per_make.entry(make).or_default() += 1;
    }
    if per_make.is_empty() {
        return Err(Error::EmptyInput("no assignments to score".into()));
    }
    let mut detected = BTreeSet::new();
    for counts in per_cluster.values() {
        let mut plurality: Option<(&str, usize)> = None;
        for (&make, &n) in counts {
            if plurality.is_none_or(|(_, b)| n > b) {
                plurality = Some((make, n));
            }
        }
        let (make, n) = plurality.expect("non-empty cluster");
        if 2 * n > per_make[make] {
            detected.insert(make);
        }
    }
    Ok(detected.len() as f64 / per_make.len() as f64)
}
