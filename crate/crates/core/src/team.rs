//! Annotation teams: distance-based confidence weights, f-score priors,
//! the KL-adjusted agreement threshold and weighted voting with abstention.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expert::{member_predict, train_member, DatasetSplits, Member, TrainConfig};
use crate::features::{FeatureStore, FeatureVector};
use crate::schema::{partition_by_annotation, DatasetManifest, Federation};

/// Exponent applied to member f-scores when forming priors.
pub const DEFAULT_BETA: f64 = 4.0;
/// Floor on f-scores so a zero score cannot make the divergence infinite.
pub const FSCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Weighted,
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// 0.5 + alpha, alpha from the divergence of weights and priors.
    Dynamic,
    /// Plain 0.5.
    Fixed,
    /// Always assign the plurality label.
    Off,
}

impl std::str::FromStr for VoteMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(VoteMode::Weighted),
            "unweighted" => Ok(VoteMode::Unweighted),
            _ => Err(Error::Config(format!("unknown vote mode `{s}`"))),
        }
    }
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(ThresholdMode::Dynamic),
            "fixed" => Ok(ThresholdMode::Fixed),
            "off" => Ok(ThresholdMode::Off),
            _ => Err(Error::Config(format!("unknown threshold mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Team {
    pub annotation: String,
    pub members: Vec<Member>,
    pub priors: Vec<f64>,
    pub beta: f64,
    pub vote_mode: VoteMode,
    pub threshold_mode: ThresholdMode,
    /// Compressed views used at prediction time; `None` uses all available.
    pub max_compressed_views: Option<usize>,
}

impl Team {
    pub fn from_members(annotation: &str, members: Vec<Member>, beta: f64) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::NoSource(annotation.to_string()));
        }
        let fscores: Vec<f64> = members.iter().map(|m| m.fscore).collect();
        Ok(Team {
            annotation: annotation.to_string(),
            priors: initial_weights(&fscores, beta),
            members,
            beta,
            vote_mode: VoteMode::Weighted,
            threshold_mode: ThresholdMode::Dynamic,
            max_compressed_views: None,
        })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn centers(&self) -> Vec<&FeatureVector> {
        self.members.iter().map(|m| &m.center).collect()
    }
}

/// Train one member per dataset in `sources`; each member's peers are the
/// other sources.
pub fn build_team_on(annotation: &str, sources: &[&DatasetManifest], store: &FeatureStore, cfg: &TrainConfig) -> Result<Team> {
    if sources.is_empty() {
        return Err(Error::NoSource(annotation.to_string()));
    }
    let splits: Vec<DatasetSplits<'_>> = sources
        .iter()
        .map(|d| DatasetSplits::from_manifest(d, annotation, store))
        .collect::<Result<_>>()?;
    let members = (0..splits.len())
        .into_par_iter()
        .map(|j| {
            let peers: Vec<DatasetSplits<'_>> =
                splits.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, s)| s.clone()).collect();
            train_member(&splits[j], &peers, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    log::info!("team `{annotation}`: trained {} members", members.len());
    Team::from_members(annotation, members, DEFAULT_BETA)
}

/// Team for annotation `k` with one member per dataset that carries it.
pub fn build_team(k: &str, fed: &Federation, store: &FeatureStore, cfg: &TrainConfig) -> Result<Team> {
    let part = partition_by_annotation(fed, k)?;
    build_team_on(k, &part.annotated, store, cfg)
}

/// Per-member vote weight from the sample's distance to each member's
/// training-data center.
///
/// `w_j = (1/S)(1 - d_j / Σ d_m)`. A single member gets weight 1; a sample
/// at zero distance from every center gets the uniform `(1/S)(1 - 1/S)`.
pub fn confidence_weights(x: &FeatureVector, centers: &[&FeatureVector]) -> Vec<f64> {
    let s = centers.len();
    if s == 1 {
        return vec![1.0];
    }
    let sf = s as f64;
    let dists: Vec<f64> = centers.iter().map(|c| x.l2_distance(c)).collect();
    let total: f64 = dists.iter().sum();
    if total == 0.0 {
        return vec![(1.0 - 1.0 / sf) / sf; s];
    }
    dists.iter().map(|d| (1.0 - d / total) / sf).collect()
}

/// Priors `q_j = f_j^β / Σ f_m^β` with f-scores floored at [`FSCORE_FLOOR`].
pub fn initial_weights(fscores: &[f64], beta: f64) -> Vec<f64> {
    let powered: Vec<f64> = fscores.iter().map(|f| f.max(FSCORE_FLOOR).powf(beta)).collect();
    let total: f64 = powered.iter().sum();
    powered.iter().map(|p| p / total).collect()
}

/// Threshold increment `0.5 (1 - exp(-KL(p̂ || q)))` where `p̂` is the
/// confidence weight vector normalized to sum to one.
pub fn agreement_alpha(w: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), q.len());
    let total: f64 = w.iter().sum();
    let n = w.len() as f64;
    let kl: f64 = w
        .iter()
        .zip(q)
        .map(|(&wj, &qj)| {
            let p = if total > 0.0 { wj / total } else { 1.0 / n };
            if p > 0.0 {
                p * (p / qj.max(f64::MIN_POSITIVE)).ln()
            } else {
                0.0
            }
        })
        .sum();
    0.5 * (1.0 - (-kl.max(0.0)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "label", rename_all = "lowercase")]
pub enum Outcome {
    Assigned(String),
    Abstained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberVote {
    pub member_id: String,
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub sample_id: String,
    #[serde(flatten)]
    pub outcome: Outcome,
    /// Leading label, reported even when the team abstains.
    pub top_label: String,
    pub winning_fraction: f64,
    pub alpha: f64,
    /// `None` when thresholding is off.
    pub threshold: Option<f64>,
    pub member_votes: Vec<MemberVote>,
}

impl LabelDecision {
    pub fn label(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Assigned(l) => Some(l),
            Outcome::Abstained => None,
        }
    }
}

pub fn label_sample(team: &Team, sample_id: &str, x: &FeatureVector, views: &[FeatureVector]) -> Result<LabelDecision> {
    let views = match team.max_compressed_views {
        Some(extra) => &views[..(1 + extra).min(views.len())],
        None => views,
    };
    let s = team.size();
    let weights = match team.vote_mode {
        VoteMode::Weighted => confidence_weights(x, &team.centers()),
        VoteMode::Unweighted => vec![1.0 / s as f64; s],
    };
    let mut tally: BTreeMap<String, f64> = BTreeMap::new();
    let mut member_votes = Vec::with_capacity(s);
    for (m, &w) in team.members.iter().zip(&weights) {
        let (label, _) = member_predict(m, views)?;
        *tally.entry(label.clone()).or_default() += w;
        member_votes.push(MemberVote { member_id: m.member_id.clone(), label, weight: w });
    }
    let total: f64 = weights.iter().sum();
    let mut top: Option<(&String, f64)> = None;
    for (label, &v) in &tally {
        if top.is_none_or(|(_, b)| v > b) {
            top = Some((label, v));
        }
    }
    let (top_label, top_votes) = top.expect("team has members");
    let winning_fraction = if total > 0.0 { top_votes / total } else { 0.0 };
    let (alpha, threshold) = match team.threshold_mode {
        ThresholdMode::Dynamic => {
            let a = agreement_alpha(&weights, &team.priors);
            (a, Some(0.5 + a))
        }
        ThresholdMode::Fixed => (0.0, Some(0.5)),
        ThresholdMode::Off => (0.0, None),
    };
    let outcome = match threshold {
        Some(t) if winning_fraction < t => Outcome::Abstained,
        _ => Outcome::Assigned(top_label.clone()),
    };
    Ok(LabelDecision {
        sample_id: sample_id.to_string(),
        outcome,
        top_label: top_label.clone(),
        winning_fraction,
        alpha,
        threshold,
        member_votes,
    })
}

/// Label every sample of `d`, preserving manifest order.
pub fn label_dataset(team: &Team, d: &DatasetManifest, store: &FeatureStore) -> Result<Vec<LabelDecision>> {
    label_samples(team, &d.dataset_id, d.samples.iter().map(|s| s.sample_id.as_str()).collect::<Vec<_>>(), store)
}

pub fn label_samples(team: &Team, dataset_id: &str, sample_ids: Vec<&str>, store: &FeatureStore) -> Result<Vec<LabelDecision>> {
    sample_ids
        .par_iter()
        .map(|id| {
            let vs = store.get(dataset_id, id).map_err(|_| Error::Coverage(id.to_string()))?;
            label_sample(team, id, vs.original(), &vs.views)
        })
        .collect()
}

pub fn decisions_to_jsonl(decisions: &[LabelDecision]) -> String {
    decisions.iter().map(|d| serde_json::to_string(d).expect("decision serializes") + "\n").collect()
}

#[derive(Serialize, Deserialize)]
struct TeamMeta {
    annotation: String,
    members: Vec<String>,
    priors: Vec<f64>,
    beta: f64,
    vote_mode: VoteMode,
    threshold_mode: ThresholdMode,
    max_compressed_views: Option<usize>,
}

impl Team {
    /// Relative paths and contents of the team directory.
    pub fn files(&self) -> Vec<(String, String)> {
        let meta = TeamMeta {
            annotation: self.annotation.clone(),
            members: self.members.iter().map(|m| m.member_id.clone()).collect(),
            priors: self.priors.clone(),
            beta: self.beta,
            vote_mode: self.vote_mode,
            threshold_mode: self.threshold_mode,
            max_compressed_views: self.max_compressed_views,
        };
        let mut out = vec![("team.json".to_string(), serde_json::to_string_pretty(&meta).expect("team serializes") + "\n")];
        for (i, m) in self.members.iter().enumerate() {
            for (name, contents) in m.files() {
                out.push((format!("member-{i}/{name}"), contents));
            }
        }
        out
    }

    /// Content hash of the team directory.
    pub fn version(&self) -> String {
        let mut h = Sha256::new();
        for (name, contents) in self.files() {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(contents.as_bytes());
            h.update([0]);
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (name, contents) in self.files() {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, contents)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: TeamMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("team.json"))?)?;
        let members = (0..meta.members.len())
            .map(|i| Member::load(&dir.join(format!("member-{i}"))))
            .collect::<Result<Vec<_>>>()?;
        if members.is_empty() || meta.priors.len() != members.len() {
            return Err(Error::Format(format!("team `{}` is inconsistent", meta.annotation)));
        }
        Ok(Team {
            annotation: meta.annotation,
            members,
            priors: meta.priors,
            beta: meta.beta,
            vote_mode: meta.vote_mode,
            threshold_mode: meta.threshold_mode,
            max_compressed_views: meta.max_compressed_views,
        })
    }
}
