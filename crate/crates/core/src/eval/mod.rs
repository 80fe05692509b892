//! Cross-dataset evaluation: hold one annotated dataset out, build the team
//! on the rest, label the held-out test split and compare with its labels.
//! The ablation ladder repeats this while switching on one mitigation at a
//! time.

mod report;
pub mod synthetic;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expert::{derive_seed, TrainConfig};
use crate::features::{FeatureStore, FeatureVector, ViewSet};
use crate::schema::{partition_by_annotation, DatasetManifest, Federation, Split};
use crate::team::{build_team_on, initial_weights, label_sample, LabelDecision, Team, ThresholdMode, VoteMode, DEFAULT_BETA};

pub use report::{EvalReport, EvalRow, StageAggregate};
use synthetic::{generate_synthetic_federation, SyntheticSpec};

/// Training plus prediction-time settings of a team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingConfig {
    pub train: TrainConfig,
    pub vote_mode: VoteMode,
    pub threshold_mode: ThresholdMode,
    /// Compressed views used at prediction time; `None` means all.
    pub max_compressed_views: Option<usize>,
    pub beta: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            train: TrainConfig::default(),
            vote_mode: VoteMode::Weighted,
            threshold_mode: ThresholdMode::Dynamic,
            max_compressed_views: None,
            beta: DEFAULT_BETA,
        }
    }
}

impl LabelingConfig {
    pub fn apply(&self, team: &mut Team) {
        team.vote_mode = self.vote_mode;
        team.threshold_mode = self.threshold_mode;
        team.max_compressed_views = self.max_compressed_views;
        if team.beta != self.beta {
            team.beta = self.beta;
            let f: Vec<f64> = team.members.iter().map(|m| m.fscore).collect();
            team.priors = initial_weights(&f, self.beta);
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Short SHA-256 of any serializable configuration.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(&Sha256::digest(json.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberProvenance {
    pub member_id: String,
    pub peer_ids: Vec<String>,
}

/// Which datasets each member of a held-out round trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMeta {
    pub seed: u64,
    pub held_out: String,
    pub members: Vec<MemberProvenance>,
    pub team_version: String,
}

impl RoundMeta {
    pub fn trained_on(&self) -> impl Iterator<Item = &str> {
        self.members.iter().flat_map(|m| std::iter::once(m.member_id.as_str()).chain(m.peer_ids.iter().map(String::as_str)))
    }
}

/// One labeled test sample of a held-out round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub stage: String,
    pub seed: u64,
    pub dataset_id: String,
    pub truth: String,
    #[serde(flatten)]
    pub decision: LabelDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundScore {
    pub stage: String,
    pub seed: u64,
    pub held_out: String,
    pub n_test: usize,
    pub n_assigned: usize,
    pub n_correct: usize,
}

impl RoundScore {
    /// Accuracy on assigned samples; undefined when nothing was assigned.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n_assigned > 0).then(|| self.n_correct as f64 / self.n_assigned as f64)
    }

    pub fn coverage(&self) -> f64 {
        if self.n_test == 0 {
            0.0
        } else {
            self.n_assigned as f64 / self.n_test as f64
        }
    }
}

/// Accuracy-on-assigned and coverage recomputed from raw decisions.
pub fn score_decisions<'a>(decisions: impl IntoIterator<Item = &'a DecisionRecord>) -> (Option<f64>, f64) {
    let (mut n, mut assigned, mut correct) = (0usize, 0usize, 0usize);
    for d in decisions {
        n += 1;
        if let Some(l) = d.decision.label() {
            assigned += 1;
            correct += usize::from(l == d.truth);
        }
    }
    let acc = (assigned > 0).then(|| correct as f64 / assigned as f64);
    (acc, if n == 0 { 0.0 } else { assigned as f64 / n as f64 })
}

#[derive(Debug, Clone)]
pub struct HeldOutResult {
    pub report: EvalReport,
    pub rounds: Vec<RoundMeta>,
    pub scores: Vec<RoundScore>,
    pub decisions: Vec<DecisionRecord>,
}

struct TrainedRound<'a> {
    held_out: &'a DatasetManifest,
    team: Team,
    meta: RoundMeta,
}

fn train_rounds<'a>(k: &str, annotated: &[&'a DatasetManifest], store: &FeatureStore, train: &TrainConfig) -> Result<Vec<TrainedRound<'a>>> {
    annotated
        .par_iter()
        .enumerate()
        .map(|(i, held_out)| {
            let sources: Vec<&DatasetManifest> =
                annotated.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d).collect();
            let team = build_team_on(k, &sources, store, train)?;
            let meta = RoundMeta {
                seed: train.seed,
                held_out: held_out.dataset_id.clone(),
                members: team
                    .members
                    .iter()
                    .map(|m| MemberProvenance { member_id: m.member_id.clone(), peer_ids: m.peer_ids.clone() })
                    .collect(),
                team_version: team.version(),
            };
            if meta.trained_on().any(|id| id == held_out.dataset_id) {
                return Err(Error::Protocol(format!("held-out dataset `{}` leaked into training", held_out.dataset_id)));
            }
            Ok(TrainedRound { held_out, team, meta })
        })
        .collect()
}

fn score_round(k: &str, round: &TrainedRound<'_>, store: &FeatureStore, cfg: &LabelingConfig, stage: &str) -> Result<(RoundScore, Vec<DecisionRecord>)> {
    let mut team = round.team.clone();
    cfg.apply(&mut team);
    let d = round.held_out;
    let test: Vec<(&str, &str)> = d
        .samples_in(Split::Test)
        .filter_map(|s| s.label(k).map(|y| (s.sample_id.as_str(), y)))
        .collect();
    let decisions: Vec<DecisionRecord> = test
        .par_iter()
        .map(|(id, truth)| {
            let vs = store.get(&d.dataset_id, id)?;
            Ok(DecisionRecord {
                stage: stage.to_string(),
                seed: cfg.train.seed,
                dataset_id: d.dataset_id.clone(),
                truth: truth.to_string(),
                decision: label_sample(&team, id, vs.original(), &vs.views)?,
            })
        })
        .collect::<Result<_>>()?;
    let n_assigned = decisions.iter().filter(|r| r.decision.label().is_some()).count();
    let n_correct = decisions.iter().filter(|r| r.decision.label() == Some(r.truth.as_str())).count();
    let score = RoundScore {
        stage: stage.to_string(),
        seed: cfg.train.seed,
        held_out: d.dataset_id.clone(),
        n_test: decisions.len(),
        n_assigned,
        n_correct,
    };
    Ok((score, decisions))
}

fn annotated_sources<'a>(k: &str, fed: &'a Federation) -> Result<Vec<&'a DatasetManifest>> {
    let annotated = partition_by_annotation(fed, k)?.annotated;
    if annotated.len() < 2 {
        return Err(Error::Protocol(format!(
            "held-out evaluation of `{k}` needs at least 2 annotated datasets, found {}",
            annotated.len()
        )));
    }
    Ok(annotated)
}

/// Hold out each annotated dataset in turn, train on the rest, and score
/// the labels the team gives the held-out test split.
pub fn held_out_eval(k: &str, fed: &Federation, store: &FeatureStore, cfg: &LabelingConfig) -> Result<HeldOutResult> {
    let annotated = annotated_sources(k, fed)?;
    let rounds = train_rounds(k, &annotated, store, &cfg.train)?;
    let mut scores = Vec::new();
    let mut decisions = Vec::new();
    for r in &rounds {
        let (s, d) = score_round(k, r, store, cfg, "heldout")?;
        scores.push(s);
        decisions.extend(d);
    }
    let datasets: Vec<String> = annotated.iter().map(|d| d.dataset_id.clone()).collect();
    let report = EvalReport::from_scores(k, &["heldout".to_string()], &datasets, &[cfg.train.seed], &scores, cfg.hash());
    Ok(HeldOutResult { report, rounds: rounds.into_iter().map(|r| r.meta).collect(), scores, decisions })
}

/// Mitigation ladder, each rung adding one strategy to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationStage {
    Initial,
    Bootstrap,
    EarlyStop,
    Compression90,
    CompressionAll,
    ConfidenceWeights,
    AgreementThreshold,
}

impl AblationStage {
    pub const LADDER: [AblationStage; 7] = [
        AblationStage::Initial,
        AblationStage::Bootstrap,
        AblationStage::EarlyStop,
        AblationStage::Compression90,
        AblationStage::CompressionAll,
        AblationStage::ConfidenceWeights,
        AblationStage::AgreementThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationStage::Initial => "initial",
            AblationStage::Bootstrap => "+bootstrap",
            AblationStage::EarlyStop => "+early_stop",
            AblationStage::Compression90 => "+compression(90)",
            AblationStage::CompressionAll => "+compression(90,70,50)",
            AblationStage::ConfidenceWeights => "+confidence_weights",
            AblationStage::AgreementThreshold => "+agreement_threshold",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let trimmed = name.trim().trim_start_matches('+');
        AblationStage::LADDER
            .into_iter()
            .find(|s| s.name().trim_start_matches('+') == trimmed)
            .ok_or_else(|| Error::Config(format!("unknown ablation stage `{name}`")))
    }

    /// Parse `all`, a count, or a comma-separated prefix of the ladder.
    pub fn parse_list(spec: &str) -> Result<Vec<Self>> {
        let spec = spec.trim();
        if spec == "all" {
            return Ok(Self::LADDER.to_vec());
        }
        if let Ok(n) = spec.parse::<usize>() {
            if n == 0 || n > Self::LADDER.len() {
                return Err(Error::Config(format!("stage count {n} outside 1..=7")));
            }
            return Ok(Self::LADDER[..n].to_vec());
        }
        let stages = split_top_level(spec);
        let stages = stages.iter().map(|s| Self::parse(s)).collect::<Result<Vec<_>>>()?;
        check_prefix(&stages)?;
        Ok(stages)
    }

    /// Configuration with every stage up to and including `self` switched on.
    pub fn config(self, base: &LabelingConfig) -> LabelingConfig {
        let mut cfg = LabelingConfig {
            train: TrainConfig { bag_count: 1, bootstrap: false, early_stopping: false, ..base.train.clone() },
            vote_mode: VoteMode::Unweighted,
            threshold_mode: ThresholdMode::Off,
            max_compressed_views: Some(0),
            beta: base.beta,
        };
        for stage in Self::LADDER.into_iter().skip(1).take_while(|s| *s <= self) {
            match stage {
                AblationStage::Initial => {}
                AblationStage::Bootstrap => {
                    cfg.train.bag_count = base.train.bag_count;
                    cfg.train.bootstrap = true;
                }
                AblationStage::EarlyStop => cfg.train.early_stopping = true,
                AblationStage::Compression90 => cfg.max_compressed_views = Some(1),
                AblationStage::CompressionAll => cfg.max_compressed_views = None,
                AblationStage::ConfidenceWeights => cfg.vote_mode = VoteMode::Weighted,
                AblationStage::AgreementThreshold => cfg.threshold_mode = ThresholdMode::Dynamic,
            }
        }
        cfg
    }
}

/// Split on commas outside parentheses.
fn split_top_level(spec: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in spec.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(spec[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(spec[start..].trim());
    parts.into_iter().filter(|p| !p.is_empty()).collect()
}

fn check_prefix(stages: &[AblationStage]) -> Result<()> {
    if stages.is_empty() || stages != &AblationStage::LADDER[..stages.len()] {
        return Err(Error::Config("stages must be a prefix of the canonical ladder".into()));
    }
    Ok(())
}

/// One federation to evaluate; `seed` also seeds training.
#[derive(Debug, Clone, Copy)]
pub struct BenchRun<'a> {
    pub seed: u64,
    pub federation: &'a Federation,
    pub store: &'a FeatureStore,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub report: EvalReport,
    pub rounds: Vec<RoundMeta>,
    pub scores: Vec<RoundScore>,
    pub decisions: Vec<DecisionRecord>,
}

/// Held-out evaluation per stage and run; rows average over runs.
pub fn ablation_runs(k: &str, runs: &[BenchRun<'_>], stages: &[AblationStage], base: &LabelingConfig) -> Result<AblationResult> {
    check_prefix(stages)?;
    let configs: Vec<LabelingConfig> = stages.iter().map(|s| s.config(base)).collect();
    let per_run: Vec<(Vec<RoundMeta>, Vec<RoundScore>, Vec<DecisionRecord>, Vec<String>)> = runs
        .par_iter()
        .map(|run| {
            let annotated = annotated_sources(k, run.federation)?;
            // Stages that only change prediction reuse the teams of the last
            // stage that changed training.
            let mut cache: BTreeMap<String, Vec<TrainedRound<'_>>> = BTreeMap::new();
            let mut metas = Vec::new();
            let mut scores = Vec::new();
            let mut decisions = Vec::new();
            for (stage, cfg) in stages.iter().zip(&configs) {
                let train = TrainConfig { seed: run.seed, ..cfg.train.clone() };
                let key = config_hash(&train);
                if !cache.contains_key(&key) {
                    let rounds = train_rounds(k, &annotated, run.store, &train)?;
                    metas.extend(rounds.iter().map(|r| r.meta.clone()));
                    cache.insert(key.clone(), rounds);
                }
                let cfg = LabelingConfig { train, ..cfg.clone() };
                for round in &cache[&key] {
                    let (s, d) = score_round(k, round, run.store, &cfg, stage.name())?;
                    scores.push(s);
                    decisions.extend(d);
                }
            }
            let datasets = annotated.iter().map(|d| d.dataset_id.clone()).collect();
            Ok((metas, scores, decisions, datasets))
        })
        .collect::<Result<_>>()?;

    let datasets = per_run.first().map(|r| r.3.clone()).unwrap_or_default();
    let seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    let names: Vec<String> = stages.iter().map(|s| s.name().to_string()).collect();
    let mut rounds = Vec::new();
    let mut scores = Vec::new();
    let mut decisions = Vec::new();
    for (m, s, d, _) in per_run {
        rounds.extend(m);
        scores.extend(s);
        decisions.extend(d);
    }
    let hash = config_hash(&(base, &names, &seeds));
    let report = EvalReport::from_scores(k, &names, &datasets, &seeds, &scores, hash);
    Ok(AblationResult { report, rounds, scores, decisions })
}

/// Ablation over one federation, repeating training under each seed.
pub fn ablation_run(
    k: &str,
    fed: &Federation,
    store: &FeatureStore,
    stages: &[AblationStage],
    seeds: &[u64],
    base: &LabelingConfig,
) -> Result<AblationResult> {
    let runs: Vec<BenchRun<'_>> = seeds.iter().map(|&seed| BenchRun { seed, federation: fed, store }).collect();
    ablation_runs(k, &runs, stages, base)
}

/// Ablation over freshly generated synthetic federations, one per seed.
pub fn synthetic_ablation(spec: &SyntheticSpec, stages: &[AblationStage], seeds: &[u64], base: &LabelingConfig) -> Result<AblationResult> {
    let feds = seeds
        .par_iter()
        .map(|&seed| generate_synthetic_federation(&SyntheticSpec { seed, ..spec.clone() }))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<BenchRun<'_>> = feds
        .iter()
        .zip(seeds)
        .map(|(f, &seed)| BenchRun { seed, federation: &f.federation, store: &f.store })
        .collect();
    ablation_runs(spec.annotation.name(), &runs, stages, base)
}

/// Abstention behaviour of a full team on in-distribution test samples and
/// on the same samples displaced far from every training center.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstentionSeed {
    pub seed: u64,
    pub in_abstention: f64,
    pub ood_abstention: f64,
    /// Accuracy on assigned samples under the dynamic threshold.
    pub accuracy_dynamic: Option<f64>,
    /// Accuracy of the plurality label on every sample (threshold off).
    pub accuracy_off: f64,
    pub decisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstentionReport {
    pub seeds: Vec<AbstentionSeed>,
    pub mean_in_abstention: f64,
    pub mean_ood_abstention: f64,
}

/// Root-mean-square distance of samples from their dataset center.
fn spread(fed: &Federation, store: &FeatureStore) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for d in &fed.datasets {
        let xs: Vec<&FeatureVector> =
            d.samples.iter().map(|s| store.get(&d.dataset_id, &s.sample_id).map(ViewSet::original)).collect::<Result<_>>()?;
        let c = crate::features::dataset_center(&xs)?;
        for x in xs {
            total += x.l2_distance(&c).powi(2);
            n += 1;
        }
    }
    Ok((total / n as f64).sqrt())
}

/// Move every vector of `views` by the same random direction of length `distance`.
pub fn displace(views: &ViewSet, distance: f64, rng: &mut ChaCha8Rng) -> Result<ViewSet> {
    let dim = views.original().dim();
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let moved = views
        .views
        .iter()
        .map(|v| FeatureVector::new(v.as_slice().iter().zip(&dir).map(|(x, d)| x + distance * d / norm).collect()))
        .collect::<Result<_>>()?;
    Ok(ViewSet { views: moved, quality_factors: views.quality_factors.clone() })
}

/// Team on every source dataset, labeling the pooled test splits and an
/// out-of-distribution copy displaced by `ood_sigmas` data spreads.
pub fn abstention_run(spec: &SyntheticSpec, seeds: &[u64], cfg: &LabelingConfig, ood_sigmas: f64) -> Result<AbstentionReport> {
    let k = spec.annotation.name().to_string();
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let synth = generate_synthetic_federation(&SyntheticSpec { seed, ..spec.clone() })?;
            let fed = &synth.federation;
            let sources: Vec<&DatasetManifest> = fed.datasets.iter().collect();
            let mut team = build_team_on(&k, &sources, &synth.store, &TrainConfig { seed, ..cfg.train.clone() })?;
            cfg.apply(&mut team);
            team.threshold_mode = ThresholdMode::Dynamic;
            let sigma = spread(fed, &synth.store)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["ood"]));
            let (mut in_abstain, mut ood_abstain, mut n) = (0usize, 0usize, 0usize);
            let (mut assigned, mut correct_assigned, mut correct_off, mut total) = (0usize, 0usize, 0usize, 0usize);
            for d in &fed.datasets {
                for s in d.samples_in(Split::Test) {
                    let truth = s.label(&k).expect("synthetic samples are labeled");
                    let vs = synth.store.get(&d.dataset_id, &s.sample_id)?;
                    let far = displace(vs, ood_sigmas * sigma, &mut rng)?;
                    let a = label_sample(&team, &s.sample_id, vs.original(), &vs.views)?;
                    let b = label_sample(&team, &s.sample_id, far.original(), &far.views)?;
                    n += 1;
                    in_abstain += usize::from(a.label().is_none());
                    ood_abstain += usize::from(b.label().is_none());
                    for dec in [&a, &b] {
                        total += 1;
                        correct_off += usize::from(dec.top_label == truth);
                        if let Some(l) = dec.label() {
                            assigned += 1;
                            correct_assigned += usize::from(l == truth);
                        }
                    }
                }
            }
            Ok(AbstentionSeed {
                seed,
                in_abstention: in_abstain as f64 / n as f64,
                ood_abstention: ood_abstain as f64 / n as f64,
                accuracy_dynamic: (assigned > 0).then(|| correct_assigned as f64 / assigned as f64),
                accuracy_off: correct_off as f64 / total as f64,
                decisions: total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |f: fn(&AbstentionSeed) -> f64| per_seed.iter().map(f).sum::<f64>() / per_seed.len().max(1) as f64;
    Ok(AbstentionReport {
        mean_in_abstention: mean(|s| s.in_abstention),
        mean_ood_abstention: mean(|s| s.ood_abstention),
        seeds: per_seed,
    })
}
