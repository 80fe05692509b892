//! Team members: a bagging ensemble of linear softmax classifiers trained
//! on one home dataset, early-stopped on validation accuracy across every
//! dataset that carries the annotation, then fine-tuned on the peers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{dataset_center, FeatureStore, FeatureVector};
use crate::schema::{DatasetManifest, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub bag_count: usize,
    /// Draw bootstrap resamples; when off every classifier sees the home set as is.
    pub bootstrap: bool,
    /// Stop on stalled validation accuracy and restore the best epoch;
    /// when off every phase runs exactly `max_epochs`.
    pub early_stopping: bool,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub finetune_lr_factor: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bag_count: 5,
            bootstrap: true,
            early_stopping: true,
            max_epochs: 200,
            learning_rate: 0.1,
            finetune_lr_factor: 0.1,
            batch_size: 64,
            patience: 5,
            min_delta: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bag_count == 0 {
            return Err(Error::Config("bag_count must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.finetune_lr_factor > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("patience, batch_size and max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stable 64-bit seed derived from a base seed and string tags.
pub fn derive_seed(base: u64, tags: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for t in tags {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub x: &'a FeatureVector,
    pub y: &'a str,
}

/// One dataset's labeled train and validation samples for an annotation.
#[derive(Debug, Clone)]
pub struct DatasetSplits<'a> {
    pub dataset_id: String,
    pub train: Vec<Labeled<'a>>,
    pub val: Vec<Labeled<'a>>,
    pub test: Vec<Labeled<'a>>,
}

impl<'a> DatasetSplits<'a> {
    /// Labeled samples of `d` for `annotation`, sorted by sample id.
    pub fn from_manifest(d: &'a DatasetManifest, annotation: &str, store: &'a FeatureStore) -> Result<Self> {
        let mut rows: Vec<(&str, Split, Labeled<'a>)> = Vec::new();
        for s in &d.samples {
            let Some(y) = s.label(annotation) else { continue };
            let x = store.get(&d.dataset_id, &s.sample_id)?.original();
            rows.push((&s.sample_id, d.split_of(&s.sample_id), Labeled { x, y }));
        }
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = DatasetSplits { dataset_id: d.dataset_id.clone(), train: vec![], val: vec![], test: vec![] };
        for (_, split, l) in rows {
            match split {
                Split::Train => out.train.push(l),
                Split::Val => out.val.push(l),
                Split::Test => out.test.push(l),
            }
        }
        Ok(out)
    }
}

/// Linear softmax classifier over a fixed, sorted label list.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseClassifier {
    /// Row-major `[num_classes × dim]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub class_labels: Vec<String>,
    pub dim: usize,
}

impl BaseClassifier {
    pub fn zeros(class_labels: Vec<String>, dim: usize) -> Self {
        let c = class_labels.len();
        BaseClassifier { weights: vec![0.0; c * dim], biases: vec![0.0; c], class_labels, dim }
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| {
                let row = &self.weights[c * self.dim..(c + 1) * self.dim];
                self.biases[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    /// Argmax class index; ties go to the lowest index, i.e. the
    /// lexicographically smallest label.
    pub fn predict_index(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn predict(&self, x: &FeatureVector) -> &str {
        &self.class_labels[self.predict_index(x.as_slice())]
    }

    fn to_matrix_text(&self) -> String {
        let mut out = format!("{} {}\n", self.num_classes(), self.dim + 1);
        for c in 0..self.num_classes() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            let mut line = String::new();
            for w in row.iter().chain(std::iter::once(&self.biases[c])) {
                if !line.is_empty() {
                    line.push(' ');
                }
                let _ = write!(line, "{w}");
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    fn from_matrix_text(text: &str, class_labels: Vec<String>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty parameter file".into()))?;
        let dims: Vec<usize> = header.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        let [rows, cols] = dims[..] else {
            return Err(Error::Format(format!("bad matrix header `{header}`")));
        };
        if rows != class_labels.len() || cols < 1 {
            return Err(Error::Shape { expected: class_labels.len(), got: rows });
        }
        let dim = cols - 1;
        let mut weights = Vec::with_capacity(rows * dim);
        let mut biases = Vec::with_capacity(rows);
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing matrix row {r}")))?;
            let vals = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("matrix row {r}: {e}")))?;
            if vals.len() != cols {
                return Err(Error::Shape { expected: cols, got: vals.len() });
            }
            weights.extend_from_slice(&vals[..dim]);
            biases.push(vals[dim]);
        }
        Ok(BaseClassifier { weights, biases, class_labels, dim })
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

type Sparse = Vec<(u32, f64)>;

/// Per-feature standardization fitted on a member's training rows.
/// Constant features keep unit scale.
struct Scaler {
    inv_sd: Vec<f64>,
    /// Feature means already multiplied by `inv_sd`.
    scaled_mean: Vec<f64>,
}

impl Scaler {
    fn fit<'a>(rows: impl Iterator<Item = &'a FeatureVector> + Clone, dim: usize) -> Self {
        let n = rows.clone().count().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in rows.clone() {
            for (m, v) in mean.iter_mut().zip(x.as_slice()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in rows {
            for ((s, v), m) in var.iter_mut().zip(x.as_slice()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_sd: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).map(|sd| if sd > 1e-12 { 1.0 / sd } else { 1.0 }).collect();
        let scaled_mean = mean.iter().zip(&inv_sd).map(|(m, k)| m * k).collect();
        Scaler { inv_sd, scaled_mean }
    }

    /// Nonzero entries of `x`, scaled but not centered.
    fn encode(&self, x: &FeatureVector) -> Sparse {
        x.as_slice()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, v * self.inv_sd[i]))
            .collect()
    }
}

/// Softmax classifier over standardized features. Centering is carried by
/// `offset[c] = Σ_j w[c,j]·scaled_mean[j]` so inputs stay sparse.
#[derive(Clone)]
struct StdClassifier {
    weights: Vec<f64>,
    biases: Vec<f64>,
    offset: Vec<f64>,
    dim: usize,
}

impl StdClassifier {
    fn zeros(classes: usize, dim: usize) -> Self {
        StdClassifier { weights: vec![0.0; classes * dim], biases: vec![0.0; classes], offset: vec![0.0; classes], dim }
    }

    fn num_classes(&self) -> usize {
        self.biases.len()
    }

    fn logits(&self, x: &Sparse, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.biases[c] - self.offset[c] + x.iter().map(|&(i, v)| row[i as usize] * v).sum::<f64>();
        }
    }

    fn refresh_offset(&mut self, scaled_mean: &[f64]) {
        for c in 0..self.num_classes() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            self.offset[c] = row.iter().zip(scaled_mean).map(|(w, m)| w * m).sum();
        }
    }

    /// Equivalent classifier over raw features.
    fn to_raw(&self, scaler: &Scaler, class_labels: Vec<String>) -> BaseClassifier {
        let weights = self.weights.chunks(self.dim).flat_map(|row| row.iter().zip(&scaler.inv_sd).map(|(w, k)| w * k)).collect();
        let biases = self.biases.iter().zip(&self.offset).map(|(b, o)| b - o).collect();
        BaseClassifier { weights, biases, class_labels, dim: self.dim }
    }
}

struct Encoded {
    x: Vec<Sparse>,
    y: Vec<usize>,
}

impl Encoded {
    fn new(rows: &[Labeled<'_>], index: &BTreeMap<&str, usize>, scaler: &Scaler) -> Self {
        Encoded { x: rows.iter().map(|l| scaler.encode(l.x)).collect(), y: rows.iter().map(|l| index[l.y]).collect() }
    }

    fn accuracy(&self, clf: &StdClassifier, scratch: &mut [f64]) -> f64 {
        let correct = self
            .x
            .iter()
            .zip(&self.y)
            .filter(|(x, &y)| {
                clf.logits(x, scratch);
                argmax(scratch) == y
            })
            .count();
        correct as f64 / self.x.len() as f64
    }
}

/// Unweighted mean of per-dataset validation accuracies.
fn mean_val_accuracy(clf: &StdClassifier, vals: &[Encoded], scratch: &mut [f64]) -> Option<f64> {
    let accs: Vec<f64> = vals.iter().filter(|v| !v.x.is_empty()).map(|v| v.accuracy(clf, scratch)).collect();
    (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
}

/// One pass of mini-batch gradient descent on softmax cross-entropy over
/// `order`, updating parameters in place.
fn sgd_epoch(clf: &mut StdClassifier, scaled_mean: &[f64], x: &[&Sparse], y: &[usize], order: &[usize], lr: f64, batch: usize) {
    let c = clf.num_classes();
    let dim = clf.dim;
    let mut probs = vec![0.0; c];
    let mut grad_w = vec![0.0; c * dim];
    let mut grad_b = vec![0.0; c];
    let mut touched: Vec<u32> = Vec::new();
    let mut seen = vec![false; dim];
    for chunk in order.chunks(batch) {
        let scale = lr / chunk.len() as f64;
        for &i in chunk {
            clf.logits(x[i], &mut probs);
            softmax_in_place(&mut probs);
            probs[y[i]] -= 1.0;
            for (k, &p) in probs.iter().enumerate() {
                grad_b[k] += p;
                let row = &mut grad_w[k * dim..(k + 1) * dim];
                for &(j, v) in x[i] {
                    row[j as usize] += p * v;
                }
            }
            for &(j, _) in x[i] {
                if !seen[j as usize] {
                    seen[j as usize] = true;
                    touched.push(j);
                }
            }
        }
        for k in 0..c {
            // The centering term of the gradient is dense: -Σ_i p_ik · scaled_mean.
            let row = &mut clf.weights[k * dim..(k + 1) * dim];
            for (w, m) in row.iter_mut().zip(scaled_mean) {
                *w += scale * grad_b[k] * m;
            }
            for &j in &touched {
                let idx = k * dim + j as usize;
                clf.weights[idx] -= scale * grad_w[idx];
                grad_w[idx] = 0.0;
            }
            clf.biases[k] -= scale * grad_b[k];
            grad_b[k] = 0.0;
        }
        for &j in &touched {
            seen[j as usize] = false;
        }
        touched.clear();
        clf.refresh_offset(scaled_mean);
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Mean softmax cross-entropy of `clf` on the given rows.
pub fn cross_entropy(clf: &BaseClassifier, rows: &[Labeled<'_>]) -> f64 {
    let mut total = 0.0;
    for r in rows {
        let mut p = clf.logits(r.x.as_slice());
        softmax_in_place(&mut p);
        let idx = clf.class_labels.iter().position(|l| l == r.y).expect("label in class list");
        total -= p[idx].max(f64::MIN_POSITIVE).ln();
    }
    total / rows.len() as f64
}

struct Phase<'a> {
    x: Vec<&'a Sparse>,
    y: Vec<usize>,
    lr: f64,
}

/// Train in place; returns the number of epochs run.
fn run_phase(clf: &mut StdClassifier, scaler: &Scaler, phase: &Phase<'_>, vals: &[Encoded], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> usize {
    if phase.x.is_empty() {
        return 0;
    }
    let mut scratch = vec![0.0; clf.num_classes()];
    let mut order: Vec<usize> = (0..phase.x.len()).collect();
    let epoch = |clf: &mut StdClassifier, order: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        order.shuffle(rng);
        sgd_epoch(clf, &scaler.scaled_mean, &phase.x, &phase.y, order, phase.lr, cfg.batch_size);
    };
    let monitor = cfg.early_stopping.then(|| mean_val_accuracy(clf, vals, &mut scratch)).flatten();
    let Some(mut best_acc) = monitor else {
        for _ in 0..cfg.max_epochs {
            epoch(clf, &mut order, rng);
        }
        return cfg.max_epochs;
    };
    let mut best = clf.clone();
    let mut stale = 0;
    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epoch(clf, &mut order, rng);
        epochs += 1;
        let acc = mean_val_accuracy(clf, vals, &mut scratch).expect("validation rows present");
        if acc > best_acc + cfg.min_delta {
            best_acc = acc;
            best = clf.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    *clf = best;
    epochs
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    /// dataset_id of the home dataset.
    pub member_id: String,
    pub peer_ids: Vec<String>,
    pub ensemble: Vec<BaseClassifier>,
    pub center: FeatureVector,
    pub fscore: f64,
    pub home_epochs_run: usize,
    pub finetune_epochs_run: usize,
    pub config: TrainConfig,
}

impl Member {
    pub fn class_labels(&self) -> &[String] {
        &self.ensemble[0].class_labels
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }
}

/// Train the member homed on `home`, early-stopped on the validation splits
/// of `home` and `peers`, then fine-tuned on the peers' training splits.
pub fn train_member(home: &DatasetSplits<'_>, peers: &[DatasetSplits<'_>], cfg: &TrainConfig) -> Result<Member> {
    cfg.validate()?;
    if home.train.is_empty() {
        return Err(Error::EmptyInput(format!("dataset `{}` has no training samples", home.dataset_id)));
    }
    let dim = home.train[0].x.dim();
    let all = std::iter::once(home).chain(peers);
    for l in all.clone().flat_map(|d| d.train.iter().chain(&d.val).chain(&d.test)) {
        if l.x.dim() != dim {
            return Err(Error::Shape { expected: dim, got: l.x.dim() });
        }
    }
    let home_classes: BTreeSet<&str> = home.train.iter().map(|l| l.y).collect();
    let classes: BTreeSet<&str> = all.clone().flat_map(|d| d.train.iter().chain(&d.val)).map(|l| l.y).collect();
    if let Some(missing) = classes.difference(&home_classes).next() {
        return Err(Error::MissingClass(missing.to_string()));
    }
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let class_labels: Vec<String> = classes.iter().map(|c| c.to_string()).collect();

    // Optimisation runs on standardized features; the result is folded back
    // into raw-feature weights.
    let scaler = Scaler::fit(all.clone().flat_map(|d| d.train.iter().map(|l| l.x)), dim);
    let home_train = Encoded::new(&home.train, &index, &scaler);
    let peer_train: Vec<Encoded> = peers.iter().map(|p| Encoded::new(&p.train, &index, &scaler)).collect();
    let vals: Vec<Encoded> = all.clone().map(|d| Encoded::new(&d.val, &index, &scaler)).collect();

    let mut ensemble = Vec::with_capacity(cfg.bag_count);
    let mut home_epochs = 0;
    let mut finetune_epochs = 0;
    for bag in 0..cfg.bag_count {
        let bag_tag = bag.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &["member", &bag_tag]));
        let picks: Vec<usize> = if cfg.bootstrap {
            (0..home_train.x.len()).map(|_| rng.random_range(0..home_train.x.len())).collect()
        } else {
            (0..home_train.x.len()).collect()
        };
        let phase = Phase {
            x: picks.iter().map(|&i| &home_train.x[i]).collect(),
            y: picks.iter().map(|&i| home_train.y[i]).collect(),
            lr: cfg.learning_rate,
        };
        let mut clf = StdClassifier::zeros(class_labels.len(), dim);
        home_epochs = home_epochs.max(run_phase(&mut clf, &scaler, &phase, &vals, cfg, &mut rng));

        let finetune = Phase {
            x: peer_train.iter().flat_map(|p| p.x.iter()).collect(),
            y: peer_train.iter().flat_map(|p| p.y.iter().copied()).collect(),
            lr: cfg.learning_rate * cfg.finetune_lr_factor,
        };
        finetune_epochs = finetune_epochs.max(run_phase(&mut clf, &scaler, &finetune, &vals, cfg, &mut rng));
        ensemble.push(clf.to_raw(&scaler, class_labels.clone()));
    }

    let center = dataset_center(&home.train.iter().map(|l| l.x).collect::<Vec<_>>())?;
    let mut member = Member {
        member_id: home.dataset_id.clone(),
        peer_ids: peers.iter().map(|p| p.dataset_id.clone()).collect(),
        ensemble,
        center,
        fscore: 0.0,
        home_epochs_run: home_epochs,
        finetune_epochs_run: finetune_epochs,
        config: cfg.clone(),
    };
    let val_sets: Vec<&[Labeled<'_>]> = all.map(|d| d.val.as_slice()).collect();
    member.fscore = match cross_val_fscore(&member, &val_sets) {
        Ok(f) => f,
        // No validation rows anywhere (tiny datasets): fall back to the home training split.
        Err(Error::EmptyInput(_)) => cross_val_fscore(&member, &[home.train.as_slice()])?,
        Err(e) => return Err(e),
    };
    Ok(member)
}

/// Majority label with ties broken towards the lexicographically smallest.
fn majority<'a>(labels: impl IntoIterator<Item = &'a str>) -> (&'a str, usize) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (l, n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((l, n));
        }
    }
    best.expect("at least one vote")
}

/// Each classifier votes the majority of its per-view argmaxes; the member
/// label is the majority of those votes and support the winning share.
pub fn member_predict(m: &Member, views: &[FeatureVector]) -> Result<(String, f64)> {
    if views.is_empty() {
        return Err(Error::EmptyInput("member_predict needs at least one view".into()));
    }
    for v in views {
        if v.dim() != m.dim() {
            return Err(Error::Shape { expected: m.dim(), got: v.dim() });
        }
    }
    let votes: Vec<&str> = m
        .ensemble
        .iter()
        .map(|clf| majority(views.iter().map(|v| clf.predict(v))).0)
        .collect();
    let (label, n) = majority(votes.iter().copied());
    Ok((label.to_string(), n as f64 / m.ensemble.len() as f64))
}

/// Macro-averaged F1 over classes that occur as truth or prediction.
pub fn macro_f1<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Option<f64> {
    let mut stats: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    let mut any = false;
    for (truth, pred) in pairs {
        any = true;
        if truth == pred {
            stats.entry(truth).or_default()[0] += 1;
        } else {
            stats.entry(pred).or_default()[1] += 1;
            stats.entry(truth).or_default()[2] += 1;
        }
    }
    if !any {
        return None;
    }
    let f1: Vec<f64> = stats
        .values()
        .map(|&[tp, fp, fnn]| 2.0 * tp as f64 / (2 * tp + fp + fnn) as f64)
        .collect();
    Some(f1.iter().sum::<f64>() / f1.len() as f64)
}

pub fn cross_val_fscore(m: &Member, eval_sets: &[&[Labeled<'_>]]) -> Result<f64> {
    let preds: Vec<(String, &str)> = eval_sets
        .iter()
        .flat_map(|s| s.iter())
        .map(|l| member_predict(m, std::slice::from_ref(l.x)).map(|(p, _)| (p, l.y)))
        .collect::<Result<_>>()?;
    macro_f1(preds.iter().map(|(p, t)| (*t, p.as_str())))
        .ok_or_else(|| Error::EmptyInput("no validation samples for f-score".into()))
}

#[derive(Serialize, Deserialize)]
struct MemberMeta {
    member_id: String,
    peer_ids: Vec<String>,
    class_labels: Vec<String>,
    center: Vec<f64>,
    fscore: f64,
    home_epochs_run: usize,
    finetune_epochs_run: usize,
    classifiers: usize,
    config: TrainConfig,
    seed: u64,
}

impl Member {
    /// Relative file names and contents of the on-disk form: one
    /// `classifier-<i>.txt` matrix per classifier plus `member.json`.
    pub fn files(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .ensemble
            .iter()
            .enumerate()
            .map(|(i, clf)| (format!("classifier-{i}.txt"), clf.to_matrix_text()))
            .collect();
        let meta = MemberMeta {
            member_id: self.member_id.clone(),
            peer_ids: self.peer_ids.clone(),
            class_labels: self.class_labels().to_vec(),
            center: self.center.as_slice().to_vec(),
            fscore: self.fscore,
            home_epochs_run: self.home_epochs_run,
            finetune_epochs_run: self.finetune_epochs_run,
            classifiers: self.ensemble.len(),
            config: self.config.clone(),
            seed: self.config.seed,
        };
        out.push(("member.json".into(), serde_json::to_string_pretty(&meta).expect("member serializes") + "\n"));
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, contents) in self.files() {
            std::fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: MemberMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("member.json"))?)?;
        let ensemble = (0..meta.classifiers)
            .map(|i| {
                let text = std::fs::read_to_string(dir.join(format!("classifier-{i}.txt")))?;
                BaseClassifier::from_matrix_text(&text, meta.class_labels.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        if ensemble.is_empty() {
            return Err(Error::Format(format!("member `{}` has no classifiers", meta.member_id)));
        }
        Ok(Member {
            member_id: meta.member_id,
            peer_ids: meta.peer_ids,
            ensemble,
            center: FeatureVector::new(meta.center)?,
            fscore: meta.fscore,
            home_epochs_run: meta.home_epochs_run,
            finetune_epochs_run: meta.finetune_epochs_run,
            config: meta.config,
        })
    }
}
