//! Threshold, KNN, and community-restricted KNN classifiers over
//! causality vectors.

use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::action_log::{UserId, Vocabulary};
use crate::causal::{CausalityVector, Metric};
use crate::community::{louvain, CoPostGraph, CommunityPartition, LouvainOptions};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Psm,
    Normal,
}

impl Label {
    pub fn is_psm(self) -> bool {
        self == Label::Psm
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Psm => "psm",
            Label::Normal => "normal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psm" | "suspended" | "1" | "true" => Ok(Label::Psm),
            "normal" | "active" | "0" | "false" => Ok(Label::Normal),
            other => Err(Error::domain(format!("unknown label `{other}`"))),
        }
    }
}

/// Labels per user id; users without a label are `None`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    labels: Vec<Option<Label>>,
}

impl GroundTruth {
    pub fn new(n_users: usize) -> Self {
        GroundTruth {
            labels: vec![None; n_users],
        }
    }

    pub fn from_labels(labels: Vec<Option<Label>>) -> Self {
        GroundTruth { labels }
    }

    pub fn set(&mut self, user: UserId, label: Label) {
        self.labels[user as usize] = Some(label);
    }

    pub fn get(&self, user: UserId) -> Option<Label> {
        self.labels.get(user as usize).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == Some(label)).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, Label)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(u, l)| l.map(|l| (u as UserId, l)))
    }

    /// Reads `user_id,label` rows; users missing from `vocab` are ignored.
    pub fn read_csv<R: std::io::Read>(vocab: &Vocabulary, input: R) -> Result<Self> {
        let mut truth = GroundTruth::new(vocab.n_users());
        let mut reader = csv::Reader::from_reader(input);
        for (i, row) in reader.records().enumerate() {
            let row = row?;
            let line = i + 2;
            if row.len() < 2 {
                return Err(Error::Parse {
                    line,
                    message: "expected user_id,label".into(),
                });
            }
            let label: Label = row[1].parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad label `{}`", &row[1]),
            })?;
            if let Some(u) = vocab.user_id(&row[0]) {
                truth.set(u, label);
            }
        }
        Ok(truth)
    }

    pub fn write_csv<W: std::io::Write>(&self, vocab: &Vocabulary, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "label"])?;
        for (u, l) in self.iter() {
            w.write_record([vocab.user_name(u), l.name()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A feature vector with undefined components imputed as 0. The mask
/// records which components were defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureRow {
    pub user: UserId,
    pub values: [f64; 4],
    pub mask: [bool; 4],
}

impl From<&CausalityVector> for FeatureRow {
    fn from(v: &CausalityVector) -> Self {
        FeatureRow {
            user: v.user,
            values: v.imputed(),
            mask: v.defined_mask(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabeledUser {
    pub row: FeatureRow,
    pub label: Label,
}

impl LabeledUser {
    pub fn new(vector: &CausalityVector, label: Label) -> Self {
        LabeledUser {
            row: vector.into(),
            label,
        }
    }

    pub fn user(&self) -> UserId {
        self.row.user
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdRule {
    pub km: f64,
    pub rel: f64,
    pub nb: f64,
    pub wnb: f64,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            km: 0.7,
            rel: 7.0,
            nb: 0.7,
            wnb: 0.7,
        }
    }
}

impl ThresholdRule {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Km => self.km,
            Metric::Rel => self.rel,
            Metric::Nb => self.nb,
            Metric::Wnb => self.wnb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if Metric::ALL
            .iter()
            .all(|&m| self.get(m).is_finite() && self.get(m) > 0.0)
        {
            Ok(())
        } else {
            Err(Error::config("thresholds must be finite and positive"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Threshold {
        metric: Metric,
    },
    Knn,
    C2dc {
        community: u32,
    },
    /// The query's community held no labeled users; global KNN was used.
    C2dcFallback {
        community: u32,
    },
    Constant,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Threshold { metric } => write!(f, "threshold:{metric}"),
            Provenance::Knn => f.write_str("knn"),
            Provenance::C2dc { community } => write!(f, "c2dc:{community}"),
            Provenance::C2dcFallback { community } => write!(f, "c2dc_fallback:{community}"),
            Provenance::Constant => f.write_str("constant"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub user: UserId,
    pub predicted: Label,
    /// Ranking score in [0, 1]; higher means more PSM-like.
    pub score: f64,
    pub provenance: Provenance,
}

/// PSM iff the metric reaches its threshold; undefined values are normal.
pub fn threshold_predict(row: &FeatureRow, rule: &ThresholdRule, metric: Metric) -> Prediction {
    let k = metric.index();
    let threshold = rule.get(metric);
    let (predicted, score) = if row.mask[k] {
        let value = row.values[k];
        let label = if value >= threshold { Label::Psm } else { Label::Normal };
        (label, (value / threshold).clamp(0.0, 1.0))
    } else {
        (Label::Normal, 0.0)
    };
    Prediction {
        user: row.user,
        predicted,
        score,
        provenance: Provenance::Threshold { metric },
    }
}

pub fn threshold_classify(vectors: &[CausalityVector], rule: &ThresholdRule, metric: Metric) -> Vec<Prediction> {
    vectors
        .iter()
        .map(|v| threshold_predict(&FeatureRow::from(v), rule, metric))
        .collect()
}

/// Majority vote of the nearest labeled users.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnVote {
    pub label: Label,
    /// Fraction of PSM neighbours.
    pub score: f64,
    pub neighbors: Vec<UserId>,
}

fn squared_distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// KNN over `candidates`, with `k` clamped to the candidate count.
///
/// Distance ties are broken by ascending user id and label-count ties go to
/// PSM, so the result never depends on the order of `candidates`.
pub fn knn_vote<'a, I>(query: &[f64; 4], candidates: I, k: usize) -> Result<KnnVote>
where
    I: IntoIterator<Item = &'a LabeledUser>,
{
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    let mut scored: Vec<(f64, UserId, Label)> = candidates
        .into_iter()
        .map(|c| (squared_distance(query, &c.row.values), c.user(), c.label))
        .collect();
    if scored.is_empty() {
        return Err(Error::domain("KNN needs at least one labeled user"));
    }
    let cmp = |a: &(f64, UserId, Label), b: &(f64, UserId, Label)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    let psm = scored.iter().filter(|s| s.2.is_psm()).count();
    let label = if 2 * psm >= k { Label::Psm } else { Label::Normal };
    Ok(KnnVote {
        label,
        score: psm as f64 / k as f64,
        neighbors: scored.iter().map(|s| s.1).collect(),
    })
}

pub fn knn_classify(query: &FeatureRow, training: &[LabeledUser], k: usize) -> Result<Prediction> {
    let vote = knn_vote(&query.values, training, k)?;
    Ok(Prediction {
        user: query.user,
        predicted: vote.label,
        score: vote.score,
        provenance: Provenance::Knn,
    })
}

/// Community-restricted KNN: one Louvain pass, then every query votes only
/// among labeled users of its own community.
#[derive(Debug, Clone)]
pub struct C2dc {
    partition: CommunityPartition,
}

impl C2dc {
    pub fn new(graph: &CoPostGraph, opts: LouvainOptions) -> Self {
        C2dc {
            partition: louvain(graph, opts),
        }
    }

    pub fn from_partition(partition: CommunityPartition) -> Self {
        C2dc { partition }
    }

    pub fn partition(&self) -> &CommunityPartition {
        &self.partition
    }

    /// One entry per query; a query outside the graph yields an error entry
    /// and the batch continues.
    pub fn classify(&self, queries: &[FeatureRow], training: &[LabeledUser], k: usize) -> Vec<Result<Prediction>> {
        let mut by_community: Vec<Vec<&LabeledUser>> = vec![Vec::new(); self.partition.k];
        for t in training {
            if let Some(c) = self.partition.community_of_user(t.user()) {
                by_community[c as usize].push(t);
            }
        }
        par::map_slice(queries, |q| {
            let community = self
                .partition
                .community_of_user(q.user)
                .ok_or_else(|| Error::domain(format!("user {} is not a graph vertex", q.user)))?;
            let peers = &by_community[community as usize];
            if peers.is_empty() {
                let vote = knn_vote(&q.values, training, k)?;
                return Ok(Prediction {
                    user: q.user,
                    predicted: vote.label,
                    score: vote.score,
                    provenance: Provenance::C2dcFallback { community },
                });
            }
            let vote = knn_vote(&q.values, peers.iter().copied(), k)?;
            Ok(Prediction {
                user: q.user,
                predicted: vote.label,
                score: vote.score,
                provenance: Provenance::C2dc { community },
            })
        })
    }
}

pub const DEFAULT_K: usize = 10;

/// How feature components are scaled before distances are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScaling {
    /// Raw values.
    #[default]
    None,
    /// Z-scores using the mean and standard deviation of the training rows.
    Standard,
}

impl std::str::FromStr for FeatureScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FeatureScaling::None),
            "standard" => Ok(FeatureScaling::Standard),
            other => Err(Error::config(format!("unknown scaling `{other}`"))),
        }
    }
}

/// Per-component affine map fitted on training rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaler {
    pub mean: [f64; 4],
    pub scale: [f64; 4],
}

impl Scaler {
    /// Constant components get scale 1 so they map to 0.
    pub fn fit(training: &[LabeledUser]) -> Self {
        let n = training.len().max(1) as f64;
        let mut mean = [0.0; 4];
        for t in training {
            for (m, v) in mean.iter_mut().zip(&t.row.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut scale = [0.0; 4];
        for t in training {
            for k in 0..4 {
                scale[k] += (t.row.values[k] - mean[k]).powi(2);
            }
        }
        for s in &mut scale {
            let sd = (*s / n).sqrt();
            *s = if sd > 0.0 { sd } else { 1.0 };
        }
        Scaler { mean, scale }
    }

    pub fn apply(&self, row: &FeatureRow) -> FeatureRow {
        let mut out = *row;
        for k in 0..4 {
            out.values[k] = (row.values[k] - self.mean[k]) / self.scale[k];
        }
        out
    }
}

fn rescale<'a>(
    scaling: FeatureScaling,
    queries: &'a [FeatureRow],
    training: &'a [LabeledUser],
) -> (Cow<'a, [FeatureRow]>, Cow<'a, [LabeledUser]>) {
    match scaling {
        FeatureScaling::None => (Cow::Borrowed(queries), Cow::Borrowed(training)),
        FeatureScaling::Standard => {
            let scaler = Scaler::fit(training);
            let q = queries.iter().map(|r| scaler.apply(r)).collect();
            let t = training
                .iter()
                .map(|l| LabeledUser {
                    row: scaler.apply(&l.row),
                    label: l.label,
                })
                .collect();
            (Cow::Owned(q), Cow::Owned(t))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSpec {
    Threshold {
        metric: Metric,
        rule: ThresholdRule,
    },
    Knn {
        k: usize,
        #[serde(default)]
        scaling: FeatureScaling,
    },
    C2dc {
        k: usize,
        #[serde(default)]
        scaling: FeatureScaling,
        louvain: LouvainOptions,
    },
    Constant {
        label: Label,
    },
}

impl ClassifierSpec {
    pub fn name(&self) -> String {
        match self {
            ClassifierSpec::Threshold { metric, .. } => format!("threshold_{metric}"),
            ClassifierSpec::Knn { .. } => "knn".into(),
            ClassifierSpec::C2dc { .. } => "c2dc".into(),
            ClassifierSpec::Constant { label } => format!("always_{label}"),
        }
    }

    pub fn needs_graph(&self) -> bool {
        matches!(self, ClassifierSpec::C2dc { .. })
    }

    /// Instantiates the classifier; C2DC runs Louvain on `graph` here.
    pub fn build(&self, graph: Option<&CoPostGraph>) -> Result<Classifier> {
        Ok(match *self {
            ClassifierSpec::Threshold { metric, rule } => {
                rule.validate()?;
                Classifier::Threshold { metric, rule }
            }
            ClassifierSpec::Knn { k, scaling } => Classifier::Knn { k, scaling },
            ClassifierSpec::C2dc { k, scaling, louvain } => {
                let graph = graph.ok_or_else(|| Error::config("c2dc needs the co-posting graph"))?;
                Classifier::C2dc {
                    k,
                    scaling,
                    model: Box::new(C2dc::new(graph, louvain)),
                }
            }
            ClassifierSpec::Constant { label } => Classifier::Constant { label },
        })
    }
}

#[derive(Debug, Clone)]
pub enum Classifier {
    Threshold {
        metric: Metric,
        rule: ThresholdRule,
    },
    Knn {
        k: usize,
        scaling: FeatureScaling,
    },
    C2dc {
        k: usize,
        scaling: FeatureScaling,
        model: Box<C2dc>,
    },
    Constant {
        label: Label,
    },
}

impl Classifier {
    pub fn predict(&self, queries: &[FeatureRow], training: &[LabeledUser]) -> Vec<Result<Prediction>> {
        match self {
            Classifier::Threshold { metric, rule } => queries
                .iter()
                .map(|q| Ok(threshold_predict(q, rule, *metric)))
                .collect(),
            Classifier::Knn { k, scaling } => {
                let (queries, training) = rescale(*scaling, queries, training);
                par::map_slice(&queries, |q| knn_classify(q, &training, *k))
            }
            Classifier::C2dc { k, scaling, model } => {
                let (queries, training) = rescale(*scaling, queries, training);
                model.classify(&queries, &training, *k)
            }
            Classifier::Constant { label } => queries
                .iter()
                .map(|q| {
                    Ok(Prediction {
                        user: q.user,
                        predicted: *label,
                        score: if label.is_psm() { 1.0 } else { 0.0 },
                        provenance: Provenance::Constant,
                    })
                })
                .collect(),
        }
    }
}

/// `user_id,predicted,score,provenance` CSV.
pub fn write_predictions<W: std::io::Write>(vocab: &Vocabulary, predictions: &[Prediction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "predicted", "score", "provenance"])?;
    for p in predictions {
        w.write_record([
            vocab.user_name(p.user),
            p.predicted.name(),
            &p.score.to_string(),
            &p.provenance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a predictions CSV, including ones produced by external tools. The
/// `score` column is optional (defaults to 1 for PSM, 0 otherwise).
pub fn read_predictions<R: std::io::Read>(vocab: &Vocabulary, input: R) -> Result<Vec<Prediction>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (user_col, pred_col) = match (col("user_id"), col("predicted")) {
        (Some(u), Some(p)) => (u, p),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "predictions need `user_id` and `predicted` columns".into(),
            })
        }
    };
    let score_col = col("score");
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |what: &str| Error::Parse {
            line,
            message: what.to_string(),
        };
        let user = vocab
            .user_id(row.get(user_col).unwrap_or_default())
            .ok_or_else(|| bad("unknown user"))?;
        let predicted: Label = row
            .get(pred_col)
            .unwrap_or_default()
            .parse()
            .map_err(|_| bad("bad label"))?;
        let score = match score_col.and_then(|c| row.get(c)) {
            Some(s) if !s.is_empty() => s.parse::<f64>().map_err(|_| bad("bad score"))?,
            _ => predicted.is_psm() as u8 as f64,
        };
        out.push(Prediction {
            user,
            predicted,
            score,
            provenance: Provenance::Constant,
        });
    }
    Ok(out)
}
