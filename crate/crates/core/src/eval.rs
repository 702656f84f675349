//! Scoring, time-prefix subsets, stratified cross-validation, and the
//! timeliness protocol.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action_log::{ActionLog, Timestamp, UserId};
use crate::classify::{Classifier, ClassifierSpec, FeatureRow, GroundTruth, Label, LabeledUser, Prediction};
use crate::community::CoPostGraph;
use crate::decay::Span;
use crate::error::{Error, Result};
use crate::features::{labeled_users, FeatureSpec};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Psm, Label::Psm) => self.tp += 1,
            (Label::Psm, Label::Normal) => self.fp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Normal, Label::Psm) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub n: u64,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when one class is absent.
    pub auc: Option<f64>,
    pub positive_class: Label,
}

impl EvaluationReport {
    fn from_parts(confusion: Confusion, auc: Option<f64>) -> Self {
        EvaluationReport {
            n: confusion.total(),
            confusion,
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            auc,
            positive_class: Label::Psm,
        }
    }
}

/// Mann–Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half.
pub fn rank_auc(scored: &[(f64, Label)]) -> Option<f64> {
    let n_pos = scored.iter().filter(|s| s.1.is_psm()).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| scored[k].1.is_psm()).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn score(predictions: &[Prediction], truth: &GroundTruth) -> Result<EvaluationReport> {
    if predictions.is_empty() {
        return Err(Error::domain("no predictions to score"));
    }
    let mut confusion = Confusion::default();
    let mut scored = Vec::with_capacity(predictions.len());
    for p in predictions {
        let actual = truth
            .get(p.user)
            .ok_or_else(|| Error::domain(format!("user {} has no truth label", p.user)))?;
        confusion.add(p.predicted, actual);
        scored.push((p.score, actual));
    }
    Ok(EvaluationReport::from_parts(confusion, rank_auc(&scored)))
}

#[derive(Debug, Clone)]
pub struct PrefixSubset {
    pub fraction: f64,
    pub end: Timestamp,
    pub log: ActionLog,
}

/// Cut points `t_min + floor(x% * (t_max - t_min))`, taking the bounds from
/// `timeline` or, if absent, from the log itself.
pub fn prefix_subsets(
    log: &ActionLog,
    timeline: Option<(Timestamp, Timestamp)>,
    fractions: &[f64],
) -> Result<Vec<PrefixSubset>> {
    let (t_min, t_max) = match timeline {
        Some(t) => t,
        None => log.time_span().ok_or(Error::EmptyLog)?,
    };
    fractions
        .iter()
        .map(|&x| {
            if !(x > 0.0 && x <= 100.0) {
                return Err(Error::domain(format!("prefix fraction {x} outside (0, 100]")));
            }
            let end = t_min + ((t_max - t_min) as f64 * x / 100.0).floor() as Timestamp;
            Ok(PrefixSubset {
                fraction: x,
                end,
                log: log.restrict(t_min, end)?,
            })
        })
        .collect()
}

fn stratified_shuffle(users: &[(usize, Label)], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psm: Vec<usize> = users.iter().filter(|u| u.1.is_psm()).map(|u| u.0).collect();
    let mut normal: Vec<usize> = users.iter().filter(|u| !u.1.is_psm()).map(|u| u.0).collect();
    psm.shuffle(&mut rng);
    normal.shuffle(&mut rng);
    (psm, normal)
}

/// Assigns each sample a fold so that both classes are spread evenly.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let indexed: Vec<(usize, Label)> = labels.iter().copied().enumerate().collect();
    let (psm, normal) = stratified_shuffle(&indexed, seed);
    let mut fold_of = vec![0; labels.len()];
    for (pos, &i) in psm.iter().chain(&normal).enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_test: usize,
    pub confusion: Confusion,
    pub f1: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRatio {
    pub psm: usize,
    pub normal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValidationReport {
    pub classifier: String,
    pub report: EvaluationReport,
    pub folds: Vec<FoldSummary>,
    pub f1_mean: f64,
    pub f1_variance: f64,
    pub class_ratio: ClassRatio,
    pub warnings: Vec<String>,
    /// Out-of-fold predictions in user order.
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

/// Stratified k-fold cross-validation; confusion counts are pooled over
/// folds before computing the headline metrics.
pub fn cross_validate(
    samples: &[LabeledUser],
    classifier: &Classifier,
    name: &str,
    folds: usize,
    seed: u64,
) -> Result<CrossValidationReport> {
    if folds < 2 {
        return Err(Error::config("need at least 2 folds"));
    }
    if samples.len() < folds {
        return Err(Error::domain(format!(
            "{} labeled users cannot fill {folds} folds",
            samples.len()
        )));
    }
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    let fold_of = stratified_folds(&labels, folds, seed);

    let per_fold = par::map_range(folds, |f| -> Result<(FoldSummary, Vec<Prediction>)> {
        let test: Vec<&LabeledUser> = samples
            .iter()
            .zip(&fold_of)
            .filter(|(_, &k)| k == f)
            .map(|(s, _)| s)
            .collect();
        let train: Vec<LabeledUser> = samples
            .iter()
            .zip(&fold_of)
            .filter(|(_, &k)| k != f)
            .map(|(s, _)| *s)
            .collect();
        let queries: Vec<FeatureRow> = test.iter().map(|s| s.row).collect();
        let mut warnings = Vec::new();
        for label in [Label::Psm, Label::Normal] {
            if !train.iter().any(|s| s.label == label) {
                warnings.push(format!("fold {f}: no {label} users in training"));
            }
        }
        let predictions: Vec<Prediction> = classifier
            .predict(&queries, &train)
            .into_iter()
            .collect::<Result<_>>()?;
        let mut confusion = Confusion::default();
        for (p, s) in predictions.iter().zip(&test) {
            confusion.add(p.predicted, s.label);
        }
        let summary = FoldSummary {
            fold: f,
            n_test: test.len(),
            confusion,
            f1: confusion.f1(),
            warnings,
        };
        Ok((summary, predictions))
    });

    let mut pooled = Confusion::default();
    let mut scored = Vec::with_capacity(samples.len());
    let mut summaries = Vec::with_capacity(folds);
    let mut predictions_all = Vec::with_capacity(samples.len());
    let truth_of: std::collections::HashMap<UserId, Label> = samples.iter().map(|s| (s.user(), s.label)).collect();
    for fold in per_fold {
        let (summary, predictions) = fold?;
        pooled.merge(&summary.confusion);
        scored.extend(predictions.iter().map(|p| (p.score, truth_of[&p.user])));
        predictions_all.extend(predictions);
        summaries.push(summary);
    }
    let f1s: Vec<f64> = summaries.iter().map(|s| s.f1).collect();
    let f1_mean = f1s.iter().sum::<f64>() / folds as f64;
    let f1_variance = f1s.iter().map(|f| (f - f1_mean).powi(2)).sum::<f64>() / folds as f64;
    let warnings = summaries.iter().flat_map(|s| s.warnings.iter().cloned()).collect();
    let psm = labels.iter().filter(|l| l.is_psm()).count();
    Ok(CrossValidationReport {
        classifier: name.to_string(),
        report: EvaluationReport::from_parts(pooled, rank_auc(&scored)),
        folds: summaries,
        f1_mean,
        f1_variance,
        class_ratio: ClassRatio {
            psm,
            normal: labels.len() - psm,
        },
        warnings,
        predictions: {
            predictions_all.sort_by_key(|p| p.user);
            predictions_all
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimelinessConfig {
    pub period: Span,
    /// Share of first-period users used for training.
    pub train_fraction: f64,
    /// Share of the timeline covered by the periods.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for TimelinessConfig {
    fn default() -> Self {
        TimelinessConfig {
            period: Span::days(10),
            train_fraction: 0.5,
            horizon: 0.5,
            seed: 42,
        }
    }
}

impl TimelinessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period.seconds() <= 0 {
            return Err(Error::config("period must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction must lie in (0, 1)"));
        }
        if !(self.horizon > 0.0 && self.horizon <= 1.0) {
            return Err(Error::config("horizon must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodRow {
    /// Half-open `[start, end)`.
    pub start: Timestamp,
    pub end: Timestamp,
    pub tp: u64,
    pub fp: u64,
    pub training_size: usize,
    /// Cohort users still unflagged when the period was scored.
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelinessReport {
    pub classifier: String,
    pub periods: Vec<PeriodRow>,
    pub cohort_psm: usize,
    pub cohort_normal: usize,
    /// Cohort PSMs never flagged.
    pub remaining: u64,
    pub missed: Vec<UserId>,
}

impl TimelinessReport {
    /// `period_start,period_end,tp,fp` rows plus a `remaining` footer.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "period_start,period_end,tp,fp")?;
        for p in &self.periods {
            writeln!(out, "{},{},{},{}", p.start, p.end, p.tp, p.fp)?;
        }
        writeln!(out, "remaining,{}", self.remaining)?;
        Ok(())
    }
}

/// Rolling re-evaluation of first-period users.
///
/// Users active in the first period are split (stratified, seeded) into a
/// training half and a held-out cohort. At the end of every period, features
/// are recomputed on the log prefix seen so far, the training set grows by
/// the labeled users who first appeared in that period, and every cohort user
/// not yet flagged is re-scored. A user is counted once, in the period that
/// first flags them.
pub fn timeliness(
    log: &ActionLog,
    timeline: Option<(Timestamp, Timestamp)>,
    truth: &GroundTruth,
    features: &FeatureSpec,
    spec: &ClassifierSpec,
    config: &TimelinessConfig,
) -> Result<TimelinessReport> {
    config.validate()?;
    let (t_min, t_max) = match timeline {
        Some(t) => t,
        None => log.time_span().ok_or(Error::EmptyLog)?,
    };
    let len = config.period.seconds();
    let span = t_max - t_min;
    if span < 2 * len {
        return Err(Error::domain(format!(
            "timeline of {span}s spans fewer than two {len}s periods"
        )));
    }
    let n_periods = (((span as f64 * config.horizon) / len as f64).ceil() as usize).max(1);

    // First period of activity for every labeled user.
    let mut first_period: Vec<Option<usize>> = vec![None; log.n_users()];
    for a in log.actions() {
        let slot = &mut first_period[a.user as usize];
        if slot.is_none() && a.time >= t_min {
            *slot = Some(((a.time - t_min) / len) as usize);
        }
    }
    let starters: Vec<(usize, Label)> = truth
        .iter()
        .filter(|&(u, _)| first_period[u as usize] == Some(0))
        .map(|(u, l)| (u as usize, l))
        .collect();
    let (psm, normal) = stratified_shuffle(&starters, config.seed);
    let cut = |v: &[usize]| (v.len() as f64 * config.train_fraction).round() as usize;
    let (cut_psm, cut_normal) = (cut(&psm), cut(&normal));
    let base_train: BTreeSet<UserId> = psm[..cut_psm]
        .iter()
        .chain(&normal[..cut_normal])
        .map(|&u| u as UserId)
        .collect();
    let cohort: Vec<UserId> = {
        let mut c: Vec<UserId> = psm[cut_psm..]
            .iter()
            .chain(&normal[cut_normal..])
            .map(|&u| u as UserId)
            .collect();
        c.sort_unstable();
        c
    };

    let per_period = par::map_range(n_periods, |p| -> Result<(Vec<Option<Label>>, usize)> {
        let end = t_min + (p as Timestamp + 1) * len;
        let prefix = log.restrict(t_min, end - 1)?;
        let vectors = features.compute(&prefix, (t_min, end))?;
        let training: Vec<LabeledUser> = labeled_users(&prefix, &vectors, truth)
            .into_iter()
            .filter(|s| {
                let u = s.user();
                base_train.contains(&u) || matches!(first_period[u as usize], Some(q) if q >= 1 && q <= p)
            })
            .collect();
        let graph = spec.needs_graph().then(|| CoPostGraph::build(&prefix));
        let classifier = spec.build(graph.as_ref())?;
        let queries: Vec<FeatureRow> = cohort.iter().map(|&u| FeatureRow::from(&vectors[u as usize])).collect();
        let flags = classifier
            .predict(&queries, &training)
            .into_iter()
            .map(|r| r.ok().map(|p| p.predicted))
            .collect();
        Ok((flags, training.len()))
    });

    let mut flagged = vec![false; cohort.len()];
    let mut periods = Vec::with_capacity(n_periods);
    for (p, result) in per_period.into_iter().enumerate() {
        let (flags, training_size) = result?;
        let start = t_min + p as Timestamp * len;
        let mut row = PeriodRow {
            start,
            end: start + len,
            tp: 0,
            fp: 0,
            training_size,
            pending: flagged.iter().filter(|f| !**f).count(),
        };
        for (i, &u) in cohort.iter().enumerate() {
            if flagged[i] || flags[i] != Some(Label::Psm) {
                continue;
            }
            flagged[i] = true;
            match truth.get(u) {
                Some(Label::Psm) => row.tp += 1,
                _ => row.fp += 1,
            }
        }
        periods.push(row);
    }
    let cohort_psm = psm.len() - cut_psm;
    let caught: u64 = periods.iter().map(|r| r.tp).sum();
    let missed: Vec<UserId> = cohort
        .iter()
        .zip(&flagged)
        .filter(|&(&u, &f)| !f && truth.get(u) == Some(Label::Psm))
        .map(|(&u, _)| u)
        .collect();
    Ok(TimelinessReport {
        classifier: spec.name(),
        periods,
        cohort_psm,
        cohort_normal: normal.len() - cut_normal,
        remaining: cohort_psm as u64 - caught,
        missed,
    })
}
