//! Prima facie causality over cascades.
//!
//! A [`CausalModel`] is built once per [`CascadeSet`] and answers every
//! per-user query (key-user rates, prima facie sets, related users, pair
//! probabilities, and the four causality scores) from shared indexes.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::action_log::{ActionLog, CascadeParams, CascadeSet, MessageId, Timestamp, UserId};
use crate::error::{Error, Result};
use crate::par;

/// How the prior virality probability is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    /// `|viral| / |messages|` of the cascade set at hand.
    Computed,
    Fixed(f64),
}

impl Serialize for RhoMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RhoMode::Computed => s.serialize_str("computed"),
            RhoMode::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for RhoMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Value(f64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Value(v) => Ok(RhoMode::Fixed(v)),
            Raw::Name(n) if n == "computed" => Ok(RhoMode::Computed),
            Raw::Name(n) => n
                .parse::<f64>()
                .map(RhoMode::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("bad rho `{n}`"))),
        }
    }
}

impl std::str::FromStr for RhoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "computed" {
            return Ok(RhoMode::Computed);
        }
        s.parse::<f64>()
            .map(RhoMode::Fixed)
            .map_err(|_| Error::config(format!("rho must be `computed` or a number, got `{s}`")))
    }
}

/// Weights used by the weighted neighbourhood score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborWeights {
    /// `w_i = |R(i)|`.
    #[default]
    RelatedCount,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CausalConfig {
    pub rho: RhoMode,
    /// Smoothing term in the relative-likelihood score.
    pub alpha: f64,
    pub weights: NeighborWeights,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            rho: RhoMode::Fixed(0.1),
            alpha: 0.001,
            weights: NeighborWeights::RelatedCount,
        }
    }
}

impl CausalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let RhoMode::Fixed(r) = self.rho {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::config(format!("fixed rho must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// The four causality scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Km,
    Rel,
    Nb,
    Wnb,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Km, Metric::Rel, Metric::Nb, Metric::Wnb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Km => "km",
            Metric::Rel => "rel",
            Metric::Nb => "nb",
            Metric::Wnb => "wnb",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim_start_matches("xi_");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown metric `{s}`")))
    }
}

/// Counts behind `p_{i,j}` and `p_{not i,j}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PairStats {
    /// Messages where `i` posted strictly before `j`.
    pub support_ij: u32,
    pub viral_ij: u32,
    /// Messages `j` posted without `i` posting strictly earlier.
    pub support_neg: u32,
    pub viral_neg: u32,
}

impl PairStats {
    pub fn p_ij(&self) -> Option<f64> {
        ratio(self.viral_ij, self.support_ij)
    }

    pub fn p_neg_ij(&self) -> Option<f64> {
        ratio(self.viral_neg, self.support_neg)
    }
}

fn ratio(num: u32, den: u32) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One user's causality scores over an interval. `None` marks an undefined
/// component; imputation happens only when features are assembled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityVector {
    pub user: UserId,
    pub interval: Option<(Timestamp, Timestamp)>,
    pub values: [Option<f64>; 4],
    /// Per component: skipped terms (causal scores) or undefined windows
    /// (decay scores).
    pub skipped: [u32; 4],
}

impl CausalityVector {
    pub fn undefined(user: UserId, interval: Option<(Timestamp, Timestamp)>) -> Self {
        CausalityVector {
            user,
            interval,
            values: [None; 4],
            skipped: [0; 4],
        }
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values[metric.index()]
    }

    pub fn defined_mask(&self) -> [bool; 4] {
        self.values.map(|v| v.is_some())
    }

    pub fn is_fully_undefined(&self) -> bool {
        self.values.iter().all(Option::is_none)
    }

    /// Feature vector with undefined components set to 0.
    pub fn imputed(&self) -> [f64; 4] {
        self.values.map(|v| v.unwrap_or(0.0))
    }
}

/// Writes one row per vector: `user_id`, the four scores (empty when
/// undefined), then a `<metric>_defined` flag per score. Column names carry
/// `prefix`, e.g. `xi_` for decayed scores.
pub fn write_vectors_csv<W: std::io::Write>(
    vectors: &[CausalityVector],
    vocab: &crate::action_log::Vocabulary,
    prefix: &str,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id".to_string()];
    header.extend(Metric::ALL.iter().map(|m| format!("{prefix}{m}")));
    header.extend(Metric::ALL.iter().map(|m| format!("{prefix}{m}_defined")));
    w.write_record(&header)?;
    for v in vectors {
        let mut row = vec![vocab.user_name(v.user).to_string()];
        row.extend(v.values.iter().map(|x| x.map(|x| x.to_string()).unwrap_or_default()));
        row.extend(v.values.iter().map(|x| x.is_some().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_vectors_csv`], with any column prefix.
/// Returns one vector per user of `vocab`; users missing from the file are
/// fully undefined. Unknown users are rejected.
pub fn read_vectors_csv<R: std::io::Read>(
    vocab: &crate::action_log::Vocabulary,
    input: R,
) -> Result<Vec<CausalityVector>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let prefix = header
        .get(1)
        .and_then(|h| h.strip_suffix(Metric::Km.name()))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "expected a `km` column after `user_id`".into(),
        })?
        .to_string();
    let expected: Vec<String> = std::iter::once("user_id".to_string())
        .chain(Metric::ALL.iter().map(|m| format!("{prefix}{m}")))
        .chain(Metric::ALL.iter().map(|m| format!("{prefix}{m}_defined")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut out: Vec<CausalityVector> = (0..vocab.n_users() as UserId)
        .map(|u| CausalityVector::undefined(u, None))
        .collect();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |message: String| Error::Parse { line, message };
        let user = vocab
            .user_id(&row[0])
            .ok_or_else(|| bad(format!("unknown user `{}`", &row[0])))?;
        let v = &mut out[user as usize];
        for k in 0..4 {
            let cell = &row[1 + k];
            let defined: bool = row[5 + k]
                .parse()
                .map_err(|_| bad(format!("bad flag `{}`", &row[5 + k])))?;
            v.values[k] = match (defined, cell.is_empty()) {
                (false, true) => None,
                (true, false) => Some(cell.parse().map_err(|_| bad(format!("bad number `{cell}`")))?),
                _ => return Err(bad(format!("value `{cell}` disagrees with its defined flag"))),
            };
        }
    }
    Ok(out)
}

/// Relative-likelihood term. `None` when `p_ij = 0` in the second branch.
pub fn relative_term(p_ij: f64, p_neg: f64, alpha: f64) -> Option<f64> {
    if p_ij > p_neg {
        Some(p_ij / (p_neg + alpha) - 1.0)
    } else if p_ij == 0.0 {
        None
    } else {
        Some(1.0 - p_neg / p_ij)
    }
}

/// Per-user direct scores with their skipped-term counts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DirectScores {
    pub km: Option<f64>,
    pub rel: Option<f64>,
    pub km_skipped: u32,
    pub rel_skipped: u32,
}

#[derive(Debug, Clone, Copy)]
struct Posting {
    message: MessageId,
    time: Timestamp,
    viral: bool,
}

pub struct CausalModel<'a> {
    cascades: &'a CascadeSet,
    config: CausalConfig,
    prior: Option<f64>,
    key_total: Vec<u32>,
    key_viral: Vec<u32>,
    posted_viral: Vec<u32>,
    postings: Vec<Vec<Posting>>,
    prima_facie: Vec<Vec<UserId>>,
    related: Vec<Vec<UserId>>,
    predecessors: Vec<Vec<UserId>>,
}

impl<'a> CausalModel<'a> {
    pub fn new(cascades: &'a CascadeSet, config: CausalConfig) -> Result<Self> {
        config.validate()?;
        let n_users = cascades.n_users();
        let prior = match config.rho {
            RhoMode::Fixed(r) => Some(r),
            RhoMode::Computed if cascades.is_empty() => None,
            RhoMode::Computed => Some(cascades.viral().len() as f64 / cascades.len() as f64),
        };

        let mut key_total = vec![0u32; n_users];
        let mut key_viral = vec![0u32; n_users];
        let mut posted_viral = vec![0u32; n_users];
        let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); n_users];
        for c in cascades.cascades() {
            for &(u, time) in &c.participants {
                postings[u as usize].push(Posting {
                    message: c.message,
                    time,
                    viral: c.viral,
                });
                posted_viral[u as usize] += c.viral as u32;
            }
            for &(u, _) in c.key_users() {
                key_total[u as usize] += 1;
                key_viral[u as usize] += c.viral as u32;
            }
        }

        let user_rho = |u: UserId| ratio(key_viral[u as usize], key_total[u as usize]);
        let prima_facie: Vec<Vec<UserId>> = cascades
            .cascades()
            .iter()
            .map(|c| match prior {
                Some(rho) if c.viral => c
                    .key_users()
                    .iter()
                    .map(|&(u, _)| u)
                    .filter(|&u| user_rho(u).is_some_and(|r| r > rho))
                    .collect(),
                _ => Vec::new(),
            })
            .collect();

        let mut related: Vec<Vec<UserId>> = vec![Vec::new(); n_users];
        for (c, pf) in cascades.cascades().iter().zip(&prima_facie) {
            if pf.len() < 2 {
                continue;
            }
            let timed: Vec<(UserId, Timestamp)> =
                c.key_users().iter().copied().filter(|(u, _)| pf.contains(u)).collect();
            for (a, &(ua, ta)) in timed.iter().enumerate() {
                let first_later = a + timed[a..].partition_point(|&(_, t)| t <= ta);
                related[ua as usize].extend(timed[first_later..].iter().map(|&(u, _)| u));
            }
        }
        let mut predecessors: Vec<Vec<UserId>> = vec![Vec::new(); n_users];
        for (i, r) in related.iter_mut().enumerate() {
            r.sort_unstable();
            r.dedup();
            for &j in r.iter() {
                predecessors[j as usize].push(i as UserId);
            }
        }

        Ok(CausalModel {
            cascades,
            config,
            prior,
            key_total,
            key_viral,
            posted_viral,
            postings,
            prima_facie,
            related,
            predecessors,
        })
    }

    pub fn cascades(&self) -> &CascadeSet {
        self.cascades
    }

    pub fn config(&self) -> &CausalConfig {
        &self.config
    }

    /// The prior probability that a message goes viral.
    pub fn prior_rho(&self) -> Result<f64> {
        self.prior
            .ok_or_else(|| Error::undefined("prior rho of an empty message set"))
    }

    /// Fraction of the messages `user` is a key user of that went viral.
    pub fn user_rho(&self, user: UserId) -> Result<f64> {
        self.check_user(user)?;
        ratio(self.key_viral[user as usize], self.key_total[user as usize])
            .ok_or_else(|| Error::undefined(format!("user {user} is a key user of no message")))
    }

    pub fn key_message_count(&self, user: UserId) -> u32 {
        self.key_total[user as usize]
    }

    /// Prima facie causal users of `message`, in posting order.
    pub fn prima_facie_users(&self, message: MessageId) -> Result<&[UserId]> {
        let slot = self
            .cascades
            .slot_of(message)
            .ok_or_else(|| Error::domain(format!("unknown message {message}")))?;
        Ok(&self.prima_facie[slot])
    }

    /// Prima facie sets for every cascade, aligned with `cascades().cascades()`.
    pub fn all_prima_facie(&self) -> &[Vec<UserId>] {
        &self.prima_facie
    }

    /// `R(i)`: users that `i` precedes as a fellow prima facie user, ascending.
    pub fn related_users(&self, user: UserId) -> &[UserId] {
        &self.related[user as usize]
    }

    /// `Q(j) = { i : j in R(i) }`, ascending.
    pub fn predecessors(&self, user: UserId) -> &[UserId] {
        &self.predecessors[user as usize]
    }

    pub fn pair_stats(&self, i: UserId, j: UserId) -> Result<PairStats> {
        self.check_user(i)?;
        self.check_user(j)?;
        if i == j {
            return Err(Error::domain("pair statistics need two distinct users"));
        }
        Ok(self.pair_stats_unchecked(i, j))
    }

    fn pair_stats_unchecked(&self, i: UserId, j: UserId) -> PairStats {
        let a = &self.postings[i as usize];
        let b = &self.postings[j as usize];
        let (mut x, mut y) = (0, 0);
        let (mut support_ij, mut viral_ij) = (0u32, 0u32);
        while x < a.len() && y < b.len() {
            match a[x].message.cmp(&b[y].message) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    if a[x].time < b[y].time {
                        support_ij += 1;
                        viral_ij += b[y].viral as u32;
                    }
                    x += 1;
                    y += 1;
                }
            }
        }
        PairStats {
            support_ij,
            viral_ij,
            support_neg: b.len() as u32 - support_ij,
            viral_neg: self.posted_viral[j as usize] - viral_ij,
        }
    }

    /// Direct scores of `user` over `R(user)`. Terms with an undefined
    /// probability are skipped and counted.
    pub fn direct_scores(&self, user: UserId) -> DirectScores {
        let related = &self.related[user as usize];
        if related.is_empty() {
            return DirectScores::default();
        }
        let mut out = DirectScores::default();
        let (mut km_sum, mut km_n) = (0.0, 0u32);
        let (mut rel_sum, mut rel_n) = (0.0, 0u32);
        for &j in related {
            let stats = self.pair_stats_unchecked(user, j);
            match (stats.p_ij(), stats.p_neg_ij()) {
                (Some(p), Some(q)) => {
                    km_sum += p - q;
                    km_n += 1;
                    match relative_term(p, q, self.config.alpha) {
                        Some(s) => {
                            rel_sum += s;
                            rel_n += 1;
                        }
                        None => out.rel_skipped += 1,
                    }
                }
                _ => {
                    out.km_skipped += 1;
                    out.rel_skipped += 1;
                }
            }
        }
        out.km = (km_n > 0).then(|| km_sum / km_n as f64);
        out.rel = (rel_n > 0).then(|| rel_sum / rel_n as f64);
        out
    }

    pub fn epsilon_km(&self, user: UserId) -> Result<f64> {
        self.check_user(user)?;
        self.direct_scores(user)
            .km
            .ok_or_else(|| Error::undefined(format!("km score of user {user}")))
    }

    pub fn epsilon_rel(&self, user: UserId) -> Result<f64> {
        self.check_user(user)?;
        self.direct_scores(user)
            .rel
            .ok_or_else(|| Error::undefined(format!("rel score of user {user}")))
    }

    pub fn epsilon_nb(&self, user: UserId) -> Result<f64> {
        self.check_user(user)?;
        let km = |i: UserId| self.direct_scores(i).km;
        neighborhood_mean(&self.predecessors[user as usize], km)
            .ok_or_else(|| Error::undefined(format!("nb score of user {user}")))
    }

    pub fn epsilon_wnb(&self, user: UserId) -> Result<f64> {
        self.epsilon_wnb_with(user, |i| self.default_weight(i))
    }

    /// Weighted neighbourhood score with caller-supplied weights.
    pub fn epsilon_wnb_with(&self, user: UserId, weight: impl Fn(UserId) -> f64) -> Result<f64> {
        self.check_user(user)?;
        let km = |i: UserId| self.direct_scores(i).km;
        weighted_mean(&self.predecessors[user as usize], km, weight)
            .ok_or_else(|| Error::undefined(format!("wnb score of user {user}")))
    }

    fn default_weight(&self, user: UserId) -> f64 {
        match self.config.weights {
            NeighborWeights::RelatedCount => self.related[user as usize].len() as f64,
            NeighborWeights::Uniform => 1.0,
        }
    }

    /// All four scores for every user of the vocabulary, in user order.
    pub fn vectors(&self, interval: Option<(Timestamp, Timestamp)>) -> Vec<CausalityVector> {
        let n = self.cascades.n_users();
        let direct: Vec<DirectScores> = par::map_range(n, |u| self.direct_scores(u as UserId));
        let km = |i: UserId| direct[i as usize].km;
        par::map_range(n, |u| {
            let q = &self.predecessors[u];
            let d = direct[u];
            let nb = neighborhood_mean(q, km);
            let wnb = weighted_mean(q, km, |i| self.default_weight(i));
            let undefined_q = q.iter().filter(|&&i| km(i).is_none()).count() as u32;
            CausalityVector {
                user: u as UserId,
                interval,
                values: [d.km, d.rel, nb, wnb],
                skipped: [d.km_skipped, d.rel_skipped, undefined_q, undefined_q],
            }
        })
    }

    pub fn vector(&self, user: UserId, interval: Option<(Timestamp, Timestamp)>) -> Result<CausalityVector> {
        self.check_user(user)?;
        let d = self.direct_scores(user);
        let km = |i: UserId| self.direct_scores(i).km;
        let q = &self.predecessors[user as usize];
        let undefined_q = q.iter().filter(|&&i| km(i).is_none()).count() as u32;
        Ok(CausalityVector {
            user,
            interval,
            values: [
                d.km,
                d.rel,
                neighborhood_mean(q, km),
                weighted_mean(q, km, |i| self.default_weight(i)),
            ],
            skipped: [d.km_skipped, d.rel_skipped, undefined_q, undefined_q],
        })
    }

    fn check_user(&self, user: UserId) -> Result<()> {
        if (user as usize) < self.cascades.n_users() {
            Ok(())
        } else {
            Err(Error::domain(format!("unknown user {user}")))
        }
    }
}

fn neighborhood_mean(users: &[UserId], km: impl Fn(UserId) -> Option<f64>) -> Option<f64> {
    let (sum, n) = users
        .iter()
        .filter_map(|&i| km(i))
        .fold((0.0, 0u32), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn weighted_mean(users: &[UserId], km: impl Fn(UserId) -> Option<f64>, weight: impl Fn(UserId) -> f64) -> Option<f64> {
    let terms: Vec<(f64, f64)> = users.iter().filter_map(|&i| km(i).map(|v| (weight(i), v))).collect();
    let first = terms.first()?.0;
    if terms.iter().all(|&(w, _)| w == first) {
        // Equal weights cancel; use the plain mean so the two scores agree exactly.
        return if first > 0.0 {
            neighborhood_mean(users, km)
        } else {
            None
        };
    }
    let total: f64 = terms.iter().map(|&(w, _)| w).sum();
    if total == 0.0 {
        return None;
    }
    Some(terms.iter().map(|&(w, v)| w * v).sum::<f64>() / total)
}

/// Scores of every user over `[start, end]` of `log` (or the whole log).
pub fn causality_vectors(
    log: &ActionLog,
    interval: Option<(Timestamp, Timestamp)>,
    params: CascadeParams,
    config: CausalConfig,
) -> Result<Vec<CausalityVector>> {
    let restricted;
    let log = match interval {
        Some((a, b)) => {
            restricted = log.restrict(a, b)?;
            &restricted
        }
        None => log,
    };
    let cascades = CascadeSet::extract(log, params)?;
    let model = CausalModel::new(&cascades, config)?;
    Ok(model.vectors(interval))
}

/// Scores of a single user over `[start, end]`.
pub fn causality_vector(
    user: UserId,
    log: &ActionLog,
    interval: (Timestamp, Timestamp),
    params: CascadeParams,
    config: CausalConfig,
) -> Result<CausalityVector> {
    let restricted = log.restrict(interval.0, interval.1)?;
    let cascades = CascadeSet::extract(&restricted, params)?;
    CausalModel::new(&cascades, config)?.vector(user, Some(interval))
}
