//! Shared helpers for the integration tests: a seeded generator of small
//! random logs and a brute-force transcription of the causality definitions
//! that works directly on `(user, message, time)` tuples.

#![allow(dead_code)]

pub mod invariants;

use std::collections::{BTreeMap, BTreeSet};

use psmscan::action_log::{ActionLog, CascadeParams, CascadeSet, Timestamp};
use psmscan::causal::{CausalConfig, CausalModel, RhoMode};
use psmscan::decay::{decay_vectors, DecayConfig, Span, WindowGrid};
use psmscan::Metric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random small log as string records, plus the parameters to score it.
#[derive(Debug, Clone)]
pub struct SmallCase {
    pub records: Vec<(String, String, Timestamp)>,
    pub params: CascadeParams,
    pub rho: RhoMode,
    pub alpha: f64,
}

/// At most 8 users, 15 messages and 40 actions, on a short clock so that
/// ties are frequent. Duplicated `(user, message)` pairs are possible.
pub fn small_case(seed: u64) -> SmallCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = rng.random_range(2..=8);
    // Few messages per action make overlapping cascades, and so related
    // users, common.
    let max_messages = rng.random_range(1..=15);
    let n_messages = rng.random_range(1..=max_messages);
    let n_actions = rng.random_range(8..=40);
    let horizon = rng.random_range(3..=30);
    let records = (0..n_actions)
        .map(|_| {
            (
                format!("u{}", rng.random_range(0..n_users)),
                format!("m{:02}", rng.random_range(0..n_messages)),
                rng.random_range(0..=horizon) as Timestamp,
            )
        })
        .collect();
    let params = CascadeParams {
        theta: rng.random_range(1..=4),
        phi: [0.1, 0.2, 0.3, 0.5, 0.6][rng.random_range(0..5)],
    };
    let rho = if rng.random_bool(0.5) {
        RhoMode::Computed
    } else {
        RhoMode::Fixed([0.0, 0.1, 0.3][rng.random_range(0..3)])
    };
    SmallCase {
        records,
        params,
        rho,
        alpha: 0.001,
    }
}

impl SmallCase {
    pub fn log(&self) -> ActionLog {
        ActionLog::from_records(self.records.iter().cloned(), true).expect("valid records")
    }

    pub fn causal(&self) -> CausalConfig {
        CausalConfig {
            rho: self.rho,
            alpha: self.alpha,
            ..CausalConfig::default()
        }
    }

    /// The earliest time of every `(user, message)` pair.
    pub fn postings(&self) -> BTreeMap<(String, String), Timestamp> {
        let mut out = BTreeMap::new();
        for (u, m, t) in &self.records {
            out.entry((u.clone(), m.clone()))
                .and_modify(|old: &mut Timestamp| *old = (*old).min(*t))
                .or_insert(*t);
        }
        out
    }
}

/// Brute-force scorer over a set of postings. Every quantity is recomputed
/// from scratch by scanning all tuples.
pub struct Oracle {
    /// `(user, message, time)`, at most one per pair.
    pub tuples: Vec<(String, String, Timestamp)>,
    pub theta: u32,
    pub phi: f64,
    pub rho_mode: RhoMode,
    pub alpha: f64,
}

impl Oracle {
    pub fn new(case: &SmallCase) -> Self {
        Self::over(case, Timestamp::MIN, Timestamp::MAX)
    }

    /// Oracle over the postings with `start <= time <= end`.
    pub fn over(case: &SmallCase, start: Timestamp, end: Timestamp) -> Self {
        let tuples = case
            .postings()
            .into_iter()
            .filter(|&(_, t)| start <= t && t <= end)
            .map(|((u, m), t)| (u, m, t))
            .collect();
        Oracle {
            tuples,
            theta: case.params.theta,
            phi: case.params.phi,
            rho_mode: case.rho,
            alpha: case.alpha,
        }
    }

    pub fn messages(&self) -> BTreeSet<String> {
        self.tuples.iter().map(|t| t.1.clone()).collect()
    }

    pub fn users(&self) -> BTreeSet<String> {
        self.tuples.iter().map(|t| t.0.clone()).collect()
    }

    fn time(&self, u: &str, m: &str) -> Option<Timestamp> {
        self.tuples.iter().find(|t| t.0 == u && t.1 == m).map(|t| t.2)
    }

    fn size(&self, m: &str) -> usize {
        self.tuples.iter().filter(|t| t.1 == m).count()
    }

    pub fn viral(&self, m: &str) -> bool {
        self.size(m) >= self.theta as usize
    }

    /// `|A_m| * phi <= |{ j : j posted m strictly after u }|`.
    pub fn is_key(&self, u: &str, m: &str) -> bool {
        let Some(t) = self.time(u, m) else {
            return false;
        };
        let later = self.tuples.iter().filter(|x| x.1 == m && x.2 > t).count();
        self.size(m) as f64 * self.phi <= later as f64
    }

    pub fn rho(&self) -> Option<f64> {
        match self.rho_mode {
            RhoMode::Fixed(r) => Some(r),
            RhoMode::Computed => {
                let ms = self.messages();
                if ms.is_empty() {
                    return None;
                }
                let viral = ms.iter().filter(|m| self.viral(m)).count();
                Some(viral as f64 / ms.len() as f64)
            }
        }
    }

    pub fn rho_u(&self, u: &str) -> Option<f64> {
        let ms = self.messages();
        let key: Vec<&String> = ms.iter().filter(|m| self.is_key(u, m)).collect();
        if key.is_empty() {
            return None;
        }
        let viral = key.iter().filter(|m| self.viral(m)).count();
        Some(viral as f64 / key.len() as f64)
    }

    pub fn prima_facie(&self, m: &str) -> BTreeSet<String> {
        let Some(rho) = self.rho() else {
            return BTreeSet::new();
        };
        if !self.viral(m) {
            return BTreeSet::new();
        }
        self.users()
            .into_iter()
            .filter(|u| self.is_key(u, m) && self.rho_u(u).is_some_and(|r| r > rho))
            .collect()
    }

    /// `R(i)`: `j != i` such that both are prima facie for some `m` and `i`
    /// posted `m` strictly before `j`.
    pub fn related(&self, i: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for m in self.messages() {
            let pf = self.prima_facie(&m);
            if !pf.contains(i) {
                continue;
            }
            let ti = self.time(i, &m).unwrap();
            for j in &pf {
                if j != i && self.time(j, &m).unwrap() > ti {
                    out.insert(j.clone());
                }
            }
        }
        out
    }

    /// `Q(j) = { i : j in R(i) }`.
    pub fn predecessors(&self, j: &str) -> BTreeSet<String> {
        self.users()
            .into_iter()
            .filter(|i| self.related(i).contains(j))
            .collect()
    }

    fn precedes(&self, i: &str, j: &str, m: &str) -> bool {
        match (self.time(i, m), self.time(j, m)) {
            (Some(a), Some(b)) => a < b,
            _ => false,
        }
    }

    pub fn p_ij(&self, i: &str, j: &str) -> Option<f64> {
        let support: Vec<String> = self.messages().into_iter().filter(|m| self.precedes(i, j, m)).collect();
        if support.is_empty() {
            return None;
        }
        let viral = support.iter().filter(|m| self.viral(m)).count();
        Some(viral as f64 / support.len() as f64)
    }

    pub fn p_neg(&self, i: &str, j: &str) -> Option<f64> {
        let support: Vec<String> = self
            .messages()
            .into_iter()
            .filter(|m| self.time(j, m).is_some() && !self.precedes(i, j, m))
            .collect();
        if support.is_empty() {
            return None;
        }
        let viral = support.iter().filter(|m| self.viral(m)).count();
        Some(viral as f64 / support.len() as f64)
    }

    fn s_term(&self, p: f64, q: f64) -> Option<f64> {
        if p > q {
            Some(p / (q + self.alpha) - 1.0)
        } else if p == 0.0 {
            None
        } else {
            Some(1.0 - q / p)
        }
    }

    /// Mean over `R(i)` of the terms whose probabilities are defined.
    fn direct(&self, i: &str, rel: bool) -> Option<f64> {
        let mut terms = Vec::new();
        for j in self.related(i) {
            let (Some(p), Some(q)) = (self.p_ij(i, &j), self.p_neg(i, &j)) else {
                continue;
            };
            let term = if rel { self.s_term(p, q) } else { Some(p - q) };
            terms.extend(term);
        }
        (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
    }

    pub fn eps_km(&self, i: &str) -> Option<f64> {
        self.direct(i, false)
    }

    pub fn eps_rel(&self, i: &str) -> Option<f64> {
        self.direct(i, true)
    }

    pub fn eps_nb(&self, j: &str) -> Option<f64> {
        let vals: Vec<f64> = self.predecessors(j).iter().filter_map(|i| self.eps_km(i)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Weighted by `w_i = |R(i)|`.
    pub fn eps_wnb(&self, j: &str) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in self.predecessors(j) {
            if let Some(v) = self.eps_km(&i) {
                let w = self.related(&i).len() as f64;
                num += w * v;
                den += w;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    pub fn eps(&self, metric: Metric, u: &str) -> Option<f64> {
        match metric {
            Metric::Km => self.eps_km(u),
            Metric::Rel => self.eps_rel(u),
            Metric::Nb => self.eps_nb(u),
            Metric::Wnb => self.eps_wnb(u),
        }
    }
}

/// Decay score by direct transcription: windows `[t' - delta, t']` for
/// `t' = t0 + j*delta <= t - delta`, weight `exp(-sigma * (t - t'))` with the
/// age in days, averaged over the windows where the score exists.
pub fn oracle_xi(
    case: &SmallCase,
    user: &str,
    metric: Metric,
    interval: (Timestamp, Timestamp),
    delta: i64,
    sigma: f64,
) -> Option<f64> {
    let (t0, t) = interval;
    let mut terms = Vec::new();
    let mut j = 1;
    while t0 + j * delta <= t - delta {
        let end = t0 + j * delta;
        let oracle = Oracle::over(case, end - delta, end);
        if let Some(v) = oracle.eps(metric, user) {
            let age = (t - end) as f64 / 86_400.0;
            terms.push((-sigma * age).exp() * v);
        }
        j += 1;
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Window length for the decay checks: one to three windows over the span.
pub fn decay_delta(seed: u64, span: Timestamp) -> i64 {
    (span / (2 + (seed % 3) as i64)).max(1)
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

/// Compares every engine quantity on `small_case(seed)` with the oracle and
/// returns a description of each disagreement.
pub fn oracle_mismatches(seed: u64, tol: f64) -> Vec<String> {
    let case = small_case(seed);
    let log = case.log();
    let vocab = log.vocab().clone();
    let cascades = CascadeSet::extract(&log, case.params).unwrap();
    let model = CausalModel::new(&cascades, case.causal()).unwrap();
    let oracle = Oracle::new(&case);
    let mut bad = Vec::new();
    let check = |what: String, engine: Option<f64>, truth: Option<f64>| {
        (!close(engine, truth, tol)).then(|| format!("seed {seed}: {what}: engine {engine:?} oracle {truth:?}"))
    };

    bad.extend(check("rho".into(), model.prior_rho().ok(), oracle.rho()));
    let users: Vec<String> = oracle.users().into_iter().collect();
    let name = |u: u32| vocab.user_name(u).to_string();
    for u in &users {
        let id = vocab.user_id(u).unwrap();
        bad.extend(check(format!("rho_u({u})"), model.user_rho(id).ok(), oracle.rho_u(u)));
        let related: BTreeSet<String> = model.related_users(id).iter().map(|&j| name(j)).collect();
        if related != oracle.related(u) {
            bad.push(format!(
                "seed {seed}: R({u}) engine {related:?} oracle {:?}",
                oracle.related(u)
            ));
        }
        for metric in Metric::ALL {
            let engine = model.vector(id, None).unwrap().get(metric);
            bad.extend(check(format!("eps_{metric}({u})"), engine, oracle.eps(metric, u)));
        }
        for v in &users {
            if u == v {
                continue;
            }
            let stats = model.pair_stats(id, vocab.user_id(v).unwrap()).unwrap();
            bad.extend(check(format!("p({u},{v})"), stats.p_ij(), oracle.p_ij(u, v)));
            bad.extend(check(format!("p_neg({u},{v})"), stats.p_neg_ij(), oracle.p_neg(u, v)));
        }
    }
    for m in oracle.messages() {
        let id = vocab.message_id(&m).unwrap();
        let pf: BTreeSet<String> = model.prima_facie_users(id).unwrap().iter().map(|&u| name(u)).collect();
        if pf != oracle.prima_facie(&m) {
            bad.push(format!(
                "seed {seed}: prima facie of {m}: engine {pf:?} oracle {:?}",
                oracle.prima_facie(&m)
            ));
        }
    }

    // Decay scores over the whole span with a short window.
    let (t0, t) = log.time_span().unwrap();
    let delta = decay_delta(seed, t - t0);
    let sigma = 2_000.0;
    if t - t0 >= 2 * delta {
        let config = DecayConfig {
            delta: Span(delta),
            sigma,
            grid: WindowGrid::FullWindows,
            metrics: Metric::ALL.to_vec(),
        };
        let vectors = decay_vectors(&log, (t0, t), case.params, case.causal(), &config).unwrap();
        for u in &users {
            let id = vocab.user_id(u).unwrap() as usize;
            for metric in Metric::ALL {
                let truth = oracle_xi(&case, u, metric, (t0, t), delta, sigma);
                bad.extend(check(format!("xi_{metric}({u})"), vectors[id].get(metric), truth));
            }
        }
    }
    bad
}
