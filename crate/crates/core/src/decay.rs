//! Time-decay causality: scores computed on consecutive windows of length
//! `delta`, down-weighted by `exp(-sigma * age)` and averaged.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::action_log::{ActionLog, CascadeParams, CascadeSet, Timestamp, UserId, SECONDS_PER_DAY};
use crate::causal::{CausalConfig, CausalModel, CausalityVector, Metric};
use crate::error::{Error, Result};
use crate::par;

/// A span of seconds. Written as `"5d"`, `"12h"`, `"30m"`, `"45s"`, or a
/// bare number of seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span(pub i64);

impl Span {
    pub fn days(d: i64) -> Self {
        Span(d * SECONDS_PER_DAY)
    }

    pub fn seconds(self) -> i64 {
        self.0
    }
}

impl std::str::FromStr for Span {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (num, unit) = match s.char_indices().last() {
            Some((i, c)) if c.is_ascii_alphabetic() => (&s[..i], c),
            _ => (s, 's'),
        };
        let mult = match unit {
            'd' => SECONDS_PER_DAY as f64,
            'h' => 3600.0,
            'm' => 60.0,
            's' => 1.0,
            _ => return Err(Error::config(format!("unknown time unit in `{s}`"))),
        };
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad duration `{s}`")))?;
        Ok(Span((value * mult).round() as i64))
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 % SECONDS_PER_DAY == 0 {
            s.serialize_str(&format!("{}d", self.0 / SECONDS_PER_DAY))
        } else {
            s.serialize_str(&format!("{}s", self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Span(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowGrid {
    /// Window ends `t0 + j*delta` for `j >= 1` and end `<= t - delta`.
    #[default]
    FullWindows,
    /// As above, plus the most recent window `[t - delta, t]`.
    IncludeFinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub delta: Span,
    /// Decay rate per day.
    pub sigma: f64,
    pub grid: WindowGrid,
    pub metrics: Vec<Metric>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            delta: Span::days(5),
            sigma: 0.001,
            grid: WindowGrid::FullWindows,
            metrics: Metric::ALL.to_vec(),
        }
    }
}

impl DecayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta.0 <= 0 {
            return Err(Error::config("delta must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }

    fn wants(&self, metric: Metric) -> bool {
        self.metrics.contains(&metric)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowSequence {
    pub t0: Timestamp,
    pub t: Timestamp,
    pub delta: i64,
    /// Window end points, strictly increasing.
    pub points: Vec<Timestamp>,
}

impl WindowSequence {
    /// `[end - delta, end]` for every end point.
    pub fn windows(&self) -> impl Iterator<Item = (Timestamp, Timestamp)> + '_ {
        self.points.iter().map(move |&p| (p - self.delta, p))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `exp(-sigma * (t - end))` with the age measured in days.
    pub fn weight(&self, point: Timestamp, sigma: f64) -> f64 {
        (-sigma * age_days(self.t, point)).exp()
    }
}

fn age_days(t: Timestamp, point: Timestamp) -> f64 {
    (t - point) as f64 / SECONDS_PER_DAY as f64
}

pub fn window_sequence(t0: Timestamp, t: Timestamp, config: &DecayConfig) -> Result<WindowSequence> {
    config.validate()?;
    if t < t0 {
        return Err(Error::domain(format!("inverted interval [{t0}, {t}]")));
    }
    let delta = config.delta.0;
    let mut points: Vec<Timestamp> = (1..).map(|j| t0 + j * delta).take_while(|&p| p <= t - delta).collect();
    if config.grid == WindowGrid::IncludeFinal && t - delta >= t0 {
        points.push(t);
    }
    if points.is_empty() {
        return Err(Error::undefined(format!(
            "no window of length {delta}s fits in [{t0}, {t}]"
        )));
    }
    Ok(WindowSequence { t0, t, delta, points })
}

/// Decay-weighted mean over windows whose score is defined.
///
/// Each entry is `(age in days, score)`. Returns the mean and the number of
/// windows skipped because their score was undefined.
pub fn decay_average(entries: &[(f64, Option<f64>)], sigma: f64) -> (Option<f64>, u32) {
    let mut acc: Option<f64> = None;
    let mut n = 0u32;
    let mut skipped = 0u32;
    for &(age, score) in entries {
        match score {
            Some(v) => {
                let term = (-sigma * age).exp() * v;
                acc = Some(acc.map_or(term, |s| s + term));
                n += 1;
            }
            None => skipped += 1,
        }
    }
    (acc.map(|s| s / n as f64), skipped)
}

fn window_scores(
    log: &ActionLog,
    window: (Timestamp, Timestamp),
    params: CascadeParams,
    causal: CausalConfig,
) -> Result<Vec<[Option<f64>; 4]>> {
    let slice = log.restrict(window.0, window.1)?;
    let cascades = CascadeSet::extract(&slice, params)?;
    let model = CausalModel::new(&cascades, causal)?;
    Ok(model.vectors(Some(window)).into_iter().map(|v| v.values).collect())
}

/// Decay scores of every user over `[t0, t]`, in user order.
pub fn decay_vectors(
    log: &ActionLog,
    interval: (Timestamp, Timestamp),
    params: CascadeParams,
    causal: CausalConfig,
    config: &DecayConfig,
) -> Result<Vec<CausalityVector>> {
    let seq = window_sequence(interval.0, interval.1, config)?;
    let windows: Vec<(Timestamp, Timestamp)> = seq.windows().collect();
    let per_window: Vec<Vec<[Option<f64>; 4]>> = par::map_slice(&windows, |&w| window_scores(log, w, params, causal))
        .into_iter()
        .collect::<Result<_>>()?;
    let ages: Vec<f64> = seq.points.iter().map(|&p| age_days(seq.t, p)).collect();

    Ok(par::map_range(log.n_users(), |u| {
        let mut vector = CausalityVector::undefined(u as UserId, Some(interval));
        for metric in Metric::ALL {
            if !config.wants(metric) {
                continue;
            }
            let entries: Vec<(f64, Option<f64>)> = ages
                .iter()
                .zip(&per_window)
                .map(|(&age, scores)| (age, scores[u][metric.index()]))
                .collect();
            let (value, skipped) = decay_average(&entries, config.sigma);
            vector.values[metric.index()] = value;
            vector.skipped[metric.index()] = skipped;
        }
        vector
    }))
}

/// Decay score of one user for one metric.
#[allow(clippy::too_many_arguments)]
pub fn xi(
    user: UserId,
    metric: Metric,
    interval: (Timestamp, Timestamp),
    log: &ActionLog,
    params: CascadeParams,
    causal: CausalConfig,
    config: &DecayConfig,
) -> Result<f64> {
    let seq = window_sequence(interval.0, interval.1, config)?;
    let mut entries = Vec::with_capacity(seq.len());
    for (w, &p) in seq.windows().zip(&seq.points) {
        let slice = log.restrict(w.0, w.1)?;
        let cascades = CascadeSet::extract(&slice, params)?;
        let model = CausalModel::new(&cascades, causal)?;
        let v = model.vector(user, Some(w))?;
        entries.push((age_days(seq.t, p), v.get(metric)));
    }
    decay_average(&entries, config.sigma)
        .0
        .ok_or_else(|| Error::undefined(format!("xi_{metric} of user {user}: every window undefined")))
}

/// Decay scores of one user.
pub fn decay_vector(
    user: UserId,
    interval: (Timestamp, Timestamp),
    log: &ActionLog,
    params: CascadeParams,
    causal: CausalConfig,
    config: &DecayConfig,
) -> Result<CausalityVector> {
    if user as usize >= log.n_users() {
        return Err(Error::domain(format!("unknown user {user}")));
    }
    let seq = window_sequence(interval.0, interval.1, config)?;
    let mut per_window = Vec::with_capacity(seq.len());
    for w in seq.windows() {
        let slice = log.restrict(w.0, w.1)?;
        let cascades = CascadeSet::extract(&slice, params)?;
        per_window.push(CausalModel::new(&cascades, causal)?.vector(user, Some(w))?);
    }
    let mut out = CausalityVector::undefined(user, Some(interval));
    for metric in Metric::ALL.into_iter().filter(|&m| config.wants(m)) {
        let entries: Vec<(f64, Option<f64>)> = seq
            .points
            .iter()
            .zip(&per_window)
            .map(|(&p, v)| (age_days(seq.t, p), v.get(metric)))
            .collect();
        let (value, skipped) = decay_average(&entries, config.sigma);
        out.values[metric.index()] = value;
        out.skipped[metric.index()] = skipped;
    }
    Ok(out)
}
