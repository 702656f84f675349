//! Seeded synthetic action logs with planted PSM accounts.
//!
//! Users belong to latent groups; each cascade draws most of its
//! participants from one group, so the co-posting graph has community
//! structure. PSM accounts are concentrated in a few groups. With
//! probability `psm_early_bias` a viral cascade is a campaign: it runs in a
//! PSM-heavy group, its key (earliest) slots are taken by that group's PSMs
//! in rotation, and its followers are normal users of the group or, for a
//! group made only of PSMs, of a linked supporter group. All other
//! cascades are organic, placed in a uniformly random group with uniformly
//! ordered participants. Cascade sizes follow a truncated power law and
//! per-user activity is log-normal.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::action_log::{Action, ActionLog, CascadeParams, Timestamp, Vocabulary, SECONDS_PER_DAY};
use crate::classify::{GroundTruth, Label};
use crate::error::{Error, Result};

/// Attempts to draw an unused participant for a slot before giving up.
const MAX_DRAWS: usize = 32;

/// 2016-02-22T00:00:00Z.
pub const DEFAULT_START: Timestamp = 1_456_099_200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_messages: usize,
    pub psm_fraction: f64,
    /// Fraction of cascades at or above the viral threshold.
    pub viral_fraction: f64,
    /// Exponent of the cascade-size power law.
    pub size_exponent: f64,
    pub min_cascade_size: usize,
    pub max_cascade_size: usize,
    pub psm_early_bias: f64,
    pub n_communities: usize,
    /// Probability that a participant comes from the cascade's own group.
    pub community_affinity: f64,
    /// Log-normal spread of per-user activity; 0 makes all users equally
    /// active.
    pub activity_sigma: f64,
    /// Share of PSMs among members of a PSM-heavy group.
    pub psm_concentration: f64,
    pub time_span_days: u32,
    pub min_duration_secs: i64,
    pub max_duration_secs: i64,
    pub start_time: Timestamp,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 5_000,
            n_messages: 20_000,
            psm_fraction: 0.11,
            viral_fraction: 0.2,
            size_exponent: 2.5,
            min_cascade_size: 2,
            max_cascade_size: 200,
            psm_early_bias: 0.8,
            n_communities: 20,
            community_affinity: 0.8,
            activity_sigma: 0.5,
            psm_concentration: 1.0,
            time_span_days: 100,
            min_duration_secs: 3_600,
            max_duration_secs: 2 * SECONDS_PER_DAY,
            start_time: DEFAULT_START,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if self.n_users < 2 || self.n_messages == 0 {
            return fail("need at least 2 users and 1 message");
        }
        if !(self.psm_fraction > 0.0 && self.psm_fraction < 1.0) {
            return fail("psm_fraction must lie in (0, 1)");
        }
        if !(self.viral_fraction > 0.0 && self.viral_fraction <= 1.0) {
            return fail("viral_fraction must lie in (0, 1]");
        }
        if !(self.size_exponent > 1.0 && self.size_exponent.is_finite()) {
            return fail("size_exponent must exceed 1");
        }
        if !unit(self.psm_early_bias) || !unit(self.community_affinity) {
            return fail("psm_early_bias and community_affinity must lie in [0, 1]");
        }
        if !(self.activity_sigma >= 0.0 && self.activity_sigma.is_finite()) {
            return fail("activity_sigma must be finite and >= 0");
        }
        if !(self.psm_concentration > 0.0 && self.psm_concentration <= 1.0) {
            return fail("psm_concentration must lie in (0, 1]");
        }
        if self.min_cascade_size < 1 || self.min_cascade_size > self.max_cascade_size {
            return fail("need 1 <= min_cascade_size <= max_cascade_size");
        }
        if self.max_cascade_size > self.n_users {
            return fail("max_cascade_size exceeds n_users");
        }
        if self.n_communities == 0 || self.n_communities > self.n_users {
            return fail("n_communities must lie in [1, n_users]");
        }
        if self.time_span_days == 0 {
            return fail("time_span_days must be positive");
        }
        if self.min_duration_secs < self.max_cascade_size as i64
            || self.min_duration_secs > self.max_duration_secs
            || self.max_duration_secs > self.span_secs()
        {
            return fail("need max_cascade_size <= min_duration_secs <= max_duration_secs <= time span");
        }
        if self.start_time < 0 {
            return fail("start_time must be non-negative");
        }
        Ok(())
    }

    pub fn span_secs(&self) -> i64 {
        self.time_span_days as i64 * SECONDS_PER_DAY
    }

    /// `round(n_users * psm_fraction)`, half away from zero.
    pub fn psm_count(&self) -> usize {
        (self.n_users as f64 * self.psm_fraction).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub log: ActionLog,
    pub truth: GroundTruth,
    /// Latent group of each user, indexed by user id.
    pub groups: Vec<u32>,
    /// Viral threshold matching `viral_fraction` of the drawn sizes.
    pub theta: u32,
    /// Nominal `[start, start + time_span]`.
    pub timeline: (Timestamp, Timestamp),
}

impl SynthDataset {
    pub fn cascade_params(&self) -> CascadeParams {
        CascadeParams {
            theta: self.theta,
            ..CascadeParams::default()
        }
    }
}

/// Users sampled in proportion to their activity weight.
struct Pool {
    users: Vec<u32>,
    index: WeightedIndex<f64>,
}

impl Pool {
    fn new(users: Vec<u32>, weights: &[f64]) -> Option<Self> {
        let index = WeightedIndex::new(users.iter().map(|&u| weights[u as usize])).ok()?;
        Some(Pool { users, index })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        self.users[self.index.sample(rng)]
    }
}

/// Users dealt in rotation: every member is used once before any repeats,
/// in an order reshuffled on each pass.
struct Deck {
    users: Vec<u32>,
    next: usize,
}

impl Deck {
    fn new(users: Vec<u32>) -> Option<Self> {
        let next = users.len();
        (!users.is_empty()).then_some(Deck { users, next })
    }

    fn deal(&mut self, rng: &mut ChaCha8Rng) -> u32 {
        if self.next == self.users.len() {
            self.users.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.users[self.next - 1]
    }
}

fn power_law_size(rng: &mut ChaCha8Rng, min: usize, max: usize, exponent: f64) -> usize {
    let e = 1.0 - exponent;
    let lo = (min as f64).powf(e);
    let hi = (max as f64 + 1.0).powf(e);
    let u: f64 = rng.random();
    let x = (lo - u * (lo - hi)).powf(1.0 / e);
    (x.floor() as usize).clamp(min, max)
}

/// Assigns labels and groups: PSMs fill the first PSM-heavy groups at
/// `psm_concentration`, normals fill the rest; user indices are shuffled so
/// names carry no signal.
fn plant_users(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<Label>, Vec<u32>) {
    let n = cfg.n_users;
    let n_psm = cfg.psm_count().min(n);
    let n_groups = cfg.n_communities;
    let base = n / n_groups;
    let capacity: Vec<usize> = (0..n_groups).map(|g| base + usize::from(g < n % n_groups)).collect();

    let mut psm_quota = vec![0usize; n_groups];
    let mut left = n_psm;
    for g in 0..n_groups {
        let q = ((capacity[g] as f64 * cfg.psm_concentration).floor() as usize).min(left);
        psm_quota[g] = q;
        left -= q;
    }
    // Concentration too low to host every PSM: spread the rest evenly.
    let mut g = 0;
    while left > 0 {
        if psm_quota[g] < capacity[g] {
            psm_quota[g] += 1;
            left -= 1;
        }
        g = (g + 1) % n_groups;
    }

    let mut slots: Vec<(Label, u32)> = Vec::with_capacity(n);
    for g in 0..n_groups {
        slots.extend(std::iter::repeat_n((Label::Psm, g as u32), psm_quota[g]));
        slots.extend(std::iter::repeat_n(
            (Label::Normal, g as u32),
            capacity[g] - psm_quota[g],
        ));
    }
    slots.shuffle(rng);
    slots.into_iter().unzip()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (labels, groups) = plant_users(cfg, &mut rng);
    let n = cfg.n_users;
    let activity = LogNormal::new(0.0, cfg.activity_sigma).map_err(|e| Error::config(e.to_string()))?;
    let weights: Vec<f64> = (0..n).map(|_| activity.sample(&mut rng)).collect();
    let pool = |users: Vec<u32>| Pool::new(users, &weights);
    // PSMs are dedicated accounts that take turns seeding campaigns,
    // whatever their organic activity.
    let members: Vec<Option<Pool>> = (0..cfg.n_communities as u32)
        .map(|g| pool((0..n as u32).filter(|&u| groups[u as usize] == g).collect()))
        .collect();
    let mut psm_members: Vec<Option<Deck>> = (0..cfg.n_communities as u32)
        .map(|g| {
            Deck::new(
                (0..n as u32)
                    .filter(|&u| groups[u as usize] == g && labels[u as usize] == Label::Psm)
                    .collect(),
            )
        })
        .collect();
    let normal_members: Vec<Option<Pool>> = (0..cfg.n_communities as u32)
        .map(|g| {
            pool(
                (0..n as u32)
                    .filter(|&u| groups[u as usize] == g && labels[u as usize] == Label::Normal)
                    .collect(),
            )
        })
        .collect();
    let everyone = pool((0..n as u32).collect()).expect("validated: n_users >= 2");
    let all_normal = pool((0..n as u32).filter(|&u| labels[u as usize] == Label::Normal).collect());
    let mut all_psm = Deck::new((0..n as u32).filter(|&u| labels[u as usize] == Label::Psm).collect());
    let psm_groups: Vec<usize> = (0..cfg.n_communities).filter(|&g| psm_members[g].is_some()).collect();
    // Campaign followers come from the campaign group's own normals or, for
    // a group made only of PSMs, from a supporter group of normals.
    let normal_groups: Vec<usize> = (0..cfg.n_communities).filter(|&g| psm_members[g].is_none()).collect();
    let mut next_supporter = 0;
    let followers: Vec<usize> = (0..cfg.n_communities)
        .map(|g| {
            if normal_members[g].is_some() || normal_groups.is_empty() {
                g
            } else {
                next_supporter += 1;
                normal_groups[(next_supporter - 1) % normal_groups.len()]
            }
        })
        .collect();

    let sizes: Vec<usize> = (0..cfg.n_messages)
        .map(|_| power_law_size(&mut rng, cfg.min_cascade_size, cfg.max_cascade_size, cfg.size_exponent))
        .collect();
    let theta = {
        let mut sorted = sizes.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let idx = ((cfg.viral_fraction * sizes.len() as f64).ceil() as usize).clamp(1, sizes.len()) - 1;
        sorted[idx].max(1) as u32
    };

    let (ln_min, ln_max) = ((cfg.min_duration_secs as f64).ln(), (cfg.max_duration_secs as f64).ln());
    let span = cfg.span_secs();
    let phi = CascadeParams::default().phi;
    let mut stamp = vec![u32::MAX; n];
    let mut actions: Vec<Action> = Vec::new();

    for (m, &size) in sizes.iter().enumerate() {
        let viral = size as u32 >= theta;
        let campaign = viral && !psm_groups.is_empty() && rng.random::<f64>() < cfg.psm_early_bias;
        let group = if campaign {
            psm_groups[rng.random_range(0..psm_groups.len())]
        } else {
            rng.random_range(0..cfg.n_communities)
        };
        let mut participants: Vec<u32> = Vec::with_capacity(size);
        let mut admit = |u: u32, participants: &mut Vec<u32>| {
            let fresh = stamp[u as usize] != m as u32;
            if fresh {
                stamp[u as usize] = m as u32;
                participants.push(u);
            }
            fresh
        };
        let draw = |rng: &mut ChaCha8Rng, local: Option<&Pool>, global: Option<&Pool>| -> Option<u32> {
            let pick = if rng.random::<f64>() < cfg.community_affinity {
                local
            } else {
                global
            };
            pick.or(local).or(global).map(|p| p.sample(rng))
        };

        // A campaign fills its key slots with PSMs of its group (or, with
        // probability 1 - affinity, with any PSM).
        if campaign {
            let key_slots = (0..size)
                .filter(|&p| (size - 1 - p) as f64 >= phi * size as f64)
                .count();
            for _ in 0..key_slots {
                for _ in 0..MAX_DRAWS {
                    let local = rng.random::<f64>() < cfg.community_affinity;
                    let deck = match (&mut psm_members[group], &mut all_psm) {
                        (Some(d), _) if local => d,
                        (_, Some(d)) => d,
                        (Some(d), None) => d,
                        (None, None) => unreachable!("campaign group has PSMs"),
                    };
                    let u = deck.deal(&mut rng);
                    if admit(u, &mut participants) {
                        break;
                    }
                }
            }
        }
        // Campaign followers are normal users; organic cascades draw from
        // everyone.
        let (local, global) = if campaign {
            (normal_members[followers[group]].as_ref(), all_normal.as_ref())
        } else {
            (members[group].as_ref(), Some(&everyone))
        };
        let planted = participants.len();
        while participants.len() < size {
            let fresh = (0..MAX_DRAWS).any(|_| match draw(&mut rng, local, global) {
                Some(u) => admit(u, &mut participants),
                None => false,
            });
            if !fresh {
                // Heavy users exhausted: fall back to uniform draws.
                while !admit(rng.random_range(0..n) as u32, &mut participants) {}
            }
        }
        participants[planted..].shuffle(&mut rng);

        let duration = (ln_min + rng.random::<f64>() * (ln_max - ln_min)).exp() as i64;
        let start = cfg.start_time + rng.random_range(0..=span - duration);
        let mut offsets: Vec<i64> = (0..size).map(|_| rng.random_range(0..=duration)).collect();
        offsets.sort_unstable();
        for i in 1..size {
            offsets[i] = offsets[i].max(offsets[i - 1] + 1);
        }
        for (&user, &off) in participants.iter().zip(&offsets) {
            actions.push(Action {
                user,
                message: m as u32,
                time: start + off,
            });
        }
    }

    // Zero-padded names sort in index order, so interned ids equal the
    // generation indices and every user is in the vocabulary, active or not.
    let uw = digits(n - 1).max(6);
    let mw = digits(cfg.n_messages - 1).max(7);
    let vocab = Vocabulary::new(
        (0..n).map(|u| format!("u{u:0uw$}")).collect(),
        (0..cfg.n_messages).map(|m| format!("m{m:0mw$}")).collect(),
    );
    let log = ActionLog::from_actions(Arc::new(vocab), actions, false);
    let truth = GroundTruth::from_labels(labels.into_iter().map(Some).collect());
    Ok(SynthDataset {
        log,
        truth,
        groups,
        theta,
        timeline: (cfg.start_time, cfg.start_time + span),
    })
}

fn digits(mut x: usize) -> usize {
    let mut d = 1;
    while x >= 10 {
        x /= 10;
        d += 1;
    }
    d
}
