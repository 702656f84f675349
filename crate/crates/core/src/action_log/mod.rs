//! The action log: `(user, message, time)` posting events, interned to dense
//! indices and indexed per user and per message.

mod cascade;
mod parse;
mod stats;

pub use cascade::{is_key_user, Cascade, CascadeParams, CascadeSet};
pub use parse::{parse_action_log, parse_time, LogFormat};
pub use stats::{log_stats, CascadeSummary, CdfPoint, SizeBin, StatsReport};

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Dense user index into a [`Vocabulary`].
pub type UserId = u32;
/// Dense message index into a [`Vocabulary`].
pub type MessageId = u32;
/// Seconds since the Unix epoch.
pub type Timestamp = i64;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Interned user and message identifiers.
///
/// Ids are assigned in byte order of the external identifiers, so the dense
/// index of a user never depends on the order in which rows were read.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    users: Vec<String>,
    messages: Vec<String>,
    user_lookup: HashMap<String, UserId>,
    message_lookup: HashMap<String, MessageId>,
}

impl Vocabulary {
    pub fn new(mut users: Vec<String>, mut messages: Vec<String>) -> Self {
        users.sort_unstable();
        users.dedup();
        messages.sort_unstable();
        messages.dedup();
        let user_lookup = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i as UserId))
            .collect();
        let message_lookup = messages
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i as MessageId))
            .collect();
        Vocabulary {
            users,
            messages,
            user_lookup,
            message_lookup,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_messages(&self) -> usize {
        self.messages.len()
    }

    pub fn user_name(&self, user: UserId) -> &str {
        &self.users[user as usize]
    }

    pub fn message_name(&self, message: MessageId) -> &str {
        &self.messages[message as usize]
    }

    pub fn user_id(&self, name: &str) -> Option<UserId> {
        self.user_lookup.get(name).copied()
    }

    pub fn message_id(&self, name: &str) -> Option<MessageId> {
        self.message_lookup.get(name).copied()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    pub user: UserId,
    pub message: MessageId,
    pub time: Timestamp,
}

/// An indexed, immutable action log.
///
/// `actions` is kept in canonical `(time, user, message)` order. The per-user
/// and per-message indexes hold positions into `actions` and therefore inherit
/// that order: message lists are sorted by `(time, user)`, user lists by
/// `(time, message)`. Restricted logs share the vocabulary of their parent so
/// user ids stay comparable across time slices.
#[derive(Debug, Clone)]
pub struct ActionLog {
    vocab: Arc<Vocabulary>,
    actions: Vec<Action>,
    user_index: Vec<Vec<u32>>,
    message_index: Vec<Vec<u32>>,
}

impl PartialEq for ActionLog {
    fn eq(&self, other: &Self) -> bool {
        (Arc::ptr_eq(&self.vocab, &other.vocab) || self.vocab == other.vocab) && self.actions == other.actions
    }
}

impl ActionLog {
    /// Builds a log from already-interned actions. With `dedup`, only the
    /// earliest action of each `(user, message)` pair is kept.
    pub fn from_actions(vocab: Arc<Vocabulary>, mut actions: Vec<Action>, dedup: bool) -> Self {
        if dedup {
            actions.sort_unstable_by_key(|a| (a.user, a.message, a.time));
            actions.dedup_by_key(|a| (a.user, a.message));
        }
        actions.sort_unstable_by_key(|a| (a.time, a.user, a.message));
        Self::from_sorted(vocab, actions)
    }

    fn from_sorted(vocab: Arc<Vocabulary>, actions: Vec<Action>) -> Self {
        let mut user_index = vec![Vec::new(); vocab.n_users()];
        let mut message_index = vec![Vec::new(); vocab.n_messages()];
        for (pos, a) in actions.iter().enumerate() {
            user_index[a.user as usize].push(pos as u32);
            message_index[a.message as usize].push(pos as u32);
        }
        ActionLog {
            vocab,
            actions,
            user_index,
            message_index,
        }
    }

    /// Interns string triples and builds the log.
    pub fn from_records<U, M>(records: impl IntoIterator<Item = (U, M, Timestamp)>, dedup: bool) -> Result<Self>
    where
        U: Into<String>,
        M: Into<String>,
    {
        let rows: Vec<(String, String, Timestamp)> =
            records.into_iter().map(|(u, m, t)| (u.into(), m.into(), t)).collect();
        for (line, (_, _, t)) in rows.iter().enumerate() {
            if *t < 0 {
                return Err(Error::Validation {
                    line: line + 1,
                    message: format!("negative timestamp {t}"),
                });
            }
        }
        Ok(Self::intern(rows, dedup))
    }

    pub(crate) fn intern(rows: Vec<(String, String, Timestamp)>, dedup: bool) -> Self {
        let vocab = Vocabulary::new(
            rows.iter().map(|r| r.0.clone()).collect(),
            rows.iter().map(|r| r.1.clone()).collect(),
        );
        let actions = rows
            .iter()
            .map(|(u, m, t)| Action {
                user: vocab.user_lookup[u],
                message: vocab.message_lookup[m],
                time: *t,
            })
            .collect();
        Self::from_actions(Arc::new(vocab), actions, dedup)
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    /// Actions of `user`, ordered by time.
    pub fn user_actions(&self, user: UserId) -> impl Iterator<Item = &Action> + '_ {
        self.user_index[user as usize]
            .iter()
            .map(move |&p| &self.actions[p as usize])
    }

    /// Actions on `message`, ordered by `(time, user)`.
    pub fn message_actions(&self, message: MessageId) -> impl Iterator<Item = &Action> + '_ {
        self.message_index[message as usize]
            .iter()
            .map(move |&p| &self.actions[p as usize])
    }

    pub fn user_action_count(&self, user: UserId) -> usize {
        self.user_index[user as usize].len()
    }

    /// Users with at least one action, ascending.
    pub fn active_users(&self) -> Vec<UserId> {
        (0..self.n_users() as UserId)
            .filter(|&u| !self.user_index[u as usize].is_empty())
            .collect()
    }

    /// `[t_min, t_max]`, or `None` for an empty log.
    pub fn time_span(&self) -> Option<(Timestamp, Timestamp)> {
        Some((self.actions.first()?.time, self.actions.last()?.time))
    }

    /// Keeps exactly the actions with `start <= time <= end`.
    pub fn restrict(&self, start: Timestamp, end: Timestamp) -> Result<ActionLog> {
        if start > end {
            return Err(Error::domain(format!("inverted interval [{start}, {end}]")));
        }
        let lo = self.actions.partition_point(|a| a.time < start);
        let hi = self.actions.partition_point(|a| a.time <= end);
        Ok(Self::from_sorted(
            Arc::clone(&self.vocab),
            self.actions[lo..hi].to_vec(),
        ))
    }

    /// Returns a copy with every timestamp moved by `offset` seconds.
    pub fn shifted(&self, offset: Timestamp) -> Result<ActionLog> {
        let actions: Vec<Action> = self
            .actions
            .iter()
            .map(|a| Action {
                time: a.time + offset,
                ..*a
            })
            .collect();
        if actions.iter().any(|a| a.time < 0) {
            return Err(Error::domain("shift produces negative timestamps"));
        }
        Ok(Self::from_sorted(Arc::clone(&self.vocab), actions))
    }

    /// Writes the log as CSV with the canonical header, in canonical order.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "message_id", "timestamp"])?;
        for a in &self.actions {
            w.write_record([
                self.vocab.user_name(a.user),
                self.vocab.message_name(a.message),
                &a.time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes one JSON object per line with the canonical keys.
    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for a in &self.actions {
            let row = serde_json::json!({
                "user_id": self.vocab.user_name(a.user),
                "message_id": self.vocab.message_name(a.message),
                "timestamp": a.time,
            });
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
