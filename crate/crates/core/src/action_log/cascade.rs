use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ActionLog, MessageId, Timestamp, UserId, Vocabulary};
use crate::error::{Error, Result};

const NO_SLOT: u32 = u32::MAX;

/// Virality threshold and key-user fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeParams {
    /// A message is viral iff its cascade has at least `theta` participants.
    pub theta: u32,
    /// Fraction of the cascade a key user must precede, in (0, 1).
    pub phi: f64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        CascadeParams { theta: 100, phi: 0.5 }
    }
}

impl CascadeParams {
    pub fn validate(&self) -> Result<()> {
        if self.theta < 1 {
            return Err(Error::config("theta must be >= 1"));
        }
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return Err(Error::config(format!("phi must lie in (0, 1), got {}", self.phi)));
        }
        Ok(())
    }
}

/// All postings of one message, earliest first; one entry per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub message: MessageId,
    /// `(user, time)` ordered by `(time, user)`.
    pub participants: Vec<(UserId, Timestamp)>,
    pub viral: bool,
    key_count: usize,
}

impl Cascade {
    fn new(message: MessageId, participants: Vec<(UserId, Timestamp)>, params: &CascadeParams) -> Self {
        let size = participants.len();
        let viral = size >= params.theta as usize;
        // Later-participant counts never increase along the cascade, so the
        // key users always form a prefix.
        let mut key_count = 0;
        while key_count < size {
            let later = later_than(&participants, participants[key_count].1);
            if (size as f64) * params.phi <= later as f64 {
                key_count += 1;
            } else {
                break;
            }
        }
        Cascade {
            message,
            participants,
            viral,
            key_count,
        }
    }

    pub fn size(&self) -> usize {
        self.participants.len()
    }

    pub fn duration(&self) -> Timestamp {
        match (self.participants.first(), self.participants.last()) {
            (Some(a), Some(b)) => b.1 - a.1,
            _ => 0,
        }
    }

    /// Key users under the `phi` this cascade was extracted with.
    pub fn key_users(&self) -> &[(UserId, Timestamp)] {
        &self.participants[..self.key_count]
    }

    pub fn time_of(&self, user: UserId) -> Option<Timestamp> {
        self.participants.iter().find(|(u, _)| *u == user).map(|&(_, t)| t)
    }

    /// Number of participants posting strictly after time `t`.
    pub fn later_than(&self, t: Timestamp) -> usize {
        later_than(&self.participants, t)
    }
}

fn later_than(participants: &[(UserId, Timestamp)], t: Timestamp) -> usize {
    participants.len() - participants.partition_point(|&(_, pt)| pt <= t)
}

/// Whether `user` precedes at least a `phi` fraction of the cascade.
pub fn is_key_user(user: UserId, cascade: &Cascade, phi: f64) -> Result<bool> {
    let t = cascade.time_of(user).ok_or_else(|| {
        Error::domain(format!(
            "user {user} does not participate in message {}",
            cascade.message
        ))
    })?;
    Ok((cascade.size() as f64) * phi <= cascade.later_than(t) as f64)
}

/// Cascades of every message present in a log, plus the viral set.
#[derive(Debug, Clone)]
pub struct CascadeSet {
    vocab: Arc<Vocabulary>,
    params: CascadeParams,
    cascades: Vec<Cascade>,
    slot: Vec<u32>,
    viral: Vec<MessageId>,
}

impl CascadeSet {
    /// One cascade per distinct message of `log`; duplicate postings by the
    /// same user collapse to the earliest.
    pub fn extract(log: &ActionLog, params: CascadeParams) -> Result<Self> {
        params.validate()?;
        let vocab = Arc::clone(log.vocab());
        let n_messages = vocab.n_messages();
        let mut seen = vec![NO_SLOT; vocab.n_users()];
        let mut cascades = Vec::new();
        let mut slot = vec![NO_SLOT; n_messages];
        for m in 0..n_messages as MessageId {
            let mut participants = Vec::new();
            for a in log.message_actions(m) {
                if seen[a.user as usize] != m {
                    seen[a.user as usize] = m;
                    participants.push((a.user, a.time));
                }
            }
            if participants.is_empty() {
                continue;
            }
            slot[m as usize] = cascades.len() as u32;
            cascades.push(Cascade::new(m, participants, &params));
        }
        let viral = cascades.iter().filter(|c| c.viral).map(|c| c.message).collect();
        Ok(CascadeSet {
            vocab,
            params,
            cascades,
            slot,
            viral,
        })
    }

    pub fn params(&self) -> CascadeParams {
        self.params
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    pub fn cascades(&self) -> &[Cascade] {
        &self.cascades
    }

    pub fn len(&self) -> usize {
        self.cascades.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cascades.is_empty()
    }

    pub fn get(&self, message: MessageId) -> Option<&Cascade> {
        self.slot_of(message).map(|s| &self.cascades[s])
    }

    /// Position of `message` within [`CascadeSet::cascades`].
    pub fn slot_of(&self, message: MessageId) -> Option<usize> {
        match self.slot.get(message as usize) {
            Some(&s) if s != NO_SLOT => Some(s as usize),
            _ => None,
        }
    }

    pub fn viral(&self) -> &[MessageId] {
        &self.viral
    }

    pub fn is_viral(&self, message: MessageId) -> bool {
        self.get(message).is_some_and(|c| c.viral)
    }

    /// One JSON object per cascade, in message order.
    pub fn write_jsonl<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        for c in &self.cascades {
            let participants: Vec<(&str, Timestamp)> = c
                .participants
                .iter()
                .map(|&(u, t)| (self.vocab.user_name(u), t))
                .collect();
            let row = serde_json::json!({
                "message_id": self.vocab.message_name(c.message),
                "viral": c.viral,
                "participants": participants,
            });
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
