use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ActionLog, CascadeSet, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBin {
    pub size: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    /// Duration in seconds.
    pub duration: Timestamp,
    /// Fraction of cascades lasting at most `duration`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub message_id: String,
    pub size: usize,
    pub duration: Timestamp,
    pub viral: bool,
}

/// Cascade size and duration distributions, in a plot-ready shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_actions: usize,
    pub n_users: usize,
    pub n_cascades: usize,
    pub n_viral: usize,
    pub size_histogram: Vec<SizeBin>,
    pub duration_cdf: Vec<CdfPoint>,
    pub per_cascade: Vec<CascadeSummary>,
}

impl StatsReport {
    pub fn histogram_map(&self) -> BTreeMap<usize, usize> {
        self.size_histogram.iter().map(|b| (b.size, b.count)).collect()
    }
}

pub fn log_stats(log: &ActionLog, cascades: &CascadeSet) -> StatsReport {
    let mut hist = BTreeMap::new();
    let mut durations = Vec::with_capacity(cascades.len());
    let vocab = cascades.vocab();
    let per_cascade = cascades
        .cascades()
        .iter()
        .map(|c| {
            *hist.entry(c.size()).or_insert(0usize) += 1;
            durations.push(c.duration());
            CascadeSummary {
                message_id: vocab.message_name(c.message).to_string(),
                size: c.size(),
                duration: c.duration(),
                viral: c.viral,
            }
        })
        .collect();

    durations.sort_unstable();
    let n = durations.len() as f64;
    let mut duration_cdf: Vec<CdfPoint> = Vec::new();
    for (i, &d) in durations.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match duration_cdf.last_mut() {
            Some(last) if last.duration == d => last.fraction = fraction,
            _ => duration_cdf.push(CdfPoint { duration: d, fraction }),
        }
    }

    StatsReport {
        n_actions: log.len(),
        n_users: log.active_users().len(),
        n_cascades: cascades.len(),
        n_viral: cascades.viral().len(),
        size_histogram: hist.into_iter().map(|(size, count)| SizeBin { size, count }).collect(),
        duration_cdf,
        per_cascade,
    }
}
