use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::CommunityPartition;
use crate::error::{Error, Result};
use crate::par;

/// One-sided Welch test of `mean(a) < mean(b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchTest {
    pub mean_a: f64,
    pub mean_b: f64,
    pub t_statistic: f64,
    pub df: f64,
    /// `P(T <= t)` under the null.
    pub p_value: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, ss / (n - 1.0))
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::undefined("t-test needs at least two values per sample"));
    }
    let (mean_a, var_a) = mean_var(a);
    let (mean_b, var_b) = mean_var(b);
    let (sa, sb) = (var_a / a.len() as f64, var_b / b.len() as f64);
    let se2 = sa + sb;
    let diff = mean_a - mean_b;
    if se2 == 0.0 {
        // Both samples constant: the sign of the difference decides.
        let (t, p) = if diff == 0.0 {
            (0.0, 0.5)
        } else if diff < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (f64::INFINITY, 1.0)
        };
        return Ok(WelchTest {
            mean_a,
            mean_b,
            t_statistic: t,
            df: (a.len() + b.len() - 2) as f64,
            p_value: p,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::domain(e.to_string()))?;
    Ok(WelchTest {
        mean_a,
        mean_b,
        t_statistic: t,
        df,
        p_value: dist.cdf(t),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohesionTestResult {
    /// Distances between every pair of users sharing a community.
    #[serde(skip)]
    pub v_a: Vec<f64>,
    /// Distance from every user to one random user of another community.
    #[serde(skip)]
    pub v_b: Vec<f64>,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t_statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub reject_at: f64,
    pub rejected: bool,
}

fn distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Tests whether users of a community are closer in score space to each
/// other than to users of other communities.
///
/// `features[v]` is the (imputed) vector of partition vertex `v`.
pub fn cohesion_test(
    partition: &CommunityPartition,
    features: &[[f64; 4]],
    seed: u64,
    significance: f64,
) -> Result<CohesionTestResult> {
    if features.len() != partition.assignment.len() {
        return Err(Error::domain(format!(
            "{} feature vectors for {} vertices",
            features.len(),
            partition.assignment.len()
        )));
    }
    if partition.k < 2 {
        return Err(Error::undefined("cohesion test needs at least two communities"));
    }
    let members = partition.members();

    let within: Vec<Vec<f64>> = par::map_slice(&members, |m| {
        let mut out = Vec::with_capacity(m.len() * m.len().saturating_sub(1) / 2);
        for (x, &a) in m.iter().enumerate() {
            for &b in &m[x + 1..] {
                out.push(distance(&features[a], &features[b]));
            }
        }
        out
    });
    let v_a: Vec<f64> = within.into_iter().flatten().collect();

    // Vertices laid out community by community, so "anyone outside C" is a
    // contiguous index range with C's block cut out.
    let order: Vec<usize> = members.iter().flatten().copied().collect();
    let mut block_start = Vec::with_capacity(members.len());
    let mut acc = 0;
    for m in &members {
        block_start.push(acc);
        acc += m.len();
    }
    let n = order.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v_b = Vec::with_capacity(n);
    for (c, m) in members.iter().enumerate() {
        for &a in m {
            let mut r = rng.random_range(0..n - m.len());
            if r >= block_start[c] {
                r += m.len();
            }
            v_b.push(distance(&features[a], &features[order[r]]));
        }
    }

    let test = welch_t_test(&v_a, &v_b)?;
    Ok(CohesionTestResult {
        n_a: v_a.len(),
        n_b: v_b.len(),
        v_a,
        v_b,
        mean_a: test.mean_a,
        mean_b: test.mean_b,
        t_statistic: test.t_statistic,
        df: test.df,
        p_value: test.p_value,
        reject_at: significance,
        rejected: test.p_value < significance,
    })
}
