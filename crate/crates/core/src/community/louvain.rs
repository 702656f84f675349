use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CoPostGraph;
use crate::action_log::{UserId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LouvainOptions {
    /// Seeds the vertex visiting order.
    pub seed: u64,
    pub resolution: f64,
    /// Use shared-message counts as edge weights instead of 1.
    pub weighted: bool,
}

impl Default for LouvainOptions {
    fn default() -> Self {
        LouvainOptions {
            seed: 42,
            resolution: 1.0,
            weighted: false,
        }
    }
}

/// Community of every graph vertex, ids dense in `0..k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommunityPartition {
    pub vertices: Vec<UserId>,
    pub assignment: Vec<u32>,
    pub k: usize,
    pub modularity: f64,
    /// Modularity after each aggregation level.
    pub level_modularity: Vec<f64>,
}

impl CommunityPartition {
    pub fn community_of_vertex(&self, v: usize) -> u32 {
        self.assignment[v]
    }

    pub fn community_of_user(&self, user: UserId) -> Option<u32> {
        self.vertices.binary_search(&user).ok().map(|v| self.assignment[v])
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c as usize] += 1;
        }
        sizes
    }

    /// Vertices of every community, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (v, &c) in self.assignment.iter().enumerate() {
            out[c as usize].push(v);
        }
        out
    }

    /// `user_id,community_id` CSV.
    pub fn write_csv<W: std::io::Write>(&self, vocab: &Vocabulary, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["user_id", "community_id"])?;
        for (&u, &c) in self.vertices.iter().zip(&self.assignment) {
            w.write_record([vocab.user_name(u), &c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weighted graph for one Louvain level. `loops[i]` is `A_ii`, which after
/// aggregation holds twice the internal weight of the merged community.
struct LevelGraph {
    adj: Vec<Vec<(u32, f64)>>,
    loops: Vec<f64>,
    degree: Vec<f64>,
    two_m: f64,
}

impl LevelGraph {
    fn from_copost(graph: &CoPostGraph, weighted: bool) -> Self {
        let adj: Vec<Vec<(u32, f64)>> = (0..graph.n_vertices())
            .map(|v| {
                graph
                    .neighbors(v)
                    .map(|(w, c)| (w as u32, if weighted { c as f64 } else { 1.0 }))
                    .collect()
            })
            .collect();
        let loops = vec![0.0; adj.len()];
        Self::finish(adj, loops)
    }

    fn finish(adj: Vec<Vec<(u32, f64)>>, loops: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&loops)
            .map(|(row, &l)| row.iter().map(|&(_, w)| w).sum::<f64>() + l)
            .collect();
        let two_m = degree.iter().sum();
        LevelGraph {
            adj,
            loops,
            degree,
            two_m,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    /// Collapses communities (dense ids `0..k`) into single nodes.
    fn aggregate(&self, comm: &[u32], k: usize) -> Self {
        let mut loops = vec![0.0; k];
        let mut triples: Vec<(u32, u32, f64)> = Vec::new();
        for (i, row) in self.adj.iter().enumerate() {
            let ci = comm[i];
            loops[ci as usize] += self.loops[i];
            for &(j, w) in row {
                let cj = comm[j as usize];
                if ci == cj {
                    loops[ci as usize] += w;
                } else {
                    triples.push((ci, cj, w));
                }
            }
        }
        triples.sort_unstable_by_key(|&(a, b, _)| (a, b));
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); k];
        for (a, b, w) in triples {
            let row = &mut adj[a as usize];
            match row.last_mut() {
                Some(last) if last.0 == b => last.1 += w,
                _ => row.push((b, w)),
            }
        }
        Self::finish(adj, loops)
    }
}

const MIN_GAIN: f64 = 1e-12;

/// Local moving phase. Returns community labels (not yet dense) and whether
/// any node moved.
fn local_moving(g: &LevelGraph, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<u32>, bool) {
    let n = g.len();
    let mut comm: Vec<u32> = (0..n as u32).collect();
    let mut tot = g.degree.clone();
    let mut link = vec![0.0f64; n];
    let mut touched: Vec<u32> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut any_move = false;

    loop {
        let mut moves = 0usize;
        for &i in &order {
            let k_i = g.degree[i];
            let old = comm[i];
            touched.clear();
            for &(j, w) in &g.adj[i] {
                let c = comm[j as usize];
                if link[c as usize] == 0.0 {
                    touched.push(c);
                }
                link[c as usize] += w;
            }
            tot[old as usize] -= k_i;

            let gain = |c: u32, link_c: f64| link_c - resolution * tot[c as usize] * k_i / g.two_m;
            let mut best = old;
            let mut best_gain = gain(old, link[old as usize]);
            touched.sort_unstable();
            for &c in &touched {
                if c == old {
                    continue;
                }
                let candidate = gain(c, link[c as usize]);
                if candidate > best_gain + MIN_GAIN {
                    best = c;
                    best_gain = candidate;
                }
            }

            tot[best as usize] += k_i;
            comm[i] = best;
            if best != old {
                moves += 1;
            }
            for &c in &touched {
                link[c as usize] = 0.0;
            }
        }
        if moves == 0 {
            break;
        }
        any_move = true;
    }
    (comm, any_move)
}

/// Relabels to dense ids in order of first appearance.
fn densify(labels: &mut [u32]) -> usize {
    let mut map = std::collections::HashMap::new();
    for l in labels.iter_mut() {
        let next = map.len() as u32;
        *l = *map.entry(*l).or_insert(next);
    }
    map.len()
}

/// Modularity of `assignment` (one community id per vertex) on `graph`.
pub fn modularity(graph: &CoPostGraph, assignment: &[u32], resolution: f64, weighted: bool) -> f64 {
    let g = LevelGraph::from_copost(graph, weighted);
    level_modularity(&g, assignment, resolution)
}

fn level_modularity(g: &LevelGraph, comm: &[u32], resolution: f64) -> f64 {
    if g.two_m == 0.0 {
        return 0.0;
    }
    let k = comm.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut inside = vec![0.0; k];
    let mut tot = vec![0.0; k];
    for (i, row) in g.adj.iter().enumerate() {
        let c = comm[i] as usize;
        tot[c] += g.degree[i];
        inside[c] += g.loops[i];
        inside[c] += row
            .iter()
            .filter(|&&(j, _)| comm[j as usize] as usize == c)
            .map(|&(_, w)| w)
            .sum::<f64>();
    }
    inside
        .iter()
        .zip(&tot)
        .map(|(&a, &t)| a / g.two_m - resolution * (t / g.two_m).powi(2))
        .sum()
}

/// Two-phase Louvain (local moving, then aggregation) until no node moves.
///
/// Among equally good moves the lowest community id wins, and a node only
/// leaves its community for a strictly better one.
pub fn louvain(graph: &CoPostGraph, opts: LouvainOptions) -> CommunityPartition {
    let base = LevelGraph::from_copost(graph, opts.weighted);
    let n = base.len();
    let mut membership: Vec<u32> = (0..n as u32).collect();
    let mut level_q = Vec::new();
    if n == 0 {
        return CommunityPartition {
            vertices: Vec::new(),
            assignment: Vec::new(),
            k: 0,
            modularity: 0.0,
            level_modularity: level_q,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut level = LevelGraph::from_copost(graph, opts.weighted);
    loop {
        let (mut comm, moved) = local_moving(&level, opts.resolution, &mut rng);
        let k = densify(&mut comm);
        for m in membership.iter_mut() {
            *m = comm[*m as usize];
        }
        level_q.push(level_modularity(&base, &membership, opts.resolution));
        if !moved || k == level.len() {
            break;
        }
        level = level.aggregate(&comm, k);
    }
    let k = densify(&mut membership);
    let q = level_modularity(&base, &membership, opts.resolution);
    CommunityPartition {
        vertices: graph.vertices().to_vec(),
        assignment: membership,
        k,
        modularity: q,
        level_modularity: level_q,
    }
}
