use std::sync::Arc;

use crate::action_log::{ActionLog, UserId, Vocabulary};
use crate::par;

const ABSENT: u32 = u32::MAX;

/// Undirected graph linking users who posted the same message.
///
/// Vertices are the users with at least one action, in ascending user order.
/// Each unordered pair is stored once per endpoint (symmetric CSR); the
/// weight counts shared messages.
#[derive(Debug, Clone, PartialEq)]
pub struct CoPostGraph {
    vocab: Arc<Vocabulary>,
    vertices: Vec<UserId>,
    vertex_of: Vec<u32>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<u32>,
}

impl CoPostGraph {
    pub fn build(log: &ActionLog) -> Self {
        let vocab = Arc::clone(log.vocab());
        let vertices = log.active_users();
        let mut vertex_of = vec![ABSENT; log.n_users()];
        for (v, &u) in vertices.iter().enumerate() {
            vertex_of[u as usize] = v as u32;
        }

        // Distinct posters per message, and distinct messages per vertex.
        let n_messages = vocab.n_messages();
        let mut posters: Vec<Vec<u32>> = vec![Vec::new(); n_messages];
        for m in 0..n_messages as u32 {
            let list = &mut posters[m as usize];
            list.extend(log.message_actions(m).map(|a| vertex_of[a.user as usize]));
            list.sort_unstable();
            list.dedup();
        }
        let n = vertices.len();
        let mut messages_of: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (m, list) in posters.iter().enumerate() {
            for &v in list {
                messages_of[v as usize].push(m as u32);
            }
        }

        struct Scratch {
            stamp: Vec<u32>,
            count: Vec<u32>,
            touched: Vec<u32>,
        }
        let rows: Vec<Vec<(u32, u32)>> = par::map_chunked(
            n,
            256,
            || Scratch {
                stamp: vec![ABSENT; n],
                count: vec![0; n],
                touched: Vec::new(),
            },
            |s, v| {
                s.touched.clear();
                for &m in &messages_of[v] {
                    for &w in &posters[m as usize] {
                        if w as usize == v {
                            continue;
                        }
                        if s.stamp[w as usize] != v as u32 {
                            s.stamp[w as usize] = v as u32;
                            s.count[w as usize] = 0;
                            s.touched.push(w);
                        }
                        s.count[w as usize] += 1;
                    }
                }
                s.touched.sort_unstable();
                s.touched.iter().map(|&w| (w, s.count[w as usize])).collect()
            },
        );

        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let total: usize = rows.iter().map(Vec::len).sum();
        let mut neighbors = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for row in rows {
            for (w, c) in row {
                neighbors.push(w);
                weights.push(c);
            }
            offsets.push(neighbors.len());
        }
        CoPostGraph {
            vocab,
            vertices,
            vertex_of,
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// User behind vertex `v`.
    pub fn user(&self, v: usize) -> UserId {
        self.vertices[v]
    }

    pub fn vertices(&self) -> &[UserId] {
        &self.vertices
    }

    pub fn vertex_of(&self, user: UserId) -> Option<usize> {
        match self.vertex_of.get(user as usize) {
            Some(&v) if v != ABSENT => Some(v as usize),
            _ => None,
        }
    }

    /// `(neighbor vertex, shared messages)`, ascending by neighbor.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.neighbors[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(|(&w, &c)| (w as usize, c))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<u32> {
        let range = self.offsets[a]..self.offsets[a + 1];
        let row = &self.neighbors[range.clone()];
        row.binary_search(&(b as u32))
            .ok()
            .map(|i| self.weights[range.start + i])
    }

    /// Edge list, one `u v weight` line per unordered pair.
    pub fn write_edge_list<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for v in 0..self.n_vertices() {
            for (w, c) in self.neighbors(v).filter(|&(w, _)| w > v) {
                writeln!(
                    out,
                    "{} {} {}",
                    self.vocab.user_name(self.vertices[v]),
                    self.vocab.user_name(self.vertices[w]),
                    c
                )?;
            }
        }
        Ok(())
    }
}
