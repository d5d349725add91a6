//! Layered small-world graph index with deterministic, seeded construction.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ann::dataset::{sq_dist, Dataset};
use crate::error::{Result, SaxError};

pub const DEFAULT_M: usize = 16;
pub const DEFAULT_EF_CONSTRUCTION: usize = 100;
pub const DEFAULT_EF_SEARCH: usize = 200;

/// Construction parameters for [`build_index`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildParams {
    /// Per-layer neighbor budget; level 0 keeps up to `2 * m` links.
    pub m: usize,
    /// Beam width used while inserting nodes.
    pub ef_construction: usize,
    /// Seed for the level generator.
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            m: DEFAULT_M,
            ef_construction: DEFAULT_EF_CONSTRUCTION,
            seed: 0,
        }
    }
}

/// A candidate scored by distance; orders ascending by `(dist, id)` so heaps
/// pop deterministically under ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Scored {
    pub dist: f64,
    pub id: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Graph index over a [`Dataset`]. Nodes keep one adjacency list per layer;
/// layer 0 holds every node and upper layers thin out geometrically.
#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    dim: usize,
    m: usize,
    ef_construction: usize,
    build_seed: u64,
    level_scale: f64,
    entry_point: u32,
    /// links[node][level] lists that node's neighbors at that level.
    links: Vec<Vec<Vec<u32>>>,
}

impl HnswIndex {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ef_construction(&self) -> usize {
        self.ef_construction
    }

    pub fn build_seed(&self) -> u64 {
        self.build_seed
    }

    pub fn level_scale(&self) -> f64 {
        self.level_scale
    }

    pub fn entry_point(&self) -> u32 {
        self.entry_point
    }

    /// Top layer of a node; every node exists on layers `0..=level_of(id)`.
    pub fn level_of(&self, id: u32) -> usize {
        self.links[id as usize].len() - 1
    }

    pub fn max_level(&self) -> usize {
        self.level_of(self.entry_point)
    }

    pub fn neighbors(&self, id: u32, level: usize) -> &[u32] {
        &self.links[id as usize][level]
    }

    /// Reassembles an index from persisted parts, revalidating the
    /// structural invariants.
    pub(crate) fn from_parts(
        dim: usize,
        m: usize,
        ef_construction: usize,
        build_seed: u64,
        level_scale: f64,
        entry_point: u32,
        links: Vec<Vec<Vec<u32>>>,
    ) -> Result<Self> {
        let idx = HnswIndex {
            dim,
            m,
            ef_construction,
            build_seed,
            level_scale,
            entry_point,
            links,
        };
        idx.validate()?;
        Ok(idx)
    }

    /// Checks the structural invariants: entry point in range, neighbor ids
    /// valid and present on their layer, and per-layer degree caps.
    pub fn validate(&self) -> Result<()> {
        let n = self.links.len();
        if n == 0 {
            return Err(SaxError::invalid_input("index has no nodes"));
        }
        if self.entry_point as usize >= n {
            return Err(SaxError::invalid_input("entry point out of range"));
        }
        for (id, layers) in self.links.iter().enumerate() {
            if layers.is_empty() {
                return Err(SaxError::invalid_input(format!("node {id} has no layers")));
            }
            for (level, nbrs) in layers.iter().enumerate() {
                let cap = if level == 0 { 2 * self.m } else { self.m };
                if nbrs.len() > cap {
                    return Err(SaxError::invalid_input(format!(
                        "node {id} level {level} exceeds degree cap {cap}"
                    )));
                }
                for &nb in nbrs {
                    if nb as usize >= n {
                        return Err(SaxError::invalid_input(format!(
                            "node {id} links to missing node {nb}"
                        )));
                    }
                    if self.links[nb as usize].len() <= level {
                        return Err(SaxError::invalid_input(format!(
                            "node {id} links to {nb} above its top layer"
                        )));
                    }
                    if nb as usize == id {
                        return Err(SaxError::invalid_input(format!("node {id} links to itself")));
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn links(&self) -> &Vec<Vec<Vec<u32>>> {
        &self.links
    }

    /// Greedy descent: walk one layer, always moving to the strictly closest
    /// neighbor, until no neighbor improves on the current node.
    pub(crate) fn greedy_closest(
        &self,
        ds: &Dataset,
        query: &[f32],
        mut cur: u32,
        mut cur_dist: f64,
        level: usize,
    ) -> (u32, f64) {
        loop {
            let mut improved = false;
            for &nb in self.neighbors(cur, level) {
                let d = sq_dist(query, ds.vector(nb));
                if d < cur_dist {
                    cur = nb;
                    cur_dist = d;
                    improved = true;
                }
            }
            if !improved {
                return (cur, cur_dist);
            }
        }
    }

    /// Bounded beam search over one layer, used during construction.
    /// Returns up to `ef` results ascending by `(dist, id)`.
    #[allow(clippy::too_many_arguments)]
    fn search_layer(
        &self,
        ds: &Dataset,
        query: &[f32],
        entries: &[Scored],
        ef: usize,
        level: usize,
        visited: &mut [bool],
        touched: &mut Vec<u32>,
    ) -> Vec<Scored> {
        let mut candidates: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        let mut results: BinaryHeap<Scored> = BinaryHeap::new();
        for &e in entries {
            if !visited[e.id as usize] {
                visited[e.id as usize] = true;
                touched.push(e.id);
                candidates.push(Reverse(e));
                results.push(e);
                if results.len() > ef {
                    results.pop();
                }
            }
        }
        while let Some(Reverse(cand)) = candidates.pop() {
            let worst = results.peek().map(|s| s.dist).unwrap_or(f64::INFINITY);
            if results.len() == ef && cand.dist >= worst {
                break;
            }
            for &nb in self.neighbors(cand.id, level) {
                if visited[nb as usize] {
                    continue;
                }
                visited[nb as usize] = true;
                touched.push(nb);
                let d = sq_dist(query, ds.vector(nb));
                let worst = results.peek().map(|s| s.dist).unwrap_or(f64::INFINITY);
                if results.len() < ef || d < worst {
                    let entry = Scored { dist: d, id: nb };
                    candidates.push(Reverse(entry));
                    results.push(entry);
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out = results.into_vec();
        out.sort();
        out
    }
}

/// Builds an index over the dataset. Construction is single-threaded and
/// fully determined by `(dataset, params)`: node levels come from a seeded
/// geometric draw with scale `1 / ln m`, nodes are inserted in dataset
/// order, and all tie-breaks are by id.
///
/// # Errors
///
/// Rejects an empty dataset, `m < 2` and `ef_construction == 0`.
pub fn build_index(ds: &Dataset, params: &BuildParams) -> Result<HnswIndex> {
    if ds.is_empty() {
        return Err(SaxError::invalid_input("cannot index an empty dataset"));
    }
    if params.m < 2 {
        return Err(SaxError::invalid_input("m must be at least 2"));
    }
    if params.ef_construction == 0 {
        return Err(SaxError::invalid_input("ef_construction must be positive"));
    }
    let count = ds.len();
    let level_scale = 1.0 / (params.m as f64).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let levels: Vec<usize> = (0..count)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (-u.ln() * level_scale).floor() as usize
        })
        .collect();

    let mut index = HnswIndex {
        dim: ds.dim(),
        m: params.m,
        ef_construction: params.ef_construction,
        build_seed: params.seed,
        level_scale,
        entry_point: 0,
        links: vec![vec![Vec::new(); levels[0] + 1]],
    };
    let mut max_level = levels[0];
    let mut visited = vec![false; count];
    let mut touched: Vec<u32> = Vec::new();

    for id in 1..count as u32 {
        let level = levels[id as usize];
        index.links.push(vec![Vec::new(); level + 1]);
        let query = ds.vector(id);

        let entry = index.entry_point;
        let mut cur = entry;
        let mut cur_dist = sq_dist(query, ds.vector(entry));
        let mut lv = max_level;
        while lv > level {
            let (c, d) = index.greedy_closest(ds, query, cur, cur_dist, lv);
            cur = c;
            cur_dist = d;
            lv -= 1;
        }

        let mut entries = vec![Scored {
            dist: cur_dist,
            id: cur,
        }];
        for l in (0..=level.min(max_level)).rev() {
            let found =
                index.search_layer(ds, query, &entries, params.ef_construction, l, &mut visited, &mut touched);
            for &t in &touched {
                visited[t as usize] = false;
            }
            touched.clear();
            let cap = if l == 0 { 2 * params.m } else { params.m };
            let selected = select_neighbors(ds, &found, params.m);
            for &nb in &selected {
                index.links[id as usize][l].push(nb);
                index.links[nb as usize][l].push(id);
                if index.links[nb as usize][l].len() > cap {
                    let base = ds.vector(nb);
                    let mut cands: Vec<Scored> = index.links[nb as usize][l]
                        .iter()
                        .map(|&x| Scored {
                            dist: sq_dist(base, ds.vector(x)),
                            id: x,
                        })
                        .collect();
                    cands.sort();
                    index.links[nb as usize][l] = select_neighbors(ds, &cands, cap);
                }
            }
            entries = found;
        }

        if level > max_level {
            max_level = level;
            index.entry_point = id;
        }
    }

    debug_assert!(index.validate().is_ok());
    Ok(index)
}

/// Diversity-pruning neighbor selection: scanning candidates ascending by
/// distance, keep one only while it is strictly closer to the base point
/// than to every neighbor already kept, up to `limit`.
fn select_neighbors(ds: &Dataset, cands: &[Scored], limit: usize) -> Vec<u32> {
    let mut kept: Vec<Scored> = Vec::with_capacity(limit);
    for &c in cands {
        if kept.len() == limit {
            break;
        }
        let dominated = kept
            .iter()
            .any(|s| sq_dist(ds.vector(c.id), ds.vector(s.id)) <= c.dist);
        if !dominated {
            kept.push(c);
        }
    }
    kept.into_iter().map(|s| s.id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ann::dataset::recall;
    use crate::ann::search::{search_natural, SearchParams};

    fn small_dataset(count: usize, dim: usize, seed: u64) -> Dataset {
        Dataset::generate_gaussian(count, dim, seed, false).unwrap()
    }

    #[test]
    fn singleton_index_has_entry_zero_and_no_links() {
        let ds = small_dataset(1, 8, 5);
        let idx = build_index(&ds, &BuildParams::default()).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.entry_point(), 0);
        for level in 0..=idx.level_of(0) {
            assert!(idx.neighbors(0, level).is_empty());
        }
    }

    #[test]
    fn build_is_deterministic() {
        let ds = small_dataset(300, 16, 7);
        let params = BuildParams {
            m: 8,
            ef_construction: 60,
            seed: 13,
        };
        let a = build_index(&ds, &params).unwrap();
        let b = build_index(&ds, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degree_caps_hold_on_every_layer() {
        let ds = small_dataset(500, 8, 21);
        let params = BuildParams {
            m: 6,
            ef_construction: 40,
            seed: 3,
        };
        let idx = build_index(&ds, &params).unwrap();
        for id in 0..idx.len() as u32 {
            for level in 0..=idx.level_of(id) {
                let cap = if level == 0 { 12 } else { 6 };
                assert!(idx.neighbors(id, level).len() <= cap);
            }
        }
        idx.validate().unwrap();
    }

    #[test]
    fn level_zero_graph_is_connected() {
        let ds = small_dataset(400, 8, 2);
        let idx = build_index(&ds, &BuildParams::default()).unwrap();
        let mut seen = vec![false; idx.len()];
        let mut stack = vec![idx.entry_point()];
        seen[idx.entry_point() as usize] = true;
        while let Some(node) = stack.pop() {
            for &nb in idx.neighbors(node, 0) {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    stack.push(nb);
                }
            }
        }
        assert!(seen.iter().all(|&s| s), "level 0 must reach every node");
    }

    #[test]
    fn entry_point_sits_on_the_top_layer() {
        let ds = small_dataset(600, 8, 17);
        let idx = build_index(&ds, &BuildParams::default()).unwrap();
        let top = (0..idx.len() as u32).map(|id| idx.level_of(id)).max().unwrap();
        assert_eq!(idx.level_of(idx.entry_point()), top);
    }

    #[test]
    fn rejects_bad_build_arguments() {
        let ds = small_dataset(10, 4, 1);
        assert!(build_index(
            &ds,
            &BuildParams {
                m: 1,
                ef_construction: 10,
                seed: 0
            }
        )
        .is_err());
        assert!(build_index(
            &ds,
            &BuildParams {
                m: 4,
                ef_construction: 0,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn thousand_point_benchmark_reaches_high_recall() {
        let ds = small_dataset(1000, 64, 101);
        let params = BuildParams {
            m: 16,
            ef_construction: 100,
            seed: 9,
        };
        let idx = build_index(&ds, &params).unwrap();
        let queries = Dataset::generate_gaussian(100, 64, 555, false).unwrap();
        let sp = SearchParams {
            ef: 200,
            k: 10,
            ..SearchParams::default()
        };
        let mut total = 0.0;
        for qid in 0..queries.len() as u32 {
            let q = queries.vector(qid);
            let oracle: Vec<u32> = ds
                .brute_force_topk(q, 10)
                .unwrap()
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            let trace = search_natural(&idx, &ds, q, &sp).unwrap();
            let got: Vec<u32> = trace.final_topk.iter().map(|(id, _)| *id).collect();
            total += recall(&got, &oracle);
        }
        let mean = total / queries.len() as f64;
        assert!(mean >= 0.99, "mean recall {mean} below 0.99");
    }
}
