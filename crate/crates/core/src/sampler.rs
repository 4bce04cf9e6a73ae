//! Seed-centered subgraph sampling: a temporally causal breadth-first stage
//! followed by similarity-ranked pruning of nodes beyond the first hop.

use std::collections::{HashMap, HashSet};

use gelgt_numcore::Tensor;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::relstore::RelGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub max_hop: usize,
    pub stage1_budget: usize,
    pub stage2_keep: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            max_hop: 2,
            stage1_budget: 300,
            stage2_keep: 200,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_hop == 0 {
            return Err(CoreError::Config("max_hop must be at least 1".into()));
        }
        if self.stage1_budget == 0 {
            return Err(CoreError::Config("stage1_budget must be positive".into()));
        }
        if self.stage2_keep > self.stage1_budget {
            return Err(CoreError::Config(
                "stage2_keep must not exceed stage1_budget".into(),
            ));
        }
        Ok(())
    }
}

/// How the first stage picks candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1 {
    /// Breadth-first, ascending node id, truncated at the budget.
    Bfs,
    /// Uniform choice from every admissible node within `max_hop`.
    Random { run_seed: u64 },
}

/// Stage-1 output: seed first, then nodes in discovery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidates {
    pub nodes: Vec<usize>,
    pub hops: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledSubgraph {
    /// Global ids: seed, then hop 1 ascending, then hop 2 ascending, ...
    pub nodes: Vec<usize>,
    pub hop: Vec<usize>,
    /// `seed_time − τ` in seconds; `+∞` for static rows.
    pub delta_t: Vec<f64>,
    /// Undirected induced edges `(i, j)` with `i < j`, local indices.
    pub edges: Vec<(usize, usize)>,
    pub seed_time: i64,
}

impl SampledSubgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Symmetric neighbor lists over local indices.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    pub fn delta_days(&self) -> Vec<f64> {
        self.delta_t.iter().map(|s| s / 86_400.0).collect()
    }
}

/// Breadth-first expansion from `seed` that only admits nodes strictly older
/// than `seed_time` (or static). Each frontier is visited in ascending id
/// order; collection stops once `stage1_budget` nodes (seed included) are held.
pub fn structural_sample(
    graph: &RelGraph,
    seed: usize,
    seed_time: i64,
    config: &SamplingConfig,
) -> Candidates {
    let mut out = Candidates {
        nodes: vec![seed],
        hops: vec![0],
    };
    let mut visited = HashSet::from([seed]);
    let mut frontier = vec![seed];
    for hop in 1..=config.max_hop {
        let next = next_frontier(graph, &frontier, &mut visited, seed_time);
        let mut kept = Vec::with_capacity(next.len());
        for v in next {
            if out.nodes.len() >= config.stage1_budget {
                return out;
            }
            out.nodes.push(v);
            out.hops.push(hop);
            kept.push(v);
        }
        if kept.is_empty() {
            break;
        }
        frontier = kept;
    }
    out
}

fn next_frontier(
    graph: &RelGraph,
    frontier: &[usize],
    visited: &mut HashSet<usize>,
    seed_time: i64,
) -> Vec<usize> {
    let mut next: Vec<usize> = frontier
        .iter()
        .flat_map(|&u| graph.all_neighbors(u).iter().copied())
        .filter(|&v| !visited.contains(&v) && graph.is_before(v, seed_time))
        .collect();
    next.sort_unstable();
    next.dedup();
    visited.extend(next.iter().copied());
    next
}

/// Uniform selection of `stage1_budget − 1` nodes from the full admissible
/// neighborhood within `max_hop`, seeded by the run seed and the seed node.
pub fn random_sample(
    graph: &RelGraph,
    seed: usize,
    seed_time: i64,
    config: &SamplingConfig,
    run_seed: u64,
) -> Candidates {
    let mut pool: Vec<(usize, usize)> = Vec::new();
    let mut visited = HashSet::from([seed]);
    let mut frontier = vec![seed];
    for hop in 1..=config.max_hop {
        let next = next_frontier(graph, &frontier, &mut visited, seed_time);
        if next.is_empty() {
            break;
        }
        pool.extend(next.iter().map(|&v| (hop, v)));
        frontier = next;
    }
    let room = config.stage1_budget.saturating_sub(1);
    if pool.len() > room {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(run_seed ^ splitmix(seed as u64)));
        let mut picked: Vec<(usize, usize)> = index::sample(&mut rng, pool.len(), room)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        pool = picked;
    }
    let mut out = Candidates {
        nodes: vec![seed],
        hops: vec![0],
    };
    for (hop, v) in pool {
        out.nodes.push(v);
        out.hops.push(hop);
    }
    out
}

/// SplitMix64 finalizer; a cheap, well-mixed integer hash.
pub fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn semantic_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CoreError::Data(format!(
            "similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Keeps the seed and every hop-1 candidate, then admits deeper candidates
/// by descending similarity to the seed (ties: ascending id) until
/// `stage2_keep` nodes are held. `embeddings` is indexed by global node id.
pub fn semantic_refine(
    graph: &RelGraph,
    candidates: &Candidates,
    embeddings: &Tensor,
    seed_time: i64,
    config: &SamplingConfig,
) -> Result<SampledSubgraph> {
    let seed = candidates.nodes[0];
    let mut kept: Vec<(usize, usize)> = Vec::with_capacity(candidates.nodes.len());
    let mut deeper = Vec::new();
    for (&v, &h) in candidates.nodes.iter().zip(&candidates.hops) {
        if h <= 1 {
            kept.push((h, v));
        } else {
            deeper.push((h, v));
        }
    }
    let room = config.stage2_keep.saturating_sub(kept.len());
    if deeper.len() > room {
        let s = embeddings.row(seed);
        let mut scored = Vec::with_capacity(deeper.len());
        for &(h, v) in &deeper {
            scored.push((semantic_similarity(s, embeddings.row(v))?, v, h));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        deeper = scored.into_iter().take(room).map(|(_, v, h)| (h, v)).collect();
    }
    kept.extend(deeper);
    Ok(assemble(graph, kept, seed_time))
}

/// The stage-1 candidates as a subgraph, with no pruning.
pub fn without_refinement(graph: &RelGraph, candidates: &Candidates, seed_time: i64) -> SampledSubgraph {
    let kept = candidates
        .nodes
        .iter()
        .zip(&candidates.hops)
        .map(|(&v, &h)| (h, v))
        .collect();
    assemble(graph, kept, seed_time)
}

fn assemble(graph: &RelGraph, mut kept: Vec<(usize, usize)>, seed_time: i64) -> SampledSubgraph {
    let seed = kept[0].1;
    kept[1..].sort_unstable();
    let nodes: Vec<usize> = kept.iter().map(|&(_, v)| v).collect();
    let hop: Vec<usize> = kept.iter().map(|&(h, _)| h).collect();
    let delta_t: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == 0 {
                return 0.0;
            }
            match graph.node_time[v] {
                Some(t) => {
                    assert!(t < seed_time, "sampled node {v} at {t} is not before the seed time {seed_time}");
                    (seed_time - t) as f64
                }
                None => f64::INFINITY,
            }
        })
        .collect();
    debug_assert_eq!(nodes[0], seed);
    let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut edges = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        for u in graph.all_neighbors(v) {
            if let Some(&j) = local.get(u) {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
    }
    SampledSubgraph {
        nodes,
        hop,
        delta_t,
        edges,
        seed_time,
    }
}

/// Which stages run; the ablations switch them individually.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerMode {
    pub stage1: Stage1,
    pub refine: bool,
}

impl Default for SamplerMode {
    fn default() -> Self {
        Self {
            stage1: Stage1::Bfs,
            refine: true,
        }
    }
}

/// Both stages composed. Deterministic in its inputs.
pub fn sample(
    graph: &RelGraph,
    seed: usize,
    seed_time: i64,
    embeddings: &Tensor,
    config: &SamplingConfig,
    mode: SamplerMode,
) -> Result<SampledSubgraph> {
    let candidates = match mode.stage1 {
        Stage1::Bfs => structural_sample(graph, seed, seed_time, config),
        Stage1::Random { run_seed } => random_sample(graph, seed, seed_time, config, run_seed),
    };
    if mode.refine {
        semantic_refine(graph, &candidates, embeddings, seed_time, config)
    } else {
        Ok(without_refinement(graph, &candidates, seed_time))
    }
}
