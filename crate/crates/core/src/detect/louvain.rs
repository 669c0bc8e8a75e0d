//! Louvain modularity optimisation with a seeded visiting order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DetectError;

const MIN_GAIN: f64 = 1e-12;

/// Undirected weighted graph. Parallel edges are summed; a self-loop of
/// weight w contributes 2w to its node's degree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    loops: Vec<f64>,
    total: f64,
}

impl WeightedGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(u, v, w) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) out of range for {n} nodes");
            assert!(w >= 0.0 && w.is_finite(), "edge weight must be finite and non-negative");
            *merged.entry((u.min(v), u.max(v))).or_default() += w;
        }
        let mut adj = vec![Vec::new(); n];
        let mut loops = vec![0.0; n];
        let mut total = 0.0;
        for ((u, v), w) in merged {
            total += w;
            if u == v {
                loops[u] += w;
            } else {
                adj[u].push((v, w));
                adj[v].push((u, w));
            }
        }
        adj.iter_mut().for_each(|a| a.sort_by_key(|&(v, _)| v));
        WeightedGraph { adj, loops, total }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }

    pub fn neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.adj[u]
    }

    pub fn self_loop(&self, u: usize) -> f64 {
        self.loops[u]
    }

    pub fn degree(&self, u: usize) -> f64 {
        2.0 * self.loops[u] + self.adj[u].iter().map(|&(_, w)| w).sum::<f64>()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let loops = self
            .loops
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(u, &w)| (u, u, w));
        let rest = self
            .adj
            .iter()
            .enumerate()
            .flat_map(|(u, a)| a.iter().filter(move |&&(v, _)| v > u).map(move |&(v, w)| (u, v, w)));
        loops.chain(rest)
    }
}

/// Newman modularity of `partition` (community label per node).
pub fn modularity(graph: &WeightedGraph, partition: &[usize], resolution: f64) -> f64 {
    let m2 = 2.0 * graph.total;
    if m2 == 0.0 {
        return 0.0;
    }
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut tot: BTreeMap<usize, f64> = BTreeMap::new();
    for u in 0..graph.node_count() {
        *tot.entry(partition[u]).or_default() += graph.degree(u);
        *internal.entry(partition[u]).or_default() += 2.0 * graph.loops[u];
        for &(v, w) in &graph.adj[u] {
            if partition[v] == partition[u] {
                *internal.entry(partition[u]).or_default() += w;
            }
        }
    }
    tot.iter()
        .map(|(c, &t)| internal.get(c).copied().unwrap_or(0.0) / m2 - resolution * (t / m2).powi(2))
        .sum()
}

/// Community label per node, numbered by first appearance.
pub fn louvain_communities(graph: &WeightedGraph, resolution: f64, seed: u64) -> Result<Vec<usize>, DetectError> {
    let n = graph.node_count();
    if n == 0 {
        return Err(DetectError::EmptyGraph);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..n).collect();
    if graph.total == 0.0 {
        return Ok(membership);
    }

    let mut level = graph.clone();
    loop {
        let (local, moved) = one_level(&level, resolution, &mut rng);
        if !moved {
            break;
        }
        let (labels, count) = renumber(&local);
        for m in membership.iter_mut() {
            *m = labels[*m];
        }
        level = aggregate(&level, &labels, count);
    }
    Ok(renumber(&membership).0)
}

fn one_level(graph: &WeightedGraph, resolution: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = graph.node_count();
    let m2 = 2.0 * graph.total;
    let degree: Vec<f64> = (0..n).map(|u| graph.degree(u)).collect();
    let mut community: Vec<usize> = (0..n).collect();
    let mut tot = degree.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut any_move = false;
    let mut links: BTreeMap<usize, f64> = BTreeMap::new();
    loop {
        let mut moved = false;
        for &u in &order {
            let own = community[u];
            links.clear();
            links.insert(own, 0.0);
            for &(v, w) in &graph.adj[u] {
                *links.entry(community[v]).or_default() += w;
            }
            tot[own] -= degree[u];
            let gain = |c: usize, w: f64| w - resolution * tot[c] * degree[u] / m2;
            let mut best = own;
            let mut best_gain = gain(own, links[&own]);
            for (&c, &w) in &links {
                let g = gain(c, w);
                if g > best_gain + MIN_GAIN {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += degree[u];
            if best != own {
                community[u] = best;
                moved = true;
                any_move = true;
            }
        }
        if !moved {
            break;
        }
    }
    (community, any_move)
}

fn renumber(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn aggregate(graph: &WeightedGraph, labels: &[usize], count: usize) -> WeightedGraph {
    let edges: Vec<(usize, usize, f64)> = graph.edges().map(|(u, v, w)| (labels[u], labels[v], w)).collect();
    WeightedGraph::from_edges(count, &edges)
}
