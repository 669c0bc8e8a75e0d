use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ClusterError;
use crate::par;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const MAX_SAMPLE: usize = 256;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        size: usize,
    },
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

/// Isolation forest over dense points. Tree `t` draws from ChaCha8 stream
/// `t` of the seed, so the forest is the same whether trees are built in
/// parallel or not.
#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<Tree>,
    sample_size: usize,
}

/// Expected path length of an unsuccessful BST search among `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

impl IsolationForest {
    pub fn fit(points: &[Vec<f64>], trees: usize, seed: u64) -> Result<Self, ClusterError> {
        if points.is_empty() {
            return Err(ClusterError::EmptyInput);
        }
        let sample_size = points.len().min(MAX_SAMPLE);
        let height_limit = (sample_size as f64).log2().ceil() as usize;
        let trees = par::map_range(trees, |t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let ids = sample(&mut rng, points.len(), sample_size).into_vec();
            let mut tree = Tree { nodes: Vec::new() };
            grow(&mut tree, points, ids, 0, height_limit, &mut rng);
            tree
        });
        Ok(IsolationForest { trees, sample_size })
    }

    /// Mean path length of `x` over all trees.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let total: f64 = self.trees.iter().map(|t| tree_path(t, x)).sum();
        total / self.trees.len() as f64
    }

    /// Anomaly score in (0, 1]; higher is more anomalous.
    pub fn score(&self, x: &[f64]) -> f64 {
        let c = average_path_length(self.sample_size);
        if c == 0.0 {
            return 0.5;
        }
        2f64.powf(-self.path_length(x) / c)
    }

    pub fn scores(&self, points: &[Vec<f64>]) -> Vec<f64> {
        par::map_slice(points, |p| self.score(p))
    }
}

fn grow(
    tree: &mut Tree,
    points: &[Vec<f64>],
    ids: Vec<usize>,
    depth: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let me = tree.nodes.len();
    tree.nodes.push(Node::Leaf { size: ids.len() });
    if ids.len() <= 1 || depth >= limit {
        return me;
    }
    let dims = points[ids[0]].len();
    let spread: Vec<(usize, f64, f64)> = (0..dims)
        .filter_map(|f| {
            let (lo, hi) = ids
                .iter()
                .map(|&i| points[i][f])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            (hi > lo).then_some((f, lo, hi))
        })
        .collect();
    if spread.is_empty() {
        return me;
    }
    let (feature, lo, hi) = spread[rng.random_range(0..spread.len())];
    let value = rng.random_range(lo..hi);
    let (left_ids, right_ids): (Vec<usize>, Vec<usize>) = ids.into_iter().partition(|&i| points[i][feature] < value);
    let left = grow(tree, points, left_ids, depth + 1, limit, rng);
    let right = grow(tree, points, right_ids, depth + 1, limit, rng);
    tree.nodes[me] = Node::Split {
        feature,
        value,
        left,
        right,
    };
    me
}

fn tree_path(tree: &Tree, x: &[f64]) -> f64 {
    let mut node = 0;
    let mut depth = 0.0;
    loop {
        match tree.nodes[node] {
            Node::Leaf { size } => return depth + average_path_length(size),
            Node::Split {
                feature,
                value,
                left,
                right,
            } => {
                node = if x[feature] < value { left } else { right };
                depth += 1.0;
            }
        }
    }
}

/// Number of points removed at a contamination rate: ⌈c·n⌉, guarded
/// against floating error in the product.
pub(crate) fn outlier_count(contamination: f64, n: usize) -> usize {
    ((contamination * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Indices kept after removing the ⌈contamination·n⌉ highest-scoring points
/// (ties broken towards removing the lower index).
pub fn isolation_forest_filter(
    points: &[Vec<f64>],
    contamination: f64,
    trees: usize,
    seed: u64,
) -> Result<Vec<usize>, ClusterError> {
    let forest = IsolationForest::fit(points, trees, seed)?;
    let scores = forest.scores(points);
    let removed = ranked_outliers(&scores, outlier_count(contamination, points.len()));
    Ok((0..points.len()).filter(|i| !removed.contains(i)).collect())
}

/// The `k` highest scores, as indices sorted ascending.
pub(crate) fn ranked_outliers(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out: Vec<usize> = order.into_iter().take(k).collect();
    out.sort_unstable();
    out
}
