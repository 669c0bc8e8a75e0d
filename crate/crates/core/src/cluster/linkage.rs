use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ClusterError, FeatureTable, LinkageWeights};
use crate::detect::cosine;
use crate::model::{Address, EntityGroup, TransactionGraph};
use crate::par;

/// The four sub-scores of the linkage model, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageScores {
    /// Share of member pairs that appear together in some detector group.
    pub pattern: f64,
    /// Mean pairwise feature cosine, each pair clipped at 0.
    pub similarity: f64,
    /// Share of member pairs joined by a directed path of at most two hops
    /// inside the group.
    pub flow: f64,
    /// Mean pairwise cosine of hour-of-day transfer counts.
    pub temporal: f64,
}

impl LinkageScores {
    pub fn combine(&self, w: &LinkageWeights) -> f64 {
        let p =
            w.pattern * self.pattern + w.similarity * self.similarity + w.flow * self.flow + w.temporal * self.temporal;
        p.clamp(0.0, 1.0)
    }
}

/// Linkage probability of `group`. `detector_groups` supplies the pattern
/// evidence; when empty, the group counts as its own evidence.
pub fn linkage_probability(
    group: &EntityGroup,
    detector_groups: &[EntityGroup],
    features: &FeatureTable,
    graph: &TransactionGraph,
    weights: &LinkageWeights,
) -> Result<f64, ClusterError> {
    let members: Vec<&Address> = group.members.iter().collect();
    let provenance: Vec<&EntityGroup> = if detector_groups.is_empty() {
        vec![group]
    } else {
        detector_groups.iter().collect()
    };
    Ok(linkage_scores(&members, &provenance, features, graph)?.combine(weights))
}

pub fn linkage_scores(
    members: &[&Address],
    provenance: &[&EntityGroup],
    features: &FeatureTable,
    graph: &TransactionGraph,
) -> Result<LinkageScores, ClusterError> {
    let k = members.len();
    if k < 2 {
        return Err(ClusterError::SingletonGroup);
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let local: HashMap<&Address, usize> = members.iter().enumerate().map(|(i, a)| (*a, i)).collect();

    let mut sources: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (gi, g) in provenance.iter().enumerate() {
        for a in &g.members {
            if let Some(&i) = local.get(a) {
                sources[i].push(gi);
            }
        }
    }

    let zero = [0.0; 45];
    let zero_hours = [0.0; 24];
    let vecs: Vec<&[f64]> = members.iter().map(|a| features.get(a).unwrap_or(&zero)).collect();
    let hours: Vec<&[f64; 24]> = members
        .iter()
        .map(|a| features.hours(a).unwrap_or(&zero_hours))
        .collect();

    let rows = par::map_range(k, |i| {
        let mut shared = 0usize;
        let mut sim = 0.0;
        let mut temporal = 0.0;
        for j in i + 1..k {
            if sources[i].iter().any(|s| sources[j].binary_search(s).is_ok()) {
                shared += 1;
            }
            sim += cosine(vecs[i], vecs[j]).max(0.0);
            temporal += cosine(&hours[i][..], &hours[j][..]).max(0.0);
        }
        (shared, sim, temporal)
    });
    let (shared, sim, temporal) = rows
        .into_iter()
        .fold((0usize, 0.0, 0.0), |acc, r| (acc.0 + r.0, acc.1 + r.1, acc.2 + r.2));

    Ok(LinkageScores {
        pattern: shared as f64 / pairs,
        similarity: (sim / pairs).clamp(0.0, 1.0),
        flow: flow_pairs(members, &local, graph) as f64 / pairs,
        temporal: (temporal / pairs).clamp(0.0, 1.0),
    })
}

fn flow_pairs(members: &[&Address], local: &HashMap<&Address, usize>, graph: &TransactionGraph) -> usize {
    let out: Vec<Vec<usize>> = members
        .iter()
        .map(|a| match graph.node_id(a) {
            Some(u) => graph
                .out_neighbors(u)
                .iter()
                .filter_map(|&v| local.get(graph.address(v)).copied())
                .collect(),
            None => Vec::new(),
        })
        .collect();
    let mut connected: HashSet<(usize, usize)> = HashSet::new();
    for a in 0..members.len() {
        for &b in &out[a] {
            connected.insert((a.min(b), a.max(b)));
            for &c in &out[b] {
                connected.insert((a.min(c), a.max(c)));
            }
        }
    }
    connected.iter().filter(|(a, b)| a != b).count()
}
