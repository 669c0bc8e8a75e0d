use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::louvain::{louvain_communities, WeightedGraph};
use super::{finish_groups, DetectorConfig, BEHAVIORAL};
use crate::model::{EntityGroup, Evidence, TransactionGraph};
use crate::par;

const EPS: f64 = 1e-9;

/// Similarity graph over active addresses. `nodes[i]` is the transaction
/// graph id of similarity node `i`.
#[derive(Debug, Clone)]
pub struct SimilarityGraph {
    pub nodes: Vec<usize>,
    pub graph: WeightedGraph,
}

struct Activity {
    hours: [f64; 24],
    counterparties: Vec<usize>,
}

/// Weighted undirected graph combining direct transfers, hour-of-day
/// activity and shared counterparties. Only transfers worth at least
/// `min_amount_usd` count.
pub fn build_similarity_graph(graph: &TransactionGraph, config: &DetectorConfig) -> SimilarityGraph {
    let ts = graph.transfers();
    let qualifies = |i: usize| ts[i].usd_value >= config.min_amount_usd;

    let mut active = Vec::new();
    let mut activity = Vec::new();
    for u in 0..graph.node_count() {
        let mut hours = [0.0; 24];
        let mut any = false;
        let mut cps = BTreeSet::new();
        for &i in graph.node_transfers(u).iter().filter(|&&i| qualifies(i)) {
            any = true;
            hours[ts[i].hour_of_day()] += 1.0;
            let other = if ts[i].from == *graph.address(u) {
                &ts[i].to
            } else {
                &ts[i].from
            };
            let o = graph.node_id(other).expect("endpoint is a node");
            if o != u {
                cps.insert(o);
            }
        }
        if any {
            active.push(u);
            activity.push(Activity {
                hours,
                counterparties: cps.into_iter().collect(),
            });
        }
    }
    let local: HashMap<usize, usize> = active.iter().enumerate().map(|(i, &u)| (u, i)).collect();

    let mut direct: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (u, v, e) in graph.edges() {
        if u == v {
            continue;
        }
        let n = e.transfers.iter().filter(|&&i| qualifies(i)).count();
        if n > 0 {
            let (a, b) = (local[&u], local[&v]);
            *direct.entry((a.min(b), a.max(b))).or_default() += n;
        }
    }

    let w = config.similarity_weights;
    let threshold = config.similarity_edge_threshold;
    let candidates = indirect_candidates(&activity, config);

    let score = |a: usize, b: usize, count: usize| {
        let d = (count as f64 / 3.0).min(1.0);
        let t = cosine(&activity[a].hours, &activity[b].hours);
        let c = jaccard(&activity[a].counterparties, &activity[b].counterparties);
        w.direct * d + w.temporal * t + w.contract * c
    };

    let mut pairs: BTreeMap<(usize, usize), usize> = direct;
    for p in candidates {
        pairs.entry(p).or_insert(0);
    }
    let pairs: Vec<((usize, usize), usize)> = pairs.into_iter().collect();
    let scored = par::map_slice(&pairs, |&((a, b), count)| {
        let s = score(a, b, count);
        (count > 0 || s >= threshold - EPS).then_some((a, b, s))
    });
    let edges: Vec<(usize, usize, f64)> = scored.into_iter().flatten().collect();
    SimilarityGraph {
        graph: WeightedGraph::from_edges(active.len(), &edges),
        nodes: active,
    }
}

/// Pairs without direct transfers that could still reach the threshold.
/// Such a pair needs counterparty Jaccard of at least
/// (threshold - temporal weight) / contract weight.
fn indirect_candidates(activity: &[Activity], config: &DetectorConfig) -> Vec<(usize, usize)> {
    let w = config.similarity_weights;
    let threshold = config.similarity_edge_threshold;
    let n = activity.len();
    if w.temporal >= threshold - EPS {
        return (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    }
    if w.contract <= 0.0 {
        return Vec::new();
    }
    let j_min = (threshold - w.temporal) / w.contract;
    if j_min > 1.0 + EPS {
        return Vec::new();
    }
    let mut out = Vec::new();
    if j_min >= 1.0 - EPS {
        let mut buckets: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
        for (i, a) in activity.iter().enumerate() {
            buckets.entry(&a.counterparties).or_default().push(i);
        }
        for members in buckets.values() {
            for (k, &a) in members.iter().enumerate() {
                out.extend(members[k + 1..].iter().map(|&b| (a, b)));
            }
        }
        return out;
    }
    // Inverted index on counterparties, with the Jaccard size bound.
    let mut holders: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, a) in activity.iter().enumerate() {
        for c in &a.counterparties {
            holders.entry(*c).or_default().push(i);
        }
    }
    let mut seen = BTreeSet::new();
    for list in holders.values() {
        for (k, &a) in list.iter().enumerate() {
            for &b in &list[k + 1..] {
                let (la, lb) = (
                    activity[a].counterparties.len() as f64,
                    activity[b].counterparties.len() as f64,
                );
                if la.min(lb) >= j_min * la.max(lb) - EPS {
                    seen.insert((a, b));
                }
            }
        }
    }
    out.extend(seen);
    out
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Jaccard similarity of two sorted, deduplicated lists.
pub(crate) fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Louvain communities of the similarity graph, size two or more.
pub fn detect_behavioral_similarity(graph: &TransactionGraph, config: &DetectorConfig, seed: u64) -> Vec<EntityGroup> {
    let sim = build_similarity_graph(graph, config);
    if sim.nodes.is_empty() {
        return Vec::new();
    }
    let partition = louvain_communities(&sim.graph, config.louvain_resolution, seed).expect("graph is non-empty");
    let mut communities: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (i, &c) in partition.iter().enumerate() {
        communities.entry(c).or_default().insert(i);
    }
    let m2 = 2.0 * sim.graph.total_weight();
    let sets = communities
        .into_values()
        .filter(|m| m.len() >= 2)
        .map(|members| {
            let mut internal = 0.0;
            let mut degree = 0.0;
            for &u in &members {
                internal += 2.0 * sim.graph.self_loop(u);
                degree += sim.graph.degree(u);
                for &(v, w) in sim.graph.neighbors(u) {
                    if members.contains(&v) {
                        internal += w;
                    }
                }
            }
            let contribution = if m2 > 0.0 {
                internal / m2 - config.louvain_resolution * (degree / m2).powi(2)
            } else {
                0.0
            };
            let pairs = (members.len() * (members.len() - 1)) as f64;
            let density = (internal / pairs).clamp(0.0, 1.0);
            let detail = format!("modularity contribution {contribution:.6}");
            let ids = members.into_iter().map(|i| sim.nodes[i]).collect();
            (ids, Evidence::new(BEHAVIORAL, detail, density))
        })
        .collect();
    finish_groups(graph, sets)
}
