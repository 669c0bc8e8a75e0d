use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::dbscan::{dbscan, NOISE};
use super::iforest::{outlier_count, ranked_outliers, IsolationForest};
use super::linkage::linkage_scores;
use super::{merge_overlapping, ClusterConfig, ClusterError, FeatureTable, SuperGroup, SCHEDULE_SLOTS};
use crate::model::{Address, EntityGroup, Evidence, GroupFlag, GroupSet, TransactionGraph};
use crate::par;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineStats {
    pub input_groups: usize,
    pub super_groups: usize,
    pub super_group_addresses: usize,
    pub dbscan_noise: usize,
    pub outliers_removed: usize,
    pub rejected_groups: usize,
    pub final_groups: usize,
    pub final_addresses: usize,
    pub singleton_count: usize,
}

struct Refined {
    groups: Vec<EntityGroup>,
    noise: usize,
    outliers: usize,
    rejected: usize,
}

/// Merges overlapping detector groups, splits each merged group into DBSCAN
/// clusters over the activity-schedule view (noise dropped), removes
/// isolation-forest candidates that both score above the gate and sit away
/// from the cluster median, and keeps groups
/// whose linkage probability reaches the threshold.
pub fn merge_and_refine(
    detector_groups: &[EntityGroup],
    features: &FeatureTable,
    graph: &TransactionGraph,
    config: &ClusterConfig,
    seed: u64,
) -> Result<(GroupSet, RefineStats), ClusterError> {
    config.validate()?;
    let supers = merge_overlapping(detector_groups);
    let span = graph.time_range().map_or(0, |(a, b)| b - a);

    let indexed: Vec<(usize, &SuperGroup)> = supers.iter().enumerate().collect();
    let refined = par::map_slice(&indexed, |&(i, sg)| {
        let group_seed = seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        refine_one(sg, detector_groups, features, graph, config, group_seed, span)
    });

    let mut stats = RefineStats {
        input_groups: detector_groups.len(),
        super_groups: supers.len(),
        super_group_addresses: supers.iter().map(|s| s.members.len()).sum(),
        ..Default::default()
    };
    let mut groups = Vec::new();
    for r in refined {
        stats.dbscan_noise += r.noise;
        stats.outliers_removed += r.outliers;
        stats.rejected_groups += r.rejected;
        groups.extend(r.groups);
    }
    groups.sort_by(|a, b| a.members.cmp(&b.members));
    for (i, g) in groups.iter_mut().enumerate() {
        g.group_id = i as u64;
    }
    let universe: BTreeSet<Address> = features.addresses().iter().cloned().collect();
    let set = GroupSet::new(groups, universe).expect("refined groups are disjoint subsets of the universe");
    stats.final_groups = set.groups().len();
    stats.final_addresses = set.grouped_address_count();
    stats.singleton_count = set.singleton_count();
    Ok((set, stats))
}

fn refine_one(
    sg: &SuperGroup,
    detector_groups: &[EntityGroup],
    features: &FeatureTable,
    graph: &TransactionGraph,
    config: &ClusterConfig,
    seed: u64,
    span: i64,
) -> Refined {
    let members: Vec<&Address> = sg.members.iter().collect();
    let schedule = |a: &Address| {
        features
            .view(a, &SCHEDULE_SLOTS)
            .unwrap_or_else(|| vec![0.0; SCHEDULE_SLOTS.len()])
    };
    let points: Vec<Vec<f64>> = members.iter().map(|a| schedule(a)).collect();
    let labels = dbscan(&points, config.eps, config.min_pts).expect("super-groups are non-empty");

    let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != NOISE {
            clusters.entry(l).or_default().push(i);
        }
    }
    let mut out = Refined {
        groups: Vec::new(),
        noise: labels.iter().filter(|&&l| l == NOISE).count(),
        outliers: 0,
        rejected: 0,
    };
    let provenance: Vec<&EntityGroup> = sg.sources.iter().map(|&i| &detector_groups[i]).collect();

    for (label, ids) in clusters {
        let pts: Vec<Vec<f64>> = ids.iter().map(|&i| points[i].clone()).collect();
        let forest =
            IsolationForest::fit(&pts, config.trees, seed.wrapping_add(label as u64)).expect("cluster is non-empty");
        let scores = forest.scores(&pts);
        let candidates = ranked_outliers(&scores, outlier_count(config.contamination, pts.len()));
        let center = median_point(&pts);
        let reach = config.outlier_distance_gate * config.eps;
        let dropped: BTreeSet<usize> = candidates
            .into_iter()
            .filter(|&k| scores[k] > config.outlier_score_gate && distance(&pts[k], &center) > reach)
            .collect();
        out.outliers += dropped.len();
        let kept: Vec<&Address> = ids
            .iter()
            .enumerate()
            .filter(|(k, _)| !dropped.contains(k))
            .map(|(_, &i)| members[i])
            .collect();
        if kept.len() < 2 {
            out.rejected += 1;
            continue;
        }
        let scores = linkage_scores(&kept, &provenance, features, graph).expect("at least two members");
        let probability = scores.combine(&config.linkage_weights);
        if probability < config.linkage_threshold {
            out.rejected += 1;
            continue;
        }
        let member_set: BTreeSet<Address> = kept.into_iter().cloned().collect();
        let mut evidence = summarize_evidence(&provenance, &member_set);
        evidence.push(Evidence::new(
            "linkage",
            format!(
                "pattern {:.4} similarity {:.4} flow {:.4} temporal {:.4}",
                scores.pattern, scores.similarity, scores.flow, scores.temporal
            ),
            probability,
        ));
        let mut group = EntityGroup::new(member_set, evidence);
        group.linkage_probability = probability;
        if is_market_maker(&group, graph, config, span) {
            group.flags.insert(GroupFlag::SuspectedMarketMaker);
        }
        out.groups.push(group);
    }
    out
}

fn median_point(points: &[Vec<f64>]) -> Vec<f64> {
    let dims = points.first().map_or(0, Vec::len);
    (0..dims)
        .map(|d| {
            let mut col: Vec<f64> = points.iter().map(|p| p[d]).collect();
            col.sort_by(f64::total_cmp);
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / 2.0
            }
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// One entry per (detector, rule) among the candidate groups that overlap
/// the final members.
fn summarize_evidence(provenance: &[&EntityGroup], members: &BTreeSet<Address>) -> Vec<Evidence> {
    let mut tally: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
    for g in provenance.iter().filter(|g| !g.members.is_disjoint(members)) {
        for e in &g.evidence {
            let rule = e.detail.split_whitespace().next().unwrap_or("").to_string();
            let entry = tally.entry((e.detector.clone(), rule)).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 = entry.1.max(e.weight);
        }
    }
    tally
        .into_iter()
        .map(|((detector, rule), (n, w))| Evidence::new(detector, format!("{rule}: {n} candidate groups"), w))
        .collect()
}

fn is_market_maker(group: &EntityGroup, graph: &TransactionGraph, config: &ClusterConfig, span: i64) -> bool {
    let mut ids = BTreeSet::new();
    for a in &group.members {
        if let Some(u) = graph.node_id(a) {
            ids.extend(graph.node_transfers(u).iter().copied());
        }
    }
    if ids.len() < config.market_maker_min_transfers || ids.is_empty() {
        return false;
    }
    let ts = graph.transfers();
    let first = ids.iter().map(|&i| ts[i].timestamp).min().unwrap_or(0);
    let last = ids.iter().map(|&i| ts[i].timestamp).max().unwrap_or(0);
    span > 0 && (last - first) as f64 >= config.market_maker_min_span * span as f64
}
