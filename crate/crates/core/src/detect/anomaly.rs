use std::collections::{BTreeMap, BTreeSet};

use super::{finish_groups, DetectorConfig, Dsu, ANOMALOUS};
use crate::model::{EntityGroup, Evidence, TransactionGraph};
use crate::par;

/// Identical-amount clusters, high-frequency pairs and circular trades.
/// Only transfers worth at least `anomaly_min_amount_usd` between distinct
/// addresses take part.
pub fn detect_anomalous_behavior(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<EntityGroup> {
    let mut sets = identical_amount_sets(graph, config);
    sets.extend(high_frequency_sets(graph, config));
    sets.extend(circular_sets(graph, config));
    finish_groups(graph, sets)
}

fn qualifying(graph: &TransactionGraph, config: &DetectorConfig, i: usize) -> bool {
    let t = &graph.transfers()[i];
    t.usd_value >= config.anomaly_min_amount_usd && t.from != t.to
}

fn within(a: u128, b: u128, tolerance: f64) -> bool {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (hi - lo) as f64 <= tolerance * hi as f64
}

/// Transfers sharing an address are linked when their amounts are adjacent
/// in sorted order and within `amount_identity_tolerance` of each other.
/// A linked cluster of at least `anomaly_min_tx` transfers groups all of
/// its endpoints; overlapping clusters merge.
fn identical_amount_sets(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<(BTreeSet<usize>, Evidence)> {
    let ts = graph.transfers();
    let mut links = Dsu::new(ts.len());
    for u in 0..graph.node_count() {
        let mut ids: Vec<usize> = graph
            .node_transfers(u)
            .iter()
            .copied()
            .filter(|&i| qualifying(graph, config, i))
            .collect();
        ids.sort_by(|&a, &b| ts[a].raw_amount.cmp(&ts[b].raw_amount).then(a.cmp(&b)));
        for w in ids.windows(2) {
            if within(
                ts[w[0]].raw_amount,
                ts[w[1]].raw_amount,
                config.amount_identity_tolerance,
            ) {
                links.union(w[0], w[1]);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..ts.len()).filter(|&i| qualifying(graph, config, i)) {
        clusters.entry(links.find(i)).or_default().push(i);
    }

    let mut nodes = Dsu::new(graph.node_count());
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut touched = BTreeSet::new();
    for cluster in clusters.values().filter(|c| c.len() >= config.anomaly_min_tx) {
        for &i in cluster {
            let u = graph.node_id(&ts[i].from).expect("node");
            let v = graph.node_id(&ts[i].to).expect("node");
            nodes.union(u, v);
            touched.extend([u, v]);
        }
        let root = graph.node_id(&ts[cluster[0]].from).expect("node");
        *counts.entry(root).or_default() += cluster.len();
    }
    let mut groups: BTreeMap<usize, (BTreeSet<usize>, usize)> = BTreeMap::new();
    for &u in &touched {
        groups.entry(nodes.find(u)).or_default().0.insert(u);
    }
    for (root, n) in counts {
        groups.get_mut(&nodes.find(root)).expect("root touched").1 += n;
    }
    groups
        .into_values()
        .map(|(members, n)| {
            let detail = format!("identical_amounts ({n} transfers)");
            (members, Evidence::new(ANOMALOUS, detail, 1.0))
        })
        .collect()
}

/// Pairs with `anomaly_min_tx` qualifying transfers inside one window.
fn high_frequency_sets(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<(BTreeSet<usize>, Evidence)> {
    let ts = graph.transfers();
    let mut times: BTreeMap<(usize, usize), Vec<i64>> = BTreeMap::new();
    for (u, v, e) in graph.edges() {
        if u == v {
            continue;
        }
        let entry = times.entry((u.min(v), u.max(v))).or_default();
        entry.extend(
            e.transfers
                .iter()
                .filter(|&&i| qualifying(graph, config, i))
                .map(|&i| ts[i].timestamp),
        );
    }
    let k = config.anomaly_min_tx;
    times
        .into_iter()
        .filter_map(|((u, v), mut stamps)| {
            stamps.sort_unstable();
            let hit = stamps.len() >= k
                && stamps
                    .windows(k)
                    .any(|w| w[k - 1] - w[0] <= config.chain_window_seconds);
            hit.then(|| {
                let detail = format!("high_frequency ({} transfers)", stamps.len());
                (BTreeSet::from([u, v]), Evidence::new(ANOMALOUS, detail, 1.0))
            })
        })
        .collect()
}

/// Directed edges carrying at least one qualifying transfer, as adjacency
/// lists. Amounts and first timestamps come from all transfers on the pair,
/// so the floor only decides which edges exist.
fn cycle_graph(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); graph.node_count()];
    for (u, v, e) in graph.edges() {
        if u != v && e.transfers.iter().any(|&i| qualifying(graph, config, i)) {
            adj[u].push(v);
        }
    }
    adj
}

fn edge_amount(graph: &TransactionGraph, u: usize, v: usize) -> (u128, i64) {
    let e = graph.edge(u, v).expect("cycle edge exists");
    let amount = e
        .transfers
        .iter()
        .map(|&i| graph.transfers()[i].raw_amount)
        .fold(0u128, u128::saturating_add);
    (amount, e.first_timestamp)
}

/// Whether a cycle (consecutive nodes, closing back to the first) returns
/// enough to its origin. The origin is the tail of the edge used first;
/// ties go to the smaller node id.
pub(crate) fn cycle_returns(graph: &TransactionGraph, cycle: &[usize], fraction: f64) -> bool {
    let k = cycle.len();
    let edges: Vec<(u128, i64)> = (0..k)
        .map(|i| edge_amount(graph, cycle[i], cycle[(i + 1) % k]))
        .collect();
    let origin = (0..k)
        .min_by_key(|&i| (edges[i].1, cycle[i]))
        .expect("cycle is non-empty");
    let leaving = edges[origin].0;
    let returning = edges[(origin + k - 1) % k].0;
    returning as f64 >= fraction * leaving as f64
}

/// Qualifying simple cycles, each rotated to start at its smallest node id,
/// sorted. Lengths run from 2 to `max_cycle_length`.
pub fn find_circular_cycles(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<Vec<usize>> {
    let adj = cycle_graph(graph, config);
    let scc = strongly_connected(&adj);
    let per_start = par::map_range(adj.len(), |s| {
        let mut found = Vec::new();
        let mut path = vec![s];
        let mut on_path = vec![false; adj.len()];
        on_path[s] = true;
        extend_cycles(
            &adj,
            &scc,
            s,
            &mut path,
            &mut on_path,
            config.max_cycle_length,
            &mut found,
        );
        found.retain(|c: &Vec<usize>| cycle_returns(graph, c, config.circular_return_fraction));
        found
    });
    let mut cycles: Vec<Vec<usize>> = per_start.into_iter().flatten().collect();
    cycles.sort();
    cycles
}

fn extend_cycles(
    adj: &[Vec<usize>],
    scc: &[usize],
    start: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    max_len: usize,
    found: &mut Vec<Vec<usize>>,
) {
    let last = *path.last().expect("path starts at start");
    for &next in &adj[last] {
        if next == start && path.len() >= 2 {
            found.push(path.clone());
        } else if next > start && !on_path[next] && scc[next] == scc[start] && path.len() < max_len {
            path.push(next);
            on_path[next] = true;
            extend_cycles(adj, scc, start, path, on_path, max_len, found);
            on_path[next] = false;
            path.pop();
        }
    }
}

/// Component id per node (iterative Tarjan).
fn strongly_connected(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work = vec![(root, 0usize)];
        while let Some(&mut (v, ref mut pos)) = work.last_mut() {
            if *pos == 0 && index[v] == usize::MAX {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == usize::MAX {
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                loop {
                    let w = stack.pop().expect("component on stack");
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}

fn circular_sets(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<(BTreeSet<usize>, Evidence)> {
    let cycles = find_circular_cycles(graph, config);
    let mut dsu = Dsu::new(graph.node_count());
    for c in &cycles {
        for w in c.windows(2) {
            dsu.union(w[0], w[1]);
        }
    }
    let mut groups: BTreeMap<usize, (BTreeSet<usize>, usize)> = BTreeMap::new();
    for c in &cycles {
        let entry = groups.entry(dsu.find(c[0])).or_default();
        entry.0.extend(c.iter().copied());
        entry.1 += 1;
    }
    groups
        .into_values()
        .map(|(members, n)| {
            let detail = format!("circular ({n} cycles)");
            (members, Evidence::new(ANOMALOUS, detail, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::test_util::member_sets;
    use crate::model::test_support::transfer;
    use crate::model::Transfer;
    use proptest::prelude::*;

    /// Every sequence of distinct nodes starting at its minimum, checked
    /// edge by edge against the transfer list.
    fn brute_cycles(ts: &[Transfer], graph: &TransactionGraph, cfg: &DetectorConfig) -> Vec<Vec<usize>> {
        let n = graph.node_count();
        let has_edge = |u: usize, v: usize| {
            ts.iter().any(|t| {
                t.from != t.to
                    && t.usd_value >= cfg.anomaly_min_amount_usd
                    && graph.node_id(&t.from) == Some(u)
                    && graph.node_id(&t.to) == Some(v)
            })
        };
        let amount = |u: usize, v: usize| -> (u128, i64) {
            let on: Vec<&Transfer> = ts
                .iter()
                .filter(|t| graph.node_id(&t.from) == Some(u) && graph.node_id(&t.to) == Some(v))
                .collect();
            (
                on.iter().map(|t| t.raw_amount).sum(),
                on.iter().map(|t| t.timestamp).min().unwrap(),
            )
        };
        let mut out = Vec::new();
        fn rec(seq: &mut Vec<usize>, n: usize, max: usize, out: &mut Vec<Vec<usize>>) {
            if seq.len() >= 2 {
                out.push(seq.clone());
            }
            if seq.len() == max {
                return;
            }
            for v in seq[0] + 1..n {
                if !seq.contains(&v) {
                    seq.push(v);
                    rec(seq, n, max, out);
                    seq.pop();
                }
            }
        }
        let mut seqs = Vec::new();
        for s in 0..n {
            rec(&mut vec![s], n, cfg.max_cycle_length, &mut seqs);
        }
        for seq in seqs {
            let k = seq.len();
            if !(0..k).all(|i| has_edge(seq[i], seq[(i + 1) % k])) {
                continue;
            }
            let edges: Vec<(u128, i64)> = (0..k).map(|i| amount(seq[i], seq[(i + 1) % k])).collect();
            let mut origin = 0;
            for i in 1..k {
                if (edges[i].1, seq[i]) < (edges[origin].1, seq[origin]) {
                    origin = i;
                }
            }
            let back = edges[(origin + k - 1) % k].0 as f64;
            if back >= cfg.circular_return_fraction * edges[origin].0 as f64 {
                out.push(seq);
            }
        }
        out.sort();
        out
    }

    #[test]
    fn hundred_billion_bounces_form_one_group() {
        let amt = 100_000_000_000u128;
        let hops = [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a"), ("a", "c"), ("b", "d")];
        let ts: Vec<Transfer> = hops
            .iter()
            .enumerate()
            .map(|(i, (f, t))| transfer(&format!("h{i}"), i as u64, f, t, amt, 50.0))
            .collect();
        let g = TransactionGraph::build(&ts);
        let sets = identical_amount_sets(&g, &DetectorConfig::default());
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].0.len(), 4);
    }

    #[test]
    fn ninety_seven_percent_cycle_detected() {
        let ts = vec![
            transfer("h1", 1, "a", "b", 100, 10.0),
            transfer("h2", 2, "b", "c", 99, 10.0),
            transfer("h3", 3, "c", "a", 97, 10.0),
        ];
        let g = TransactionGraph::build(&ts);
        let cfg = DetectorConfig::default();
        assert_eq!(find_circular_cycles(&g, &cfg), brute_cycles(&ts, &g, &cfg));
        let groups = detect_anomalous_behavior(&g, &cfg);
        assert_eq!(member_sets(&groups), vec![vec!["a", "b", "c"]]);
        assert!(groups[0].evidence[0].detail.starts_with("circular"));
    }

    #[test]
    fn leaky_cycle_rejected() {
        let ts = vec![
            transfer("h1", 1, "a", "b", 100, 10.0),
            transfer("h2", 2, "b", "c", 90, 10.0),
            transfer("h3", 3, "c", "a", 80, 10.0),
        ];
        let g = TransactionGraph::build(&ts);
        assert!(find_circular_cycles(&g, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn four_pair_transfers_below_threshold() {
        let ts: Vec<Transfer> = (0..4)
            .map(|i| transfer(&format!("h{i}"), i, "a", "b", 500, 20.0))
            .collect();
        let g = TransactionGraph::build(&ts);
        assert!(detect_anomalous_behavior(&g, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn five_pair_transfers_flag_both_rules() {
        let ts: Vec<Transfer> = (0..5)
            .map(|i| transfer(&format!("h{i}"), i, "a", "b", 500, 20.0))
            .collect();
        let g = TransactionGraph::build(&ts);
        let groups = detect_anomalous_behavior(&g, &DetectorConfig::default());
        let details: Vec<&str> = groups.iter().map(|g| g.evidence[0].detail.as_str()).collect();
        assert_eq!(groups.len(), 2);
        assert!(details.iter().any(|d| d.starts_with("identical_amounts")));
        assert!(details.iter().any(|d| d.starts_with("high_frequency")));
    }

    #[test]
    fn spread_out_pair_is_not_high_frequency() {
        let ts: Vec<Transfer> = (0..5)
            .map(|i| {
                let mut t = transfer(&format!("h{i}"), i, "a", "b", 500 + 100 * i as u128, 20.0);
                t.timestamp += i as i64 * 86_400;
                t
            })
            .collect();
        let g = TransactionGraph::build(&ts);
        assert!(high_frequency_sets(&g, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn tarjan_components() {
        let adj = vec![vec![1], vec![2], vec![0, 3], vec![4], vec![3], vec![]];
        let c = strongly_connected(&adj);
        assert_eq!(c[0], c[1]);
        assert_eq!(c[1], c[2]);
        assert_eq!(c[3], c[4]);
        assert_ne!(c[0], c[3]);
        assert_ne!(c[5], c[0]);
        assert_ne!(c[5], c[3]);
    }

    fn arb_graph() -> impl Strategy<Value = Vec<Transfer>> {
        (2usize..=12).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n, 90u128..=100, 0u64..20, 0u32..12), 0..40).prop_map(|v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (f, t, amt, b, usd))| {
                        transfer(
                            &format!("h{i}"),
                            b,
                            &format!("n{f:02}"),
                            &format!("n{t:02}"),
                            amt,
                            usd as f64,
                        )
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn cycles_match_brute_force(ts in arb_graph()) {
            let cfg = DetectorConfig::default();
            let g = TransactionGraph::build(&ts);
            prop_assert_eq!(find_circular_cycles(&g, &cfg), brute_cycles(&ts, &g, &cfg));
        }

        #[test]
        fn anomaly_floor_is_monotone(ts in arb_graph(), lo in 1u32..6, extra in 1u32..6) {
            let low = DetectorConfig { anomaly_min_amount_usd: lo as f64, anomaly_min_tx: 2, ..Default::default() };
            let high = DetectorConfig { anomaly_min_amount_usd: (lo + extra) as f64, ..low.clone() };
            let g = TransactionGraph::build(&ts);
            let members = |cfg: &DetectorConfig| -> BTreeSet<String> {
                detect_anomalous_behavior(&g, cfg).iter().flat_map(|x| x.members.iter().map(|a| a.to_string())).collect()
            };
            prop_assert!(members(&high).is_subset(&members(&low)));
        }
    }
}
