use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClusterConfig;
use crate::model::{Address, AddressLabel, LabelCategory, LabelIndex, TransactionGraph, Transfer};
use crate::par;

pub const FEATURE_NAMES: [&str; 45] = [
    "tx_per_day",
    "usd_mean",
    "usd_std",
    "tx_count",
    "gas_fee_mean",
    "in_degree",
    "out_degree",
    "betweenness_rank",
    "pagerank",
    "hour_00",
    "hour_01",
    "hour_02",
    "hour_03",
    "hour_04",
    "hour_05",
    "hour_06",
    "hour_07",
    "hour_08",
    "hour_09",
    "hour_10",
    "hour_11",
    "hour_12",
    "hour_13",
    "hour_14",
    "hour_15",
    "hour_16",
    "hour_17",
    "hour_18",
    "hour_19",
    "hour_20",
    "hour_21",
    "hour_22",
    "hour_23",
    "gap_median",
    "balance",
    "holding_days",
    "distinct_tokens",
    "counterparty_count",
    "counterparty_jaccard",
    "label_smart_contract",
    "label_hot_wallet",
    "label_project",
    "label_multi_send_contract",
    "label_exchange",
    "label_other",
];

const HOUR0: usize = 9;
const LABEL0: usize = 39;
const PAGERANK: usize = 8;

/// Compressed with log1p before standardisation.
const HEAVY_TAILED: [usize; 12] = [0, 1, 2, 3, 4, 5, 6, 33, 34, 35, 36, 37];

/// Hour-of-day shares and label one-hots: the activity schedule view used
/// for density clustering inside candidate groups.
pub const SCHEDULE_SLOTS: [usize; 30] = [
    9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31, 32, 39, 40, 41, 42, 43,
    44,
];

/// Per-address feature vectors over the address universe (graph nodes plus
/// balance holders).
#[derive(Debug, Clone)]
pub struct FeatureTable {
    addresses: Vec<Address>,
    index: HashMap<Address, usize>,
    raw: Vec<[f64; 45]>,
    standardized: Vec<[f64; 45]>,
    hours: Vec<[f64; 24]>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn addresses(&self) -> &[Address] {
        &self.addresses
    }

    /// Standardised vector.
    pub fn get(&self, address: &Address) -> Option<&[f64]> {
        self.index.get(address).map(|&i| &self.standardized[i][..])
    }

    /// Vector before log compression and standardisation.
    pub fn raw(&self, address: &Address) -> Option<&[f64]> {
        self.index.get(address).map(|&i| &self.raw[i][..])
    }

    /// Transfer counts per hour of day.
    pub fn hours(&self, address: &Address) -> Option<&[f64; 24]> {
        self.index.get(address).map(|&i| &self.hours[i])
    }

    /// Selected standardised slots.
    pub fn view(&self, address: &Address, slots: &[usize]) -> Option<Vec<f64>> {
        self.get(address).map(|v| slots.iter().map(|&s| v[s]).collect())
    }
}

/// Net token balance per address from replaying transfers, in whole tokens.
/// Addresses whose replayed balance is not positive are omitted.
pub fn replay_balances(transfers: &[Transfer], token_decimals: u32) -> BTreeMap<Address, f64> {
    let mut net: BTreeMap<&Address, i128> = BTreeMap::new();
    for t in transfers {
        let amount = i128::try_from(t.raw_amount).unwrap_or(i128::MAX);
        let from = net.entry(&t.from).or_default();
        *from = from.saturating_sub(amount);
        let to = net.entry(&t.to).or_default();
        *to = to.saturating_add(amount);
    }
    let scale = 10f64.powi(token_decimals as i32);
    net.into_iter()
        .filter(|&(_, b)| b > 0)
        .map(|(a, b)| (a.clone(), b as f64 / scale))
        .collect()
}

pub fn extract_features(
    graph: &TransactionGraph,
    balances: &BTreeMap<Address, f64>,
    labels: &[AddressLabel],
    config: &ClusterConfig,
    seed: u64,
) -> FeatureTable {
    let universe: BTreeSet<&Address> = graph.nodes().iter().chain(balances.keys()).collect();
    let addresses: Vec<Address> = universe.into_iter().cloned().collect();
    let index: HashMap<Address, usize> = addresses.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
    let label_index = LabelIndex::new(labels);

    let counterparties: Vec<Vec<usize>> = par::map_range(graph.node_count(), |u| graph.counterparties(u));
    let pagerank = pagerank(graph, 0.85, 1e-12, 1000);
    let betweenness = rank_fraction(&sampled_betweenness(&counterparties, config.betweenness_samples, seed));
    let end = graph.time_range().map(|(_, e)| e).unwrap_or(0);

    let rows = par::map_slice(&addresses, |addr| {
        let mut v = [0.0; 45];
        let mut hours = [0.0; 24];
        if let Some(u) = graph.node_id(addr) {
            activity_slots(graph, u, end, &mut v, &mut hours);
            v[5] = graph.in_neighbors(u).iter().filter(|&&x| x != u).count() as f64;
            v[6] = graph.out_neighbors(u).iter().filter(|&&x| x != u).count() as f64;
            v[7] = betweenness[u];
            v[PAGERANK] = pagerank[u] * graph.node_count() as f64;
            v[37] = counterparties[u].len() as f64;
            v[38] = primary_overlap(graph, u, &counterparties);
        }
        v[34] = balances.get(addr).copied().unwrap_or(0.0);
        for (k, cat) in LabelCategory::ALL.iter().enumerate() {
            if label_index.has(addr, *cat) {
                v[LABEL0 + k] = 1.0;
            }
        }
        (v, hours)
    });
    let (raw, hours): (Vec<[f64; 45]>, Vec<[f64; 24]>) = rows.into_iter().unzip();
    let standardized = standardize(&raw);
    FeatureTable {
        addresses,
        index,
        raw,
        standardized,
        hours,
    }
}

fn activity_slots(graph: &TransactionGraph, u: usize, end: i64, v: &mut [f64; 45], hours: &mut [f64; 24]) {
    let ts = graph.transfers();
    let ids = graph.node_transfers(u);
    if ids.is_empty() {
        return;
    }
    let me = graph.address(u);
    let n = ids.len() as f64;
    let usd: Vec<f64> = ids.iter().map(|&i| ts[i].usd_value).collect();
    let mean = usd.iter().sum::<f64>() / n;
    let var = usd.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let first = ts[ids[0]].timestamp;
    let last = ts[ids[ids.len() - 1]].timestamp;
    let span_days = ((last - first) as f64 / 86_400.0).max(1.0);

    v[0] = n / span_days;
    v[1] = mean;
    v[2] = var.sqrt();
    v[3] = n;
    v[4] = ids.iter().map(|&i| ts[i].gas_fee).sum::<f64>() / n;
    for &i in ids {
        hours[ts[i].hour_of_day()] += 1.0;
    }
    for h in 0..24 {
        v[HOUR0 + h] = hours[h] / n;
    }
    let mut gaps: Vec<i64> = ids
        .windows(2)
        .map(|w| ts[w[1]].timestamp - ts[w[0]].timestamp)
        .collect();
    gaps.sort_unstable();
    v[33] = match gaps.len() {
        0 => 0.0,
        k if k % 2 == 1 => gaps[k / 2] as f64,
        k => (gaps[k / 2 - 1] + gaps[k / 2]) as f64 / 2.0,
    };
    if let Some(&i) = ids.iter().find(|&&i| &ts[i].to == me) {
        v[35] = (end - ts[i].timestamp).max(0) as f64 / 86_400.0;
    }
    v[36] = ids.iter().map(|&i| ts[i].token.as_str()).collect::<BTreeSet<_>>().len() as f64;
}

/// Jaccard of u's counterparties with those of its most frequent
/// counterparty (ties to the smaller id).
fn primary_overlap(graph: &TransactionGraph, u: usize, counterparties: &[Vec<usize>]) -> f64 {
    let mut best: Option<(usize, usize)> = None;
    for &c in &counterparties[u] {
        let n = graph.edge(u, c).map_or(0, |e| e.transfer_count) + graph.edge(c, u).map_or(0, |e| e.transfer_count);
        if best.is_none_or(|(bn, _)| n > bn) {
            best = Some((n, c));
        }
    }
    match best {
        Some((_, c)) => crate::detect::jaccard(&counterparties[u], &counterparties[c]),
        None => 0.0,
    }
}

fn standardize(raw: &[[f64; 45]]) -> Vec<[f64; 45]> {
    let n = raw.len() as f64;
    let mut out: Vec<[f64; 45]> = raw.to_vec();
    for row in out.iter_mut() {
        for &s in &HEAVY_TAILED {
            row[s] = row[s].max(0.0).ln_1p();
        }
        row[PAGERANK] = row[PAGERANK].max(0.0).ln_1p();
    }
    for s in 0..45 {
        let mean = out.iter().map(|r| r[s]).sum::<f64>() / n;
        let std = (out.iter().map(|r| (r[s] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for row in out.iter_mut() {
            row[s] = if std > 1e-12 { (row[s] - mean) / std } else { 0.0 };
        }
    }
    out
}

/// PageRank over directed transfer edges (self-loops ignored), dangling
/// mass spread uniformly.
pub(crate) fn pagerank(graph: &TransactionGraph, damping: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = graph.node_count();
    if n == 0 {
        return Vec::new();
    }
    let out: Vec<Vec<usize>> = (0..n)
        .map(|u| graph.out_neighbors(u).iter().copied().filter(|&v| v != u).collect())
        .collect();
    let mut rank = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&u| out[u].is_empty()).map(|u| rank[u]).sum();
        let base = (1.0 - damping) / n as f64 + damping * dangling / n as f64;
        let mut next = vec![base; n];
        for u in 0..n {
            if !out[u].is_empty() {
                let share = damping * rank[u] / out[u].len() as f64;
                for &v in &out[u] {
                    next[v] += share;
                }
            }
        }
        let diff: f64 = next.iter().zip(&rank).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if diff < tol {
            break;
        }
    }
    rank
}

/// Brandes betweenness on the undirected counterparty graph, accumulated
/// from up to `samples` seeded pivots.
pub(crate) fn sampled_betweenness(adj: &[Vec<usize>], samples: usize, seed: u64) -> Vec<f64> {
    let n = adj.len();
    let mut pivots: Vec<usize> = (0..n).collect();
    if samples < n {
        pivots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        pivots.truncate(samples);
        pivots.sort_unstable();
    }
    let partials = par::map_slice(&pivots, |&s| single_source_dependency(adj, s));
    let mut total = vec![0.0; n];
    for p in partials {
        for (t, d) in total.iter_mut().zip(p) {
            *t += d;
        }
    }
    total
}

fn single_source_dependency(adj: &[Vec<usize>], s: usize) -> Vec<f64> {
    let n = adj.len();
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    sigma[s] = 1.0;
    dist[s] = 0;
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &w in &adj[v] {
            if dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
            }
        }
    }
    let mut delta = vec![0.0; n];
    for &w in order.iter().rev() {
        for &v in &adj[w] {
            if dist[v] != usize::MAX && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
        }
    }
    delta[s] = 0.0;
    delta
}

/// Position of each score in ascending order, scaled to [0, 1]; ties share
/// the lowest position.
pub(crate) fn rank_fraction(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut out = vec![0.0; n];
    let mut pos = 0;
    for k in 0..n {
        if k > 0 && scores[order[k]] != scores[order[k - 1]] {
            pos = k;
        }
        out[order[k]] = pos as f64 / (n - 1) as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::{addr, transfer};

    #[test]
    fn names_and_slots_line_up() {
        assert_eq!(FEATURE_NAMES[HOUR0], "hour_00");
        assert_eq!(FEATURE_NAMES[HOUR0 + 23], "hour_23");
        assert_eq!(FEATURE_NAMES[LABEL0], "label_smart_contract");
        assert_eq!(FEATURE_NAMES[PAGERANK], "pagerank");
        for (k, cat) in LabelCategory::ALL.iter().enumerate() {
            assert_eq!(FEATURE_NAMES[LABEL0 + k], format!("label_{}", cat.as_str()));
        }
        let mut unique = FEATURE_NAMES.to_vec();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), 45);
    }

    #[test]
    fn pagerank_three_cycle_is_uniform() {
        let ts = vec![
            transfer("a", 1, "x", "y", 1, 1.0),
            transfer("b", 2, "y", "z", 1, 1.0),
            transfer("c", 3, "z", "x", 1, 1.0),
        ];
        let pr = pagerank(&TransactionGraph::build(&ts), 0.85, 1e-15, 1000);
        for p in pr {
            assert!((p - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    /// Dense power iteration with an explicit Google matrix.
    #[allow(clippy::needless_range_loop)]
    fn oracle_pagerank(n: usize, edges: &[(usize, usize)]) -> Vec<f64> {
        let mut m = vec![vec![0.0; n]; n];
        for u in 0..n {
            let outs: Vec<usize> = edges.iter().filter(|e| e.0 == u && e.1 != u).map(|e| e.1).collect();
            let mut targets = outs.clone();
            targets.sort();
            targets.dedup();
            for v in 0..n {
                m[v][u] = if targets.is_empty() {
                    1.0 / n as f64
                } else if targets.contains(&v) {
                    1.0 / targets.len() as f64
                } else {
                    0.0
                };
            }
        }
        let mut r = vec![1.0 / n as f64; n];
        for _ in 0..2000 {
            r = (0..n)
                .map(|v| 0.15 / n as f64 + 0.85 * (0..n).map(|u| m[v][u] * r[u]).sum::<f64>())
                .collect();
        }
        r
    }

    #[test]
    fn pagerank_matches_dense_oracle() {
        let pairs = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 3), (1, 4), (4, 1), (0, 2)];
        let ts: Vec<Transfer> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| transfer(&format!("h{i}"), i as u64, &format!("n{u}"), &format!("n{v}"), 1, 1.0))
            .collect();
        let got = pagerank(&TransactionGraph::build(&ts), 0.85, 1e-15, 5000);
        let want = oracle_pagerank(5, &pairs);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn exact_betweenness_on_a_path() {
        // a - b - c - d: b and c each sit on 2 of the 3 inner shortest
        // paths, counted once from each end.
        let adj = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let b = sampled_betweenness(&adj, 10, 0);
        assert_eq!(b, vec![0.0, 4.0, 4.0, 0.0]);
        assert_eq!(rank_fraction(&b), vec![0.0, 2.0 / 3.0, 2.0 / 3.0, 0.0]);
    }

    #[test]
    fn silent_address_has_zero_activity() {
        let ts = vec![transfer("a", 1, "x", "y", 5, 10.0)];
        let g = TransactionGraph::build(&ts);
        let balances = BTreeMap::from([(addr("idle"), 3.0)]);
        let f = extract_features(&g, &balances, &[], &ClusterConfig::default(), 1);
        assert_eq!(f.len(), 3);
        let raw = f.raw(&addr("idle")).unwrap();
        assert!(raw[..34].iter().all(|&x| x == 0.0));
        assert_eq!(raw[34], 3.0);
        assert!(f.get(&addr("idle")).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn identical_histories_identical_vectors() {
        let ts = vec![
            transfer("a", 1, "src", "p", 5, 10.0),
            transfer("b", 1, "src", "q", 5, 10.0),
            transfer("c", 2, "p", "dst", 5, 10.0),
            transfer("d", 2, "q", "dst", 5, 10.0),
        ];
        let g = TransactionGraph::build(&ts);
        let f = extract_features(&g, &BTreeMap::new(), &[], &ClusterConfig::default(), 1);
        assert_eq!(f.get(&addr("p")), f.get(&addr("q")));
        assert_eq!(f.hours(&addr("p")), f.hours(&addr("q")));
    }

    #[test]
    fn standardized_slots_are_zero_mean_or_constant() {
        let ts: Vec<Transfer> = (0..20)
            .map(|i| {
                transfer(
                    &format!("h{i}"),
                    i * 7,
                    &format!("a{}", i % 5),
                    &format!("b{}", i % 3),
                    1 + i as u128,
                    i as f64,
                )
            })
            .collect();
        let g = TransactionGraph::build(&ts);
        let f = extract_features(&g, &BTreeMap::new(), &[], &ClusterConfig::default(), 1);
        for (s, name) in FEATURE_NAMES.iter().enumerate() {
            let col: Vec<f64> = f.addresses().iter().map(|a| f.get(a).unwrap()[s]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9, "slot {name}");
        }
    }

    #[test]
    fn replay_nets_transfers() {
        let ts = vec![
            transfer("a", 1, "mint", "x", 3_000_000_000_000_000_000, 1.0),
            transfer("b", 2, "x", "y", 1_000_000_000_000_000_000, 1.0),
        ];
        let b = replay_balances(&ts, 18);
        assert_eq!(b.get(&addr("x")), Some(&2.0));
        assert_eq!(b.get(&addr("y")), Some(&1.0));
        assert!(!b.contains_key(&addr("mint")));
    }
}
