use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{Address, Transfer};

/// Aggregated statistics for one directed (from, to) address pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeStats {
    pub transfer_count: usize,
    pub total_usd: f64,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
    /// Indices into [`TransactionGraph::transfers`], chronological.
    pub transfers: Vec<usize>,
}

/// Directed multigraph over addresses with per-pair aggregates.
///
/// Node ids are positions in the sorted address list, so two graphs built
/// from permutations of the same transfers have identical node ids and
/// identical aggregates.
#[derive(Debug, Clone)]
pub struct TransactionGraph {
    nodes: Vec<Address>,
    index: HashMap<Address, usize>,
    transfers: Vec<Transfer>,
    edges: BTreeMap<(usize, usize), EdgeStats>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
    node_transfers: Vec<Vec<usize>>,
}

impl TransactionGraph {
    pub fn build(transfers: &[Transfer]) -> Self {
        Self::from_transfers(transfers.to_vec())
    }

    pub fn from_transfers(transfers: Vec<Transfer>) -> Self {
        let nodes: Vec<Address> = transfers
            .iter()
            .flat_map(|t| [&t.from, &t.to])
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<Address, usize> = nodes.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();

        let mut pair_ids: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut node_transfers = vec![Vec::new(); nodes.len()];
        for (id, t) in transfers.iter().enumerate() {
            let u = index[&t.from];
            let v = index[&t.to];
            pair_ids.entry((u, v)).or_default().push(id);
            node_transfers[u].push(id);
            if v != u {
                node_transfers[v].push(id);
            }
        }
        let chrono = |ids: &mut Vec<usize>| {
            ids.sort_by(|&a, &b| transfers[a].chronological_cmp(&transfers[b]).then(a.cmp(&b)));
        };
        node_transfers.iter_mut().for_each(chrono);

        let mut out_adj = vec![Vec::new(); nodes.len()];
        let mut in_adj = vec![Vec::new(); nodes.len()];
        let mut edges = BTreeMap::new();
        for ((u, v), mut ids) in pair_ids {
            chrono(&mut ids);
            let mut usd: Vec<f64> = ids.iter().map(|&i| transfers[i].usd_value).collect();
            usd.sort_by(f64::total_cmp);
            let stats = EdgeStats {
                transfer_count: ids.len(),
                total_usd: usd.iter().sum(),
                first_timestamp: ids.iter().map(|&i| transfers[i].timestamp).min().unwrap_or(0),
                last_timestamp: ids.iter().map(|&i| transfers[i].timestamp).max().unwrap_or(0),
                transfers: ids,
            };
            out_adj[u].push(v);
            in_adj[v].push(u);
            edges.insert((u, v), stats);
        }

        TransactionGraph {
            nodes,
            index,
            transfers,
            edges,
            out_adj,
            in_adj,
            node_transfers,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Address] {
        &self.nodes
    }

    pub fn address(&self, id: usize) -> &Address {
        &self.nodes[id]
    }

    pub fn node_id(&self, address: &Address) -> Option<usize> {
        self.index.get(address).copied()
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.transfers
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&EdgeStats> {
        self.edges.get(&(from, to))
    }

    /// All edges in (from, to) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &EdgeStats)> {
        self.edges.iter().map(|(&(u, v), s)| (u, v, s))
    }

    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_adj[node]
    }

    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_adj[node]
    }

    /// Transfers sent or received by `node`, chronological.
    pub fn node_transfers(&self, node: usize) -> &[usize] {
        &self.node_transfers[node]
    }

    /// Distinct addresses `node` has sent to or received from, sorted, self excluded.
    pub fn counterparties(&self, node: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.out_adj[node]
            .iter()
            .chain(&self.in_adj[node])
            .copied()
            .filter(|&n| n != node)
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn time_range(&self) -> Option<(i64, i64)> {
        let min = self.transfers.iter().map(|t| t.timestamp).min()?;
        let max = self.transfers.iter().map(|t| t.timestamp).max()?;
        Some((min, max))
    }
}
