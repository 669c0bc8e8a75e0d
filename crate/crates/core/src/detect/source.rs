use std::collections::{BTreeMap, BTreeSet};

use super::{finish_groups, DetectorConfig, Dsu, SOURCE_OF_FUNDS};
use crate::model::{AddressLabel, EntityGroup, Evidence, LabelIndex, TransactionGraph};
use crate::par;

/// Diffusion funders and sequential funding chains.
///
/// A recipient belongs to funder F when its chronologically first inbound
/// transfer comes from F and clears `min_amount_usd`. The first transfer is
/// taken over all inbound transfers, not only qualifying ones, so raising the
/// floor can only shrink groups.
pub fn detect_source_of_funds(
    graph: &TransactionGraph,
    labels: &[AddressLabel],
    config: &DetectorConfig,
) -> Vec<EntityGroup> {
    let index = LabelIndex::new(labels);
    let mut sets = diffusion_sets(graph, &index, config);
    sets.extend(chain_sets(graph, config));
    finish_groups(graph, sets)
}

fn diffusion_sets(
    graph: &TransactionGraph,
    index: &LabelIndex,
    config: &DetectorConfig,
) -> Vec<(BTreeSet<usize>, Evidence)> {
    let ts = graph.transfers();
    let first_funder = par::map_range(graph.node_count(), |r| {
        let recipient = graph.address(r);
        let first = graph
            .node_transfers(r)
            .iter()
            .map(|&i| &ts[i])
            .find(|t| &t.to == recipient && t.from != t.to)?;
        (first.usd_value >= config.min_amount_usd).then(|| graph.node_id(&first.from).expect("sender is a node"))
    });

    let mut recipients: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for (r, funder) in first_funder.into_iter().enumerate() {
        if let Some(f) = funder {
            recipients.entry(f).or_default().insert(r);
        }
    }
    recipients
        .into_iter()
        .filter(|(f, rs)| rs.len() >= config.min_fanout && !index.is_labeled(graph.address(*f)))
        .map(|(f, mut rs)| {
            let detail = format!("diffusion funder {} ({} recipients)", graph.address(f), rs.len());
            rs.insert(f);
            (rs, Evidence::new(SOURCE_OF_FUNDS, detail, 1.0))
        })
        .collect()
}

/// Forward links u→x→y: x receives a qualifying transfer from u and, within
/// the chain window, sends y qualifying transfers worth at least
/// `chain_forward_fraction` of it. Connected links form one chain.
pub(crate) fn forward_links(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<(usize, usize, usize)> {
    let ts = graph.transfers();
    let per_node = par::map_range(graph.node_count(), |x| {
        let list = graph.node_transfers(x);
        let me = graph.address(x);
        let mut links = Vec::new();
        for (p, &i) in list.iter().enumerate() {
            let t1 = &ts[i];
            if &t1.to != me || t1.from == t1.to || t1.usd_value < config.min_amount_usd {
                continue;
            }
            let deadline = t1.timestamp.saturating_add(config.chain_window_seconds);
            let mut forwarded: BTreeMap<usize, f64> = BTreeMap::new();
            for &j in &list[p + 1..] {
                let t2 = &ts[j];
                if t2.timestamp > deadline {
                    break;
                }
                if &t2.from == me && t2.to != t1.from && t2.to != *me && t2.usd_value >= config.min_amount_usd {
                    let y = graph.node_id(&t2.to).expect("recipient is a node");
                    *forwarded.entry(y).or_default() += t2.usd_value;
                }
            }
            let u = graph.node_id(&t1.from).expect("sender is a node");
            let need = config.chain_forward_fraction * t1.usd_value;
            links.extend(
                forwarded
                    .into_iter()
                    .filter(|&(_, s)| s >= need)
                    .map(|(y, _)| (u, x, y)),
            );
        }
        links
    });
    let mut links: Vec<_> = per_node.into_iter().flatten().collect();
    links.sort_unstable();
    links.dedup();
    links
}

fn chain_sets(graph: &TransactionGraph, config: &DetectorConfig) -> Vec<(BTreeSet<usize>, Evidence)> {
    let links = forward_links(graph, config);
    let mut dsu = Dsu::new(graph.node_count());
    for &(u, x, y) in &links {
        dsu.union(u, x);
        dsu.union(x, y);
    }
    let mut chains: BTreeMap<usize, (BTreeSet<usize>, usize)> = BTreeMap::new();
    for &(u, x, y) in &links {
        let entry = chains.entry(dsu.find(u)).or_default();
        entry.0.extend([u, x, y]);
        entry.1 += 1;
    }
    chains
        .into_values()
        .map(|(members, n_links)| {
            let detail = format!("sequential chain ({n_links} forwarding hops)");
            (members, Evidence::new(SOURCE_OF_FUNDS, detail, 1.0))
        })
        .collect()
}
