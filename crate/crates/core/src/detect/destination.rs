use std::collections::BTreeSet;

use super::{finish_groups, DetectorConfig, DESTINATION_OF_FUNDS};
use crate::model::{AddressLabel, EntityGroup, Evidence, LabelIndex, TransactionGraph};
use crate::par;

/// Collectors: an unlabeled address receiving qualifying transfers from at
/// least `min_fanout` senders that each route `chain_forward_fraction` or
/// more of their outbound USD to it.
///
/// A sender's share is measured against all of its outbound USD, including
/// transfers under the floor, so raising the floor can only shrink groups.
pub fn detect_destination_of_funds(
    graph: &TransactionGraph,
    labels: &[AddressLabel],
    config: &DetectorConfig,
) -> Vec<EntityGroup> {
    let index = LabelIndex::new(labels);
    let ts = graph.transfers();
    let outbound = outbound_usd(graph);

    let found = par::map_range(graph.node_count(), |c| {
        if index.is_labeled(graph.address(c)) {
            return None;
        }
        let senders: BTreeSet<usize> = graph
            .in_neighbors(c)
            .iter()
            .copied()
            .filter(|&s| s != c)
            .filter(|&s| {
                let edge = graph.edge(s, c).expect("in-neighbor has an edge");
                let qualifying: f64 = edge
                    .transfers
                    .iter()
                    .map(|&i| ts[i].usd_value)
                    .filter(|&usd| usd >= config.min_amount_usd)
                    .sum();
                qualifying > 0.0 && qualifying >= config.chain_forward_fraction * outbound[s]
            })
            .collect();
        (senders.len() >= config.min_fanout).then(|| {
            let detail = format!("collector {} ({} senders)", graph.address(c), senders.len());
            let mut members = senders;
            members.insert(c);
            (members, Evidence::new(DESTINATION_OF_FUNDS, detail, 1.0))
        })
    });
    finish_groups(graph, found.into_iter().flatten().collect())
}

/// Total outbound USD per node, self-transfers excluded.
pub(crate) fn outbound_usd(graph: &TransactionGraph) -> Vec<f64> {
    let mut out = vec![0.0; graph.node_count()];
    for (u, v, e) in graph.edges() {
        if u != v {
            out[u] += e.total_usd;
        }
    }
    out
}
