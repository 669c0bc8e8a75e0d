//! The four entity-linkage detectors. Each returns candidate groups of two
//! or more addresses with evidence naming the detector; candidates from
//! different detectors may overlap and are merged by the cluster stage.

mod anomaly;
mod destination;
pub mod louvain;
mod similarity;
mod source;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Address, AddressLabel, EntityGroup, Evidence, TransactionGraph};
use crate::par;

pub use anomaly::{detect_anomalous_behavior, find_circular_cycles};
pub use destination::detect_destination_of_funds;
pub use louvain::{louvain_communities, modularity, WeightedGraph};
pub use similarity::{build_similarity_graph, detect_behavioral_similarity, SimilarityGraph};
pub(crate) use similarity::{cosine, jaccard};
pub use source::detect_source_of_funds;

pub const SOURCE_OF_FUNDS: &str = "source_of_funds";
pub const DESTINATION_OF_FUNDS: &str = "destination_of_funds";
pub const BEHAVIORAL: &str = "behavioral";
pub const ANOMALOUS: &str = "anomalous";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
    #[error("graph has no nodes")]
    EmptyGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub min_fanout: usize,
    pub min_amount_usd: f64,
    pub anomaly_min_tx: usize,
    pub anomaly_min_amount_usd: f64,
    pub amount_identity_tolerance: f64,
    pub chain_forward_fraction: f64,
    pub chain_window_seconds: i64,
    pub max_cycle_length: usize,
    /// Share of the outgoing amount that must come back around a cycle.
    pub circular_return_fraction: f64,
    pub similarity_edge_threshold: f64,
    pub similarity_weights: SimilarityWeights,
    pub louvain_resolution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityWeights {
    pub direct: f64,
    pub temporal: f64,
    pub contract: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        SimilarityWeights {
            direct: 0.5,
            temporal: 0.25,
            contract: 0.25,
        }
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            min_fanout: 5,
            min_amount_usd: 10.0,
            anomaly_min_tx: 5,
            anomaly_min_amount_usd: 5.0,
            amount_identity_tolerance: 0.001,
            chain_forward_fraction: 0.7,
            chain_window_seconds: 86_400,
            max_cycle_length: 5,
            circular_return_fraction: 0.95,
            similarity_edge_threshold: 0.5,
            similarity_weights: SimilarityWeights::default(),
            louvain_resolution: 1.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |msg: &str| Err(DetectError::InvalidConfig(msg.to_string()));
        let fraction = |x: f64| x > 0.0 && x <= 1.0;
        if self.min_fanout == 0 || self.anomaly_min_tx == 0 {
            return bad("counts must be positive");
        }
        if !(self.min_amount_usd > 0.0 && self.anomaly_min_amount_usd > 0.0) {
            return bad("USD floors must be positive");
        }
        if !(self.amount_identity_tolerance > 0.0 && self.amount_identity_tolerance.is_finite()) {
            return bad("amount_identity_tolerance must be positive");
        }
        if !fraction(self.chain_forward_fraction)
            || !fraction(self.circular_return_fraction)
            || !fraction(self.similarity_edge_threshold)
        {
            return bad("fractions must lie in (0, 1]");
        }
        if self.chain_window_seconds <= 0 {
            return bad("chain_window_seconds must be positive");
        }
        if self.max_cycle_length < 2 {
            return bad("max_cycle_length must be at least 2");
        }
        let w = self.similarity_weights;
        if [w.direct, w.temporal, w.contract]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return bad("similarity weights must be non-negative");
        }
        if !(self.louvain_resolution > 0.0 && self.louvain_resolution.is_finite()) {
            return bad("louvain_resolution must be positive");
        }
        Ok(())
    }
}

/// All detector candidates, numbered consecutively in detector order.
pub fn detect_all(
    graph: &TransactionGraph,
    labels: &[AddressLabel],
    config: &DetectorConfig,
    seed: u64,
) -> Result<Vec<EntityGroup>, DetectError> {
    config.validate()?;
    let ((source, destination), (behavioral, anomalous)) = par::join(
        || {
            (
                detect_source_of_funds(graph, labels, config),
                detect_destination_of_funds(graph, labels, config),
            )
        },
        || {
            (
                detect_behavioral_similarity(graph, config, seed),
                detect_anomalous_behavior(graph, config),
            )
        },
    );
    let mut all: Vec<EntityGroup> = [source, destination, behavioral, anomalous].concat();
    for (i, g) in all.iter_mut().enumerate() {
        g.group_id = i as u64;
    }
    Ok(all)
}

/// Builds groups from member sets, dropping sets smaller than two, sorted by
/// member list so output does not depend on discovery order.
pub(crate) fn finish_groups(graph: &TransactionGraph, sets: Vec<(BTreeSet<usize>, Evidence)>) -> Vec<EntityGroup> {
    let mut groups: Vec<EntityGroup> = sets
        .into_iter()
        .filter(|(m, _)| m.len() >= 2)
        .map(|(members, evidence)| {
            let members: BTreeSet<Address> = members.iter().map(|&i| graph.address(i).clone()).collect();
            EntityGroup::new(members, vec![evidence])
        })
        .collect();
    groups.sort_by(|a, b| {
        a.members
            .cmp(&b.members)
            .then_with(|| a.evidence[0].detail.cmp(&b.evidence[0].detail))
    });
    groups.dedup_by(|a, b| a.members == b.members && a.evidence == b.evidence);
    groups
}

/// Minimal union-find over dense indices.
pub(crate) struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    pub fn new(n: usize) -> Self {
        Dsu {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// The smaller root wins, so roots are independent of union order.
    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use crate::model::{Address, EntityGroup};

    pub fn member_sets(groups: &[EntityGroup]) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = groups
            .iter()
            .map(|g| g.members.iter().map(Address::to_string).collect())
            .collect();
        out.sort();
        out
    }
}
