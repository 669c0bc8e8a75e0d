//! Refinement of detector candidates into a disjoint set of entity groups:
//! union-find merging, DBSCAN, isolation-forest outlier removal and a
//! linkage-probability filter.

mod dbscan;
mod features;
mod iforest;
mod linkage;
mod refine;
mod union_find;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dbscan::{dbscan, NOISE};
pub use features::{extract_features, replay_balances, FeatureTable, FEATURE_NAMES, SCHEDULE_SLOTS};
pub use iforest::{isolation_forest_filter, IsolationForest};
pub use linkage::{linkage_probability, linkage_scores, LinkageScores};
pub use refine::{merge_and_refine, RefineStats};
pub use union_find::{merge_overlapping, SuperGroup};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("no input points")]
    EmptyInput,
    #[error("linkage needs at least two members")]
    SingletonGroup,
    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub contamination: f64,
    pub trees: usize,
    /// Isolation-forest candidates are only dropped from a group when their
    /// anomaly score exceeds this value.
    pub outlier_score_gate: f64,
    /// ...and when they lie farther than this many `eps` from the
    /// coordinate-wise median of their cluster.
    pub outlier_distance_gate: f64,
    pub linkage_weights: LinkageWeights,
    pub linkage_threshold: f64,
    pub market_maker_min_transfers: usize,
    pub market_maker_min_span: f64,
    /// Pivot count for the sampled betweenness estimate.
    pub betweenness_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkageWeights {
    pub pattern: f64,
    pub similarity: f64,
    pub flow: f64,
    pub temporal: f64,
}

impl Default for LinkageWeights {
    fn default() -> Self {
        LinkageWeights {
            pattern: 0.25,
            similarity: 0.25,
            flow: 0.25,
            temporal: 0.25,
        }
    }
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            eps: 0.5,
            min_pts: 5,
            contamination: 0.1,
            trees: 100,
            outlier_score_gate: 0.6,
            outlier_distance_gate: 1.0,
            linkage_weights: LinkageWeights::default(),
            linkage_threshold: 0.7,
            market_maker_min_transfers: 10_000,
            market_maker_min_span: 0.9,
            betweenness_samples: 64,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |msg: &str| Err(ClusterError::InvalidConfig(msg.to_string()));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if self.min_pts == 0 || self.trees == 0 {
            return bad("min_pts and trees must be positive");
        }
        if !(0.0..1.0).contains(&self.contamination) {
            return bad("contamination must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.linkage_threshold) || !(0.0..=1.0).contains(&self.market_maker_min_span) {
            return bad("linkage_threshold and market_maker_min_span must lie in [0, 1]");
        }
        let w = self.linkage_weights;
        let ws = [w.pattern, w.similarity, w.flow, w.temporal];
        if ws.iter().any(|x| x.is_nan() || *x < 0.0) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("linkage weights must be non-negative and sum to 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ClusterConfig::default().validate().unwrap();
        let cfg = ClusterConfig {
            linkage_weights: LinkageWeights {
                pattern: 0.5,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
