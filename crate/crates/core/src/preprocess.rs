//! Removes transfers that would produce false entity links: those touching
//! shared public addresses (contracts, hot wallets, exchanges) and those
//! belonging to airdrop campaigns.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::ingest::DatasetBundle;
use crate::model::{Address, AddressLabel, LabelCategory, LabelIndex, Transfer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Relative amount tolerance for "similar" airdrop amounts.
    pub similarity_tolerance: f64,
    /// Distinct recipients a project transaction needs to count as an airdrop.
    pub min_recipients: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            similarity_tolerance: 0.05,
            min_recipients: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_transfers: usize,
    pub input_addresses: usize,
    pub removed_public_tx: usize,
    pub removed_airdrop_tx: usize,
    pub airdrop_addresses: BTreeSet<Address>,
    pub surviving_transfers: usize,
    pub surviving_addresses: usize,
}

/// Transfers flagged as airdrop distributions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AirdropDetection {
    /// Indices into the input slice, ascending.
    pub transfers: BTreeSet<usize>,
    pub recipients: BTreeSet<Address>,
}

/// Drops every transfer whose sender or recipient carries a public label.
/// Returns the kept transfers (input order) and the number removed.
pub fn filter_public_addresses(transfers: &[Transfer], labels: &[AddressLabel]) -> (Vec<Transfer>, usize) {
    let index = LabelIndex::new(labels);
    let kept: Vec<Transfer> = transfers
        .iter()
        .filter(|t| !touches_public(&index, t))
        .cloned()
        .collect();
    let removed = transfers.len() - kept.len();
    (kept, removed)
}

fn touches_public(index: &LabelIndex, t: &Transfer) -> bool {
    index.is_public(&t.from) || index.is_public(&t.to)
}

/// Flags airdrop transfers.
///
/// A transfer from a multi-send contract is always flagged. A transfer from
/// a project address is flagged when, within the same `tx_hash`, the sender
/// pays at least `min_recipients` distinct recipients amounts within
/// `similarity_tolerance` of this transfer's amount or of another amount in
/// such a cluster. Clusters are anchored on the amounts themselves, so
/// removing transfers can never create a new cluster; this keeps cleaning
/// idempotent.
pub fn detect_airdrops(
    transfers: &[Transfer],
    labels: &[AddressLabel],
    similarity_tolerance: f64,
    min_recipients: usize,
) -> AirdropDetection {
    let index = LabelIndex::new(labels);
    let mut flagged = BTreeSet::new();
    let mut by_tx: BTreeMap<(&str, &Address), Vec<usize>> = BTreeMap::new();

    for (i, t) in transfers.iter().enumerate() {
        if index.has(&t.from, LabelCategory::MultiSendContract) {
            flagged.insert(i);
        } else if index.has(&t.from, LabelCategory::Project) {
            by_tx.entry((t.tx_hash.as_str(), &t.from)).or_default().push(i);
        }
    }

    for mut ids in by_tx.into_values() {
        if ids.len() < min_recipients.max(1) {
            continue;
        }
        ids.sort_by_key(|&i| transfers[i].raw_amount);
        let amounts: Vec<f64> = ids.iter().map(|&i| transfers[i].raw_amount as f64).collect();
        for (k, &anchor) in amounts.iter().enumerate() {
            let tol = similarity_tolerance * anchor;
            let lo = amounts[..=k].partition_point(|&a| a < anchor - tol);
            let hi = k + amounts[k..].partition_point(|&a| a <= anchor + tol);
            let recipients: HashSet<&Address> = ids[lo..hi].iter().map(|&i| &transfers[i].to).collect();
            if recipients.len() >= min_recipients {
                flagged.extend(ids[lo..hi].iter().copied());
            }
        }
    }

    let recipients = flagged.iter().map(|&i| transfers[i].to.clone()).collect();
    AirdropDetection {
        transfers: flagged,
        recipients,
    }
}

/// Applies public-address filtering, then airdrop removal. A transfer that
/// matches both rules is counted under the public rule.
pub fn clean_dataset(bundle: &DatasetBundle, config: &PreprocessConfig) -> (DatasetBundle, CleaningReport) {
    let transfers = &bundle.transfers;
    let index = LabelIndex::new(&bundle.labels);
    // Both rules are evaluated on the full input so that adding a label can
    // only ever remove more transfers.
    let airdrops = detect_airdrops(
        transfers,
        &bundle.labels,
        config.similarity_tolerance,
        config.min_recipients,
    );

    let mut kept = Vec::with_capacity(transfers.len());
    let mut removed_public = 0;
    let mut removed_airdrop = 0;
    let mut airdrop_addresses = BTreeSet::new();
    for (i, t) in transfers.iter().enumerate() {
        if touches_public(&index, t) {
            removed_public += 1;
        } else if airdrops.transfers.contains(&i) {
            removed_airdrop += 1;
            airdrop_addresses.insert(t.to.clone());
        } else {
            kept.push(t.clone());
        }
    }

    let report = CleaningReport {
        input_transfers: transfers.len(),
        input_addresses: distinct_addresses(transfers),
        removed_public_tx: removed_public,
        removed_airdrop_tx: removed_airdrop,
        airdrop_addresses,
        surviving_transfers: kept.len(),
        surviving_addresses: distinct_addresses(&kept),
    };
    let cleaned = DatasetBundle {
        transfers: kept,
        labels: bundle.labels.clone(),
        pool: bundle.pool.clone(),
        market: bundle.market.clone(),
    };
    (cleaned, report)
}

fn distinct_addresses(transfers: &[Transfer]) -> usize {
    transfers
        .iter()
        .flat_map(|t| [&t.from, &t.to])
        .collect::<HashSet<_>>()
        .len()
}
