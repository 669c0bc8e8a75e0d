//! Liquidity indicators over holder distributions, computed per address
//! (raw) and per entity (adjusted).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::replay_balances;
use crate::ingest::DatasetBundle;
use crate::model::{
    Address, GroupFlag, GroupSet, IndicatorReport, Indicators, LiquiditySnapshot, PositiveIndicators, ReportMetadata,
    Transfer, TransformCaps,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("holder distribution has zero total balance")]
    ZeroSupply,
    #[error("market cap is zero")]
    ZeroMarketCap,
    #[error("pool liquidity is zero")]
    ZeroLiquidity,
    #[error("missing {0} snapshot")]
    MissingSnapshot(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderId {
    Address(Address),
    Group(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderDistribution {
    entries: Vec<(HolderId, f64)>,
    total: f64,
}

impl HolderDistribution {
    /// Per-address distribution. Non-positive and non-finite balances are
    /// ignored.
    pub fn from_balances(balances: &BTreeMap<Address, f64>) -> Self {
        let entries: Vec<(HolderId, f64)> = balances
            .iter()
            .filter(|(_, &b)| b > 0.0 && b.is_finite())
            .map(|(a, &b)| (HolderId::Address(a.clone()), b))
            .collect();
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<(HolderId, f64)>) -> Self {
        let total = sorted_sum(entries.iter().map(|(_, b)| *b));
        HolderDistribution { entries, total }
    }

    pub fn entries(&self) -> &[(HolderId, f64)] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Ascending-order summation, so equal multisets give equal sums.
fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Entity-level distribution: each group's members are summed into one
/// holder; ungrouped addresses stay single holders. Members of groups
/// carrying an excluded flag are dropped.
pub fn entity_balances(
    balances: &BTreeMap<Address, f64>,
    groups: &GroupSet,
    exclude_flags: &BTreeSet<GroupFlag>,
) -> HolderDistribution {
    let membership = groups.membership();
    let excluded = excluded_addresses(groups, exclude_flags);
    let mut grouped: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut entries = Vec::new();
    for (a, &b) in balances.iter().filter(|(_, &b)| b > 0.0 && b.is_finite()) {
        if excluded.contains(a) {
            continue;
        }
        match membership.get(a) {
            Some(&gi) => grouped.entry(groups.groups()[gi].group_id).or_default().push(b),
            None => entries.push((HolderId::Address(a.clone()), b)),
        }
    }
    entries.extend(
        grouped
            .into_iter()
            .map(|(id, bs)| (HolderId::Group(id), sorted_sum(bs.into_iter()))),
    );
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    HolderDistribution::from_entries(entries)
}

fn excluded_addresses(groups: &GroupSet, exclude_flags: &BTreeSet<GroupFlag>) -> BTreeSet<Address> {
    groups
        .groups()
        .iter()
        .filter(|g| !g.flags.is_disjoint(exclude_flags))
        .flat_map(|g| g.members.iter().cloned())
        .collect()
}

/// Share of the total held by the ten largest holders.
pub fn top10_position(dist: &HolderDistribution) -> Result<f64, MetricsError> {
    if dist.total <= 0.0 {
        return Err(MetricsError::ZeroSupply);
    }
    let mut b: Vec<f64> = dist.entries.iter().map(|(_, b)| *b).collect();
    b.sort_by(|x, y| y.total_cmp(x));
    let top = sorted_sum(b.into_iter().take(10));
    Ok((top / dist.total).min(1.0))
}

/// Herfindahl-Hirschman index on fractional shares.
pub fn hhi(dist: &HolderDistribution) -> Result<f64, MetricsError> {
    if dist.total <= 0.0 {
        return Err(MetricsError::ZeroSupply);
    }
    Ok(sorted_sum(dist.entries.iter().map(|(_, b)| (b / dist.total).powi(2))))
}

pub fn vmtv(volume_24h: f64, market_cap: f64) -> Result<f64, MetricsError> {
    if market_cap <= 0.0 {
        return Err(MetricsError::ZeroMarketCap);
    }
    Ok(volume_24h / market_cap)
}

/// Volume over pool liquidity: a turnover ratio, despite the name.
pub fn volatility(volume_24h: f64, pool_liquidity: f64) -> Result<f64, MetricsError> {
    if pool_liquidity <= 0.0 {
        return Err(MetricsError::ZeroLiquidity);
    }
    Ok(volume_24h / pool_liquidity)
}

pub fn pool_value(snapshot: &LiquiditySnapshot) -> f64 {
    snapshot.q_a * snapshot.p_a + snapshot.q_b * snapshot.p_b
}

pub fn holders(dist: &HolderDistribution) -> u64 {
    dist.entries.iter().filter(|(_, b)| *b > 0.0).count() as u64
}

/// USD volume of transfers whose endpoints belong to different entities.
pub fn adjusted_volume<'a>(transfers: impl IntoIterator<Item = &'a Transfer>, groups: &GroupSet) -> f64 {
    let membership = groups.membership();
    sorted_sum(
        transfers
            .into_iter()
            .filter(|t| !same_entity(&membership, &t.from, &t.to))
            .map(|t| t.usd_value),
    )
}

fn same_entity(membership: &HashMap<Address, usize>, a: &Address, b: &Address) -> bool {
    if a == b {
        return true;
    }
    matches!((membership.get(a), membership.get(b)), (Some(x), Some(y)) if x == y)
}

/// Transfers with timestamp in `[end - seconds, end]`.
pub fn window_transfers(transfers: &[Transfer], end: i64, seconds: i64) -> Vec<&Transfer> {
    transfers
        .iter()
        .filter(|t| t.timestamp <= end && t.timestamp >= end - seconds)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub vmtv_cap: f64,
    pub volatility_cap: f64,
    /// Defaults to the largest pool liquidity among the compared tokens.
    pub liquidity_cap: Option<f64>,
    /// Defaults to the largest raw holder count among the compared tokens.
    pub holders_cap: Option<f64>,
    pub exclude_flags: BTreeSet<GroupFlag>,
    pub token_decimals: u32,
    pub volume_window_seconds: i64,
    pub token: String,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            vmtv_cap: 1.0,
            volatility_cap: 5.0,
            liquidity_cap: None,
            holders_cap: None,
            exclude_flags: BTreeSet::new(),
            token_decimals: 18,
            volume_window_seconds: 86_400,
            token: String::new(),
        }
    }
}

fn ratio_pos(value: f64, cap: f64) -> f64 {
    if cap > 0.0 {
        (value / cap).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn positive_transform(ind: &Indicators, caps: &TransformCaps) -> PositiveIndicators {
    PositiveIndicators {
        top10_pos: (1.0 - ind.top10_position).clamp(0.0, 1.0),
        hhi_pos: (1.0 - ind.hhi).clamp(0.0, 1.0),
        vmtv_pos: ratio_pos(ind.vmtv, caps.vmtv_cap),
        volatility_pos: ratio_pos(ind.volatility, caps.volatility_cap),
        liquidity_pos: ratio_pos(ind.pool_liquidity, caps.liquidity_cap),
        holders_pos: ratio_pos(ind.holders as f64, caps.holders_cap),
    }
}

/// Recomputes the positive columns under new caps.
pub fn apply_caps(report: &mut IndicatorReport, caps: TransformCaps) {
    report.caps = caps;
    report.positive_raw = positive_transform(&report.raw, &caps);
    report.positive_adjusted = positive_transform(&report.adjusted, &caps);
}

/// Raw and entity-adjusted indicators for one token.
///
/// Balances come from the market snapshot when it lists any, otherwise from
/// replaying `bundle.transfers`. Raw volume is the snapshot's 24h volume;
/// the adjusted volume subtracts intra-entity transfer volume inside the
/// window ending at the snapshot time. Holders in groups with an excluded
/// flag are left out of both columns.
pub fn compute_report(
    bundle: &DatasetBundle,
    groups: &GroupSet,
    config: &MetricsConfig,
) -> Result<IndicatorReport, MetricsError> {
    let market = bundle.market.as_ref().ok_or(MetricsError::MissingSnapshot("market"))?;
    let pool = bundle.pool.as_ref().ok_or(MetricsError::MissingSnapshot("pool"))?;

    let replayed = replay_balances(&bundle.transfers, config.token_decimals);
    let (balances, source, discrepancies) = if market.balances.is_empty() {
        (replayed, "replay", 0)
    } else {
        let d = count_discrepancies(&market.balances, &replayed);
        (market.balances.clone(), "snapshot", d)
    };

    let excluded = excluded_addresses(groups, &config.exclude_flags);
    let kept: BTreeMap<Address, f64> = balances.into_iter().filter(|(a, _)| !excluded.contains(a)).collect();
    let raw_dist = HolderDistribution::from_balances(&kept);
    let adj_dist = entity_balances(&kept, groups, &config.exclude_flags);

    let window = window_transfers(&bundle.transfers, market.timestamp, config.volume_window_seconds);
    let window_total = sorted_sum(window.iter().map(|t| t.usd_value));
    let intra = (window_total - adjusted_volume(window.iter().copied(), groups)).max(0.0);
    let raw_volume = market.volume_24h;
    let adj_volume = (raw_volume - intra).max(0.0);
    let liquidity = pool_value(pool);

    let column = |dist: &HolderDistribution, volume: f64| -> Result<Indicators, MetricsError> {
        Ok(Indicators {
            top10_position: top10_position(dist)?,
            hhi: hhi(dist)?,
            vmtv: vmtv(volume, market.market_cap)?,
            volatility: volatility(volume, liquidity)?,
            pool_liquidity: liquidity,
            holders: holders(dist),
            volume_24h: volume,
        })
    };
    let raw = column(&raw_dist, raw_volume)?;
    let adjusted = column(&adj_dist, adj_volume)?;

    let caps = TransformCaps {
        vmtv_cap: config.vmtv_cap,
        volatility_cap: config.volatility_cap,
        liquidity_cap: config.liquidity_cap.unwrap_or(liquidity),
        holders_cap: config.holders_cap.unwrap_or(raw.holders as f64),
    };
    let (time_start, time_end) = match (
        bundle.transfers.iter().map(|t| t.timestamp).min(),
        bundle.transfers.iter().map(|t| t.timestamp).max(),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => (market.timestamp, market.timestamp),
    };
    let token = if config.token.is_empty() {
        bundle.transfers.first().map(|t| t.token.clone()).unwrap_or_default()
    } else {
        config.token.clone()
    };
    Ok(IndicatorReport {
        metadata: ReportMetadata {
            token,
            time_start,
            time_end,
            groupset_fingerprint: groups.fingerprint(),
            excluded_flags: config.exclude_flags.clone(),
            balance_source: source.to_string(),
            balance_discrepancies: discrepancies,
        },
        positive_raw: positive_transform(&raw, &caps),
        positive_adjusted: positive_transform(&adjusted, &caps),
        raw,
        adjusted,
        caps,
    })
}

/// Addresses whose snapshot and replayed balances differ by more than one
/// part per million (absence counts as zero).
fn count_discrepancies(snapshot: &BTreeMap<Address, f64>, replayed: &BTreeMap<Address, f64>) -> usize {
    let keys: BTreeSet<&Address> = snapshot.keys().chain(replayed.keys()).collect();
    keys.into_iter()
        .filter(|a| {
            let s = snapshot.get(*a).copied().unwrap_or(0.0);
            let r = replayed.get(*a).copied().unwrap_or(0.0);
            (s - r).abs() > 1e-6 * s.abs().max(r.abs()).max(1e-12)
        })
        .count()
}
