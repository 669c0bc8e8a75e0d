use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::GroupFlag;

/// The six liquidity indicators, in radar-axis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Top10Position,
    Hhi,
    Vmtv,
    Volatility,
    PoolLiquidity,
    Holders,
}

impl Indicator {
    pub const AXES: [Indicator; 6] = [
        Indicator::Top10Position,
        Indicator::Hhi,
        Indicator::Vmtv,
        Indicator::Volatility,
        Indicator::PoolLiquidity,
        Indicator::Holders,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Top10Position => "top10_position",
            Indicator::Hhi => "hhi",
            Indicator::Vmtv => "vmtv",
            Indicator::Volatility => "volatility",
            Indicator::PoolLiquidity => "pool_liquidity",
            Indicator::Holders => "holders",
        }
    }

    /// Name of the positive-transformed axis.
    pub fn positive_name(self) -> &'static str {
        match self {
            Indicator::Top10Position => "top10_pos",
            Indicator::Hhi => "hhi_pos",
            Indicator::Vmtv => "vmtv_pos",
            Indicator::Volatility => "volatility_pos",
            Indicator::PoolLiquidity => "liquidity_pos",
            Indicator::Holders => "holders_pos",
        }
    }
}

/// One column of indicator values (raw or entity-adjusted).
///
/// `volatility` is volume over pool liquidity, a turnover ratio rather than
/// the statistical volatility of returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Indicators {
    pub top10_position: f64,
    pub hhi: f64,
    pub vmtv: f64,
    pub volatility: f64,
    pub pool_liquidity: f64,
    pub holders: u64,
    /// 24h volume the ratios were computed from.
    pub volume_24h: f64,
}

impl Indicators {
    pub fn get(&self, indicator: Indicator) -> f64 {
        match indicator {
            Indicator::Top10Position => self.top10_position,
            Indicator::Hhi => self.hhi,
            Indicator::Vmtv => self.vmtv,
            Indicator::Volatility => self.volatility,
            Indicator::PoolLiquidity => self.pool_liquidity,
            Indicator::Holders => self.holders as f64,
        }
    }
}

/// Positive-transformed values in `[0, 1]`, higher meaning better liquidity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveIndicators {
    pub top10_pos: f64,
    pub hhi_pos: f64,
    pub vmtv_pos: f64,
    pub volatility_pos: f64,
    pub liquidity_pos: f64,
    pub holders_pos: f64,
}

impl PositiveIndicators {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.top10_pos,
            self.hhi_pos,
            self.vmtv_pos,
            self.volatility_pos,
            self.liquidity_pos,
            self.holders_pos,
        ]
    }
}

/// Normalisation caps used by the positive transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformCaps {
    pub vmtv_cap: f64,
    pub volatility_cap: f64,
    pub liquidity_cap: f64,
    pub holders_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub token: String,
    pub time_start: i64,
    pub time_end: i64,
    pub groupset_fingerprint: String,
    pub excluded_flags: BTreeSet<GroupFlag>,
    /// "snapshot" or "replay".
    pub balance_source: String,
    /// Holders whose replayed balance disagrees with the snapshot.
    pub balance_discrepancies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorReport {
    pub metadata: ReportMetadata,
    pub raw: Indicators,
    pub adjusted: Indicators,
    pub caps: TransformCaps,
    pub positive_raw: PositiveIndicators,
    pub positive_adjusted: PositiveIndicators,
}

impl IndicatorReport {
    /// Lists every violated report invariant; empty when consistent.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let (r, a) = (&self.raw, &self.adjusted);
        for (name, col) in [("raw", r), ("adjusted", a)] {
            if !(0.0..=1.0).contains(&col.top10_position) {
                v.push(format!("{name}.top10_position out of [0,1]"));
            }
            if col.holders > 0 && !(col.hhi > 0.0 && col.hhi <= 1.0 + 1e-12) {
                v.push(format!("{name}.hhi out of (0,1]"));
            }
        }
        let eps = 1e-12;
        if a.top10_position + eps < r.top10_position {
            v.push("adjusted top10 below raw".into());
        }
        if a.hhi + eps < r.hhi {
            v.push("adjusted hhi below raw".into());
        }
        if a.holders > r.holders {
            v.push("adjusted holders above raw".into());
        }
        if a.vmtv > r.vmtv + eps {
            v.push("adjusted vmtv above raw".into());
        }
        if a.volatility > r.volatility + eps {
            v.push("adjusted volatility above raw".into());
        }
        for p in [&self.positive_raw, &self.positive_adjusted] {
            if p.to_array().iter().any(|x| !(0.0..=1.0).contains(x)) {
                v.push("positive value out of [0,1]".into());
            }
        }
        v
    }
}
