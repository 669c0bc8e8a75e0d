//! Domain types shared by every pipeline stage.

mod address;
pub(crate) mod decimal;
mod graph;
mod group;
mod indicators;
mod snapshot;
mod transfer;

pub use address::Address;
pub use graph::{EdgeStats, TransactionGraph};
pub use group::{EntityGroup, Evidence, GroupFlag, GroupSet, GroupSetFile};
pub use indicators::{Indicator, IndicatorReport, Indicators, PositiveIndicators, ReportMetadata, TransformCaps};
pub use snapshot::{LiquiditySnapshot, MarketSnapshot};
pub use transfer::{AddressLabel, LabelCategory, LabelIndex, Transfer};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("address is empty")]
    EmptyAddress,
    #[error("unknown label category {0:?}")]
    UnknownCategory(String),
    #[error("unknown group flag {0:?}")]
    UnknownFlag(String),
    #[error("{0} must be finite and non-negative")]
    NegativeValue(&'static str),
    #[error("group {0} has no members")]
    EmptyGroup(u64),
    #[error("linkage probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("address {0} is not in the universe")]
    OutsideUniverse(Address),
    #[error("address {address} is in groups {first} and {second}")]
    OverlappingGroups { address: Address, first: u64, second: u64 },
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Transfer at block `block`, 60 s per block, token "tok".
    pub fn transfer(hash: &str, block: u64, from: &str, to: &str, raw: u128, usd: f64) -> Transfer {
        Transfer {
            tx_hash: hash.to_string(),
            block_number: block,
            timestamp: 1_700_000_000 + block as i64 * 60,
            from: Address::new(from).unwrap(),
            to: Address::new(to).unwrap(),
            token: "tok".to_string(),
            raw_amount: raw,
            usd_value: usd,
            gas_fee: 0.0001,
        }
    }

    pub fn addr(s: &str) -> Address {
        Address::new(s).unwrap()
    }
}
