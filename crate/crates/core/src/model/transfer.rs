use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Address, ModelError};

/// One token (or native-currency) movement between two addresses.
///
/// `raw_amount` is in token base units. `usd_value` comes from the input
/// data; rows without a valuation carry 0 and fall under every detector's
/// minimum-amount floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub tx_hash: String,
    pub block_number: u64,
    pub timestamp: i64,
    pub from: Address,
    pub to: Address,
    pub token: String,
    pub raw_amount: u128,
    pub usd_value: f64,
    pub gas_fee: f64,
}

impl Transfer {
    /// Total order that does not depend on input position. Used wherever a
    /// detector needs "the first" of several transfers.
    pub fn chronological_cmp(&self, other: &Transfer) -> Ordering {
        self.block_number
            .cmp(&other.block_number)
            .then(self.timestamp.cmp(&other.timestamp))
            .then_with(|| self.tx_hash.cmp(&other.tx_hash))
            .then_with(|| self.from.cmp(&other.from))
            .then_with(|| self.to.cmp(&other.to))
            .then(self.raw_amount.cmp(&other.raw_amount))
            .then(self.usd_value.total_cmp(&other.usd_value))
    }

    /// UTC hour of day in `0..24`.
    pub fn hour_of_day(&self) -> usize {
        self.timestamp.rem_euclid(86_400) as usize / 3_600
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.usd_value.is_finite() && self.usd_value >= 0.0) {
            return Err(ModelError::NegativeValue("usd_value"));
        }
        if !(self.gas_fee.is_finite() && self.gas_fee >= 0.0) {
            return Err(ModelError::NegativeValue("gas_fee"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelCategory {
    SmartContract,
    HotWallet,
    Project,
    MultiSendContract,
    Exchange,
    Other,
}

impl LabelCategory {
    pub const ALL: [LabelCategory; 6] = [
        LabelCategory::SmartContract,
        LabelCategory::HotWallet,
        LabelCategory::Project,
        LabelCategory::MultiSendContract,
        LabelCategory::Exchange,
        LabelCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelCategory::SmartContract => "smart_contract",
            LabelCategory::HotWallet => "hot_wallet",
            LabelCategory::Project => "project",
            LabelCategory::MultiSendContract => "multi_send_contract",
            LabelCategory::Exchange => "exchange",
            LabelCategory::Other => "other",
        }
    }

    /// Shared addresses whose transfers say nothing about common ownership.
    pub fn is_public(self) -> bool {
        matches!(
            self,
            LabelCategory::SmartContract | LabelCategory::HotWallet | LabelCategory::Exchange
        )
    }
}

impl FromStr for LabelCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LabelCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| ModelError::UnknownCategory(s.to_string()))
    }
}

impl fmt::Display for LabelCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressLabel {
    pub address: Address,
    pub category: LabelCategory,
    pub source: String,
}

/// Lookup table over a label list. An address may carry several categories.
#[derive(Debug, Clone, Default)]
pub struct LabelIndex {
    by_address: HashMap<Address, BTreeSet<LabelCategory>>,
}

impl LabelIndex {
    pub fn new(labels: &[AddressLabel]) -> Self {
        let mut by_address: HashMap<Address, BTreeSet<LabelCategory>> = HashMap::new();
        for label in labels {
            by_address
                .entry(label.address.clone())
                .or_default()
                .insert(label.category);
        }
        LabelIndex { by_address }
    }

    pub fn categories(&self, address: &Address) -> Option<&BTreeSet<LabelCategory>> {
        self.by_address.get(address)
    }

    pub fn has(&self, address: &Address, category: LabelCategory) -> bool {
        self.by_address.get(address).is_some_and(|c| c.contains(&category))
    }

    pub fn is_labeled(&self, address: &Address) -> bool {
        self.by_address.contains_key(address)
    }

    pub fn is_public(&self, address: &Address) -> bool {
        self.by_address
            .get(address)
            .is_some_and(|c| c.iter().any(|c| c.is_public()))
    }

    pub fn is_empty(&self) -> bool {
        self.by_address.is_empty()
    }
}
