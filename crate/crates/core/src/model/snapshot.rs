use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Address;

/// Two-sided AMM pool state at one moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquiditySnapshot {
    #[serde(with = "super::decimal")]
    pub q_a: f64,
    #[serde(with = "super::decimal")]
    pub q_b: f64,
    #[serde(with = "super::decimal")]
    pub p_a: f64,
    #[serde(with = "super::decimal")]
    pub p_b: f64,
    pub timestamp: i64,
}

/// Market-level figures plus the holder balances at snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    #[serde(with = "super::decimal")]
    pub volume_24h: f64,
    #[serde(with = "super::decimal")]
    pub market_cap: f64,
    #[serde(with = "super::decimal::map")]
    pub balances: BTreeMap<Address, f64>,
    pub timestamp: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_string_decimals() {
        let p: LiquiditySnapshot =
            serde_json::from_str(r#"{"q_a":"1000","q_b":"2","p_a":"500","p_b":"4","timestamp":7}"#).unwrap();
        assert_eq!(p.q_a, 1000.0);
        assert_eq!(p.p_b, 4.0);
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains(r#""q_a":"1000""#));
    }

    #[test]
    fn rejects_negative() {
        let r: Result<LiquiditySnapshot, _> =
            serde_json::from_str(r#"{"q_a":"-1","q_b":"2","p_a":"500","p_b":"4","timestamp":7}"#);
        assert!(r.is_err());
        let m: Result<MarketSnapshot, _> =
            serde_json::from_str(r#"{"volume_24h":"1","market_cap":"2","balances":{"0xA":"-3"},"timestamp":1}"#);
        assert!(m.is_err());
    }

    #[test]
    fn balances_normalize_addresses() {
        let m: MarketSnapshot = serde_json::from_str(
            r#"{"volume_24h":"1","market_cap":"2","balances":{"0xA":"3","0xa":"1.5"},"timestamp":1}"#,
        )
        .unwrap();
        assert_eq!(m.balances.len(), 1);
        assert_eq!(m.balances[&Address::new("0xa").unwrap()], 4.5);
    }
}
