//! Serde adapters for USD and token quantities carried as decimal strings.

use std::collections::BTreeMap;

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serializer};

use super::Address;

#[derive(Deserialize)]
#[serde(untagged)]
enum StrOrNum {
    Str(String),
    Num(f64),
}

pub(crate) fn parse_non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a decimal: {s:?}"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("expected a finite non-negative decimal, got {s:?}"));
    }
    Ok(v)
}

fn to_value<E: de::Error>(raw: StrOrNum) -> Result<f64, E> {
    match raw {
        StrOrNum::Str(s) => parse_non_negative(&s).map_err(E::custom),
        StrOrNum::Num(v) if v.is_finite() && v >= 0.0 => Ok(v),
        StrOrNum::Num(v) => Err(E::custom(format!("negative or non-finite value {v}"))),
    }
}

pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&value.to_string())
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    to_value(StrOrNum::deserialize(d)?)
}

pub mod map {
    use super::*;
    use serde::ser::SerializeMap;

    pub fn serialize<S: Serializer>(value: &BTreeMap<Address, f64>, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(value.len()))?;
        for (k, v) in value {
            m.serialize_entry(k.as_str(), &v.to_string())?;
        }
        m.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Address, f64>, D::Error> {
        let raw: BTreeMap<String, StrOrNum> = BTreeMap::deserialize(d)?;
        let mut out = BTreeMap::new();
        for (k, v) in raw {
            let addr = Address::new(&k).map_err(de::Error::custom)?;
            let value = to_value(v)?;
            // Differently-cased duplicates collapse onto one holder.
            *out.entry(addr).or_insert(0.0) += value;
        }
        Ok(out)
    }
}
