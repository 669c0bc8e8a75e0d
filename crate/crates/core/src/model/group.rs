use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Address, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub detector: String,
    pub detail: String,
    pub weight: f64,
}

impl Evidence {
    pub fn new(detector: impl Into<String>, detail: impl Into<String>, weight: f64) -> Self {
        Evidence {
            detector: detector.into(),
            detail: detail.into(),
            weight: weight.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupFlag {
    SuspectedMarketMaker,
}

impl GroupFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupFlag::SuspectedMarketMaker => "suspected_market_maker",
        }
    }
}

impl FromStr for GroupFlag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "suspected_market_maker" => Ok(GroupFlag::SuspectedMarketMaker),
            other => Err(ModelError::UnknownFlag(other.to_string())),
        }
    }
}

impl fmt::Display for GroupFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A set of addresses attributed to one controlling entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityGroup {
    pub group_id: u64,
    pub members: BTreeSet<Address>,
    pub linkage_probability: f64,
    #[serde(default)]
    pub flags: BTreeSet<GroupFlag>,
    pub evidence: Vec<Evidence>,
}

impl EntityGroup {
    pub fn new(members: BTreeSet<Address>, evidence: Vec<Evidence>) -> Self {
        EntityGroup {
            group_id: 0,
            members,
            linkage_probability: 0.0,
            flags: BTreeSet::new(),
            evidence,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.members.is_empty() {
            return Err(ModelError::EmptyGroup(self.group_id));
        }
        if !(0.0..=1.0).contains(&self.linkage_probability) {
            return Err(ModelError::ProbabilityOutOfRange(self.linkage_probability));
        }
        Ok(())
    }
}

/// Disjoint entity groups over a universe of addresses. Addresses in the
/// universe but in no group are implicit singleton entities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSet {
    groups: Vec<EntityGroup>,
    universe: BTreeSet<Address>,
}

impl GroupSet {
    pub fn new(groups: Vec<EntityGroup>, universe: BTreeSet<Address>) -> Result<Self, ModelError> {
        let mut seen: HashMap<&Address, u64> = HashMap::new();
        for g in &groups {
            g.validate()?;
            for m in &g.members {
                if !universe.contains(m) {
                    return Err(ModelError::OutsideUniverse(m.clone()));
                }
                if let Some(prev) = seen.insert(m, g.group_id) {
                    return Err(ModelError::OverlappingGroups {
                        address: m.clone(),
                        first: prev,
                        second: g.group_id,
                    });
                }
            }
        }
        Ok(GroupSet { groups, universe })
    }

    pub fn empty(universe: BTreeSet<Address>) -> Self {
        GroupSet {
            groups: Vec::new(),
            universe,
        }
    }

    pub fn groups(&self) -> &[EntityGroup] {
        &self.groups
    }

    pub fn universe(&self) -> &BTreeSet<Address> {
        &self.universe
    }

    pub fn grouped_address_count(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }

    pub fn singleton_count(&self) -> usize {
        self.universe.len() - self.grouped_address_count()
    }

    /// Address -> position of its group in [`GroupSet::groups`].
    pub fn membership(&self) -> HashMap<Address, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.members.iter().map(move |m| (m.clone(), i)))
            .collect()
    }

    /// Stable hash of group memberships, independent of group order and ids.
    pub fn fingerprint(&self) -> String {
        let mut member_lists: Vec<Vec<&str>> = self
            .groups
            .iter()
            .map(|g| g.members.iter().map(Address::as_str).collect())
            .collect();
        member_lists.sort();
        let mut hasher = Sha256::new();
        hasher.update(self.universe.len().to_le_bytes());
        for list in member_lists {
            for m in list {
                hasher.update(m.as_bytes());
                hasher.update([0u8]);
            }
            hasher.update([1u8]);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_file(&self) -> GroupSetFile {
        GroupSetFile {
            groups: self.groups.clone(),
            universe_size: self.universe.len(),
            singleton_count: self.singleton_count(),
        }
    }

    /// Rebuild from the serialized form. The universe is not stored in the
    /// file, so it is taken as the union of `extra_universe` and all members.
    pub fn from_file(
        file: GroupSetFile,
        extra_universe: impl IntoIterator<Item = Address>,
    ) -> Result<Self, ModelError> {
        let mut universe: BTreeSet<Address> = extra_universe.into_iter().collect();
        for g in &file.groups {
            universe.extend(g.members.iter().cloned());
        }
        GroupSet::new(file.groups, universe)
    }
}

/// On-disk GroupSet layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSetFile {
    pub groups: Vec<EntityGroup>,
    pub universe_size: usize,
    #[serde(default)]
    pub singleton_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> Address {
        Address::new(s).unwrap()
    }

    fn group(id: u64, members: &[&str]) -> EntityGroup {
        let mut g = EntityGroup::new(members.iter().map(|m| addr(m)).collect(), vec![]);
        g.group_id = id;
        g
    }

    #[test]
    fn rejects_overlap_and_foreign_members() {
        let universe: BTreeSet<Address> = ["a", "b", "c"].iter().map(|s| addr(s)).collect();
        assert!(matches!(
            GroupSet::new(vec![group(0, &["a", "b"]), group(1, &["b", "c"])], universe.clone()),
            Err(ModelError::OverlappingGroups { .. })
        ));
        assert!(matches!(
            GroupSet::new(vec![group(0, &["a", "z"])], universe.clone()),
            Err(ModelError::OutsideUniverse(_))
        ));
        let gs = GroupSet::new(vec![group(0, &["a", "b"])], universe).unwrap();
        assert_eq!(gs.singleton_count(), 1);
    }

    #[test]
    fn fingerprint_ignores_group_order() {
        let universe: BTreeSet<Address> = ["a", "b", "c", "d"].iter().map(|s| addr(s)).collect();
        let x = GroupSet::new(vec![group(0, &["a", "b"]), group(1, &["c", "d"])], universe.clone()).unwrap();
        let y = GroupSet::new(vec![group(7, &["c", "d"]), group(3, &["a", "b"])], universe).unwrap();
        assert_eq!(x.fingerprint(), y.fingerprint());
    }

    #[test]
    fn file_round_trip() {
        let universe: BTreeSet<Address> = ["a", "b", "c"].iter().map(|s| addr(s)).collect();
        let gs = GroupSet::new(vec![group(0, &["a", "b"])], universe.clone()).unwrap();
        let json = serde_json::to_string(&gs.to_file()).unwrap();
        let back: GroupSetFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.universe_size, 3);
        let gs2 = GroupSet::from_file(back, universe).unwrap();
        assert_eq!(gs, gs2);
    }
}
