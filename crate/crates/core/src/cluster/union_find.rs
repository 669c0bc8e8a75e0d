use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::model::{Address, EntityGroup};

/// Addresses connected through overlapping input groups, with the indices
/// of the input groups that contributed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperGroup {
    pub members: BTreeSet<Address>,
    pub sources: Vec<usize>,
}

/// Merges groups that share any address. The result is sorted by member
/// list and does not depend on the input order.
pub fn merge_overlapping(groups: &[EntityGroup]) -> Vec<SuperGroup> {
    let mut ids: HashMap<&Address, usize> = HashMap::new();
    let mut parent: Vec<usize> = Vec::new();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for g in groups {
        let mut first = None;
        for a in &g.members {
            let id = *ids.entry(a).or_insert_with(|| {
                parent.push(parent.len());
                parent.len() - 1
            });
            match first {
                None => first = Some(id),
                Some(f) => {
                    let (ra, rb) = (find(&mut parent, f), find(&mut parent, id));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }

    let mut by_root: BTreeMap<usize, SuperGroup> = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        let Some(a) = g.members.iter().next() else { continue };
        let root = find(&mut parent, ids[a]);
        let entry = by_root.entry(root).or_insert_with(|| SuperGroup {
            members: BTreeSet::new(),
            sources: Vec::new(),
        });
        entry.members.extend(g.members.iter().cloned());
        entry.sources.push(gi);
    }
    let mut out: Vec<SuperGroup> = by_root.into_values().collect();
    out.sort_by(|a, b| a.members.cmp(&b.members));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Evidence;
    use proptest::prelude::*;

    fn group(names: &[&str]) -> EntityGroup {
        EntityGroup::new(
            names.iter().map(|n| n.parse().unwrap()).collect(),
            vec![Evidence::new("t", "", 1.0)],
        )
    }

    fn member_lists(sg: &[SuperGroup]) -> Vec<Vec<String>> {
        sg.iter()
            .map(|s| s.members.iter().map(|a| a.to_string()).collect())
            .collect()
    }

    #[test]
    fn overlapping_pairs_merge() {
        let out = merge_overlapping(&[group(&["a", "b"]), group(&["b", "c"]), group(&["x", "y"])]);
        assert_eq!(member_lists(&out), vec![vec!["a", "b", "c"], vec!["x", "y"]]);
        assert_eq!(out[0].sources, vec![0, 1]);
    }

    proptest! {
        #[test]
        fn order_independent(
            sets in prop::collection::vec(prop::collection::btree_set(0u8..20, 1..5), 0..15),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let groups: Vec<EntityGroup> = sets
                .iter()
                .map(|s| {
                    let names: Vec<String> = s.iter().map(|x| format!("n{x}")).collect();
                    group(&names.iter().map(String::as_str).collect::<Vec<_>>())
                })
                .collect();
            let mut shuffled = groups.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = member_lists(&merge_overlapping(&groups));
            let b = member_lists(&merge_overlapping(&shuffled));
            prop_assert_eq!(&a, &b);
            // Disjoint output covering exactly the input addresses.
            let total: usize = a.iter().map(Vec::len).sum();
            let all: BTreeSet<String> = a.iter().flatten().cloned().collect();
            prop_assert_eq!(total, all.len());
            let input: BTreeSet<String> = sets.iter().flatten().map(|x| format!("n{x}")).collect();
            prop_assert_eq!(all, input);
        }
    }
}
