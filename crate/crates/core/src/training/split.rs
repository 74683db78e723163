use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mixture::MixtureRecord;
use crate::Label;

/// Indices of the train, validation and test splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn parts(&self) -> [&Vec<usize>; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Group-disjoint, label-stratified split.
///
/// Items sharing a group key always land in the same split. Groups are
/// visited largest first, in seeded random order within a size; each goes to
/// the split whose per-label quota is furthest from being met, weighted by
/// the group's label counts.
pub fn split_groups(items: &[(&str, Label)], ratio: [u32; 3], seed: u64) -> Result<SplitIndices> {
    if items.is_empty() {
        return Err(Error::Split("cannot split an empty manifest".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (key, _)) in items.iter().enumerate() {
        groups.entry(key).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // large groups first; small ones then even out the quotas
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));

    let total_ratio: f64 = ratio.iter().map(|&r| r as f64).sum();
    let label_totals = [Label::Single, Label::Multi]
        .map(|l| items.iter().filter(|(_, x)| *x == l).count() as f64);
    // remaining quota per split and label
    let mut quota = [[0.0f64; 2]; 3];
    for k in 0..3 {
        for l in 0..2 {
            quota[k][l] = label_totals[l] * ratio[k] as f64 / total_ratio;
        }
    }
    let mut out: [Vec<usize>; 3] = Default::default();
    for g in groups {
        let counts = [Label::Single, Label::Multi]
            .map(|l| g.iter().filter(|&&i| items[i].1 == l).count() as f64);
        let score = |k: usize| counts[0] * quota[k][0] + counts[1] * quota[k][1];
        let best = (0..3).fold(0, |b, k| if score(k) > score(b) { k } else { b });
        for l in 0..2 {
            quota[best][l] -= counts[l];
        }
        out[best].extend(g);
    }
    for part in out.iter_mut() {
        part.sort_unstable();
    }
    let [train, val, test] = out;
    for (name, part) in [("train", &train), ("val", &val), ("test", &test)] {
        if part.is_empty() {
            return Err(Error::Split(format!(
                "{} items in distinct source groups are too few to fill the {name} split",
                items.len()
            )));
        }
    }
    Ok(SplitIndices { train, val, test })
}

/// Splits mixture records so that no target source file spans two splits.
pub fn split_dataset(
    records: &[MixtureRecord],
    ratio: [u32; 3],
    seed: u64,
) -> Result<(Vec<MixtureRecord>, Vec<MixtureRecord>, Vec<MixtureRecord>)> {
    let items: Vec<(&str, Label)> = records
        .iter()
        .map(|r| (r.target_source.file.as_str(), r.label))
        .collect();
    let idx = split_groups(&items, ratio, seed)?;
    let take = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((take(&idx.train), take(&idx.val), take(&idx.test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn label(i: usize) -> Label {
        if i % 2 == 0 {
            Label::Single
        } else {
            Label::Multi
        }
    }

    #[test]
    fn distinct_sources_split_exactly() {
        let keys: Vec<String> = (0..1000).map(|i| format!("src{i}")).collect();
        let items: Vec<(&str, Label)> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), label(i))).collect();
        let s = split_groups(&items, [8, 1, 1], 7).unwrap();
        assert_eq!([s.train.len(), s.val.len(), s.test.len()], [800, 100, 100]);
        assert_eq!(s, split_groups(&items, [8, 1, 1], 7).unwrap());
    }

    #[test]
    fn too_few_groups_is_an_error() {
        let items = [("a", Label::Single), ("a", Label::Multi), ("b", Label::Single)];
        assert!(matches!(split_groups(&items, [8, 1, 1], 0), Err(Error::Split(_))));
        assert!(split_groups(&[], [8, 1, 1], 0).is_err());
    }

    proptest! {
        #[test]
        fn groups_stay_together_and_labels_balance(
            seed in 0u64..1000,
            sizes in proptest::collection::vec(1usize..5, 150..300),
        ) {
            let mut keys = Vec::new();
            for (g, &n) in sizes.iter().enumerate() {
                for _ in 0..n {
                    keys.push(format!("g{g}"));
                }
            }
            let items: Vec<(&str, Label)> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), label(i))).collect();
            let s = split_groups(&items, [8, 1, 1], seed).unwrap();
            let mut seen = HashSet::new();
            let mut all = 0;
            let global = items.iter().filter(|x| x.1 == Label::Single).count() as f64 / items.len() as f64;
            for part in s.parts() {
                let keys: HashSet<&str> = part.iter().map(|&i| items[i].0).collect();
                for k in &keys {
                    prop_assert!(seen.insert(*k), "group {} in two splits", k);
                }
                all += part.len();
                let frac = part.iter().filter(|&&i| items[i].1 == Label::Single).count() as f64 / part.len() as f64;
                prop_assert!((frac - global).abs() <= 0.02 + 1e-12, "label fraction {} vs {}", frac, global);
            }
            prop_assert_eq!(all, items.len());
        }
    }
}
