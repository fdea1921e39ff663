//! Interaction/social datasets, splits, popularity pools and spy users.
//!
//! Ids are dense (`0..n` users, `0..m` items). Social relations are kept as
//! undirected pairs `(a, b)` with `a < b`; [`Dataset::social_relation_count`]
//! reports the symmetrized (directed) count used by the usual density figure.

mod load;
pub mod synth;

pub use load::{load_dataset, write_dataset, LoadOptions};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::SeedStream;

pub type UserId = u32;
pub type ItemId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    user_count: usize,
    item_count: usize,
    /// Users with index `>= real_users` are injected fakes.
    real_users: usize,
    interactions: Vec<(UserId, ItemId)>,
    social: Vec<(UserId, UserId)>,
    user_labels: Vec<String>,
    item_labels: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from dense ids. Duplicate interactions and social
    /// pairs collapse, self-loops are dropped, and social pairs are stored
    /// undirected.
    pub fn from_parts(
        user_count: usize,
        item_count: usize,
        interactions: impl IntoIterator<Item = (UserId, ItemId)>,
        social: impl IntoIterator<Item = (UserId, UserId)>,
    ) -> Result<Self> {
        if user_count == 0 || item_count == 0 {
            return invalid("dataset needs at least one user and one item");
        }
        let mut inter = BTreeSet::new();
        for (u, i) in interactions {
            if u as usize >= user_count || i as usize >= item_count {
                return invalid(format!("interaction ({u}, {i}) out of range"));
            }
            inter.insert((u, i));
        }
        let mut soc = BTreeSet::new();
        for (a, b) in social {
            if a as usize >= user_count || b as usize >= user_count {
                return invalid(format!("social edge ({a}, {b}) out of range"));
            }
            if a != b {
                soc.insert((a.min(b), a.max(b)));
            }
        }
        Ok(Dataset {
            user_count,
            item_count,
            real_users: user_count,
            interactions: inter.into_iter().collect(),
            social: soc.into_iter().collect(),
            user_labels: (0..user_count).map(|u| u.to_string()).collect(),
            item_labels: (0..item_count).map(|i| i.to_string()).collect(),
        })
    }

    pub(crate) fn with_labels(mut self, users: Vec<String>, items: Vec<String>) -> Self {
        debug_assert_eq!(users.len(), self.user_count);
        debug_assert_eq!(items.len(), self.item_count);
        self.user_labels = users;
        self.item_labels = items;
        self
    }

    /// Same users, items and social graph with a replaced interaction set
    /// (typically the training half of a [`Split`]).
    pub fn with_interactions(&self, interactions: &[(UserId, ItemId)]) -> Self {
        let mut inter = interactions.to_vec();
        inter.sort_unstable();
        inter.dedup();
        Dataset { interactions: inter, ..self.clone() }
    }

    pub fn user_count(&self) -> usize {
        self.user_count
    }

    pub fn item_count(&self) -> usize {
        self.item_count
    }

    pub fn real_user_count(&self) -> usize {
        self.real_users
    }

    pub fn is_fake(&self, user: UserId) -> bool {
        user as usize >= self.real_users
    }

    pub fn interactions(&self) -> &[(UserId, ItemId)] {
        &self.interactions
    }

    /// Undirected social pairs, `a < b`.
    pub fn social_edges(&self) -> &[(UserId, UserId)] {
        &self.social
    }

    /// Number of directed relations after symmetrization (2 per pair).
    pub fn social_relation_count(&self) -> usize {
        2 * self.social.len()
    }

    pub fn user_label(&self, user: UserId) -> &str {
        &self.user_labels[user as usize]
    }

    pub fn item_label(&self, item: ItemId) -> &str {
        &self.item_labels[item as usize]
    }

    /// Interaction count per item.
    pub fn popularity(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.item_count];
        for &(_, i) in &self.interactions {
            counts[i as usize] += 1;
        }
        counts
    }

    /// Interaction lists per user, items ascending.
    pub fn user_items(&self) -> Vec<Vec<ItemId>> {
        let mut out = vec![Vec::new(); self.user_count];
        for &(u, i) in &self.interactions {
            out[u as usize].push(i);
        }
        out
    }

    /// Social adjacency lists, neighbours ascending.
    pub fn social_neighbors(&self) -> Vec<Vec<UserId>> {
        let mut out = vec![Vec::new(); self.user_count];
        for &(a, b) in &self.social {
            out[a as usize].push(b);
            out[b as usize].push(a);
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    pub fn social_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.user_count];
        for &(a, b) in &self.social {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        deg
    }

    /// Appends fake users; returns the polluted copy. Used by poison injection.
    pub(crate) fn append_users(
        &self,
        labels: Vec<String>,
        interactions: &[(UserId, ItemId)],
        social: &[(UserId, UserId)],
    ) -> Result<Self> {
        let user_count = self.user_count + labels.len();
        let mut next = Dataset::from_parts(
            user_count,
            self.item_count,
            self.interactions.iter().chain(interactions).copied(),
            self.social.iter().chain(social).copied(),
        )?;
        next.real_users = self.real_users;
        let mut users = self.user_labels.clone();
        users.extend(labels);
        next.user_labels = users;
        next.item_labels = self.item_labels.clone();
        Ok(next)
    }

    pub fn summary(&self) -> DatasetSummary {
        let n = self.user_count as f64;
        let m = self.item_count as f64;
        DatasetSummary {
            users: self.user_count,
            real_users: self.real_users,
            items: self.item_count,
            interactions: self.interactions.len(),
            interaction_density: self.interactions.len() as f64 / (n * m),
            social_relations: self.social_relation_count(),
            social_pairs: self.social.len(),
            social_density: self.social_relation_count() as f64 / (n * n),
        }
    }
}

/// Counts in the shape of the usual dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub users: usize,
    pub real_users: usize,
    pub items: usize,
    pub interactions: usize,
    pub interaction_density: f64,
    pub social_relations: usize,
    pub social_pairs: usize,
    pub social_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<(UserId, ItemId)>,
    pub test: Vec<(UserId, ItemId)>,
}

impl Split {
    /// Training items per user (the exclusion set for ranking).
    pub fn train_items(&self, user_count: usize) -> Vec<Vec<ItemId>> {
        group_by_user(&self.train, user_count)
    }

    pub fn test_items(&self, user_count: usize) -> Vec<Vec<ItemId>> {
        group_by_user(&self.test, user_count)
    }
}

fn group_by_user(pairs: &[(UserId, ItemId)], user_count: usize) -> Vec<Vec<ItemId>> {
    let mut out = vec![Vec::new(); user_count];
    for &(u, i) in pairs {
        out[u as usize].push(i);
    }
    out
}

/// Per-user holdout: `floor(test_fraction * deg(u))` of each user's
/// interactions go to test.
pub fn split_interactions(dataset: &Dataset, test_fraction: f64, seed: SeedStream) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return invalid(format!("test_fraction {test_fraction} outside (0, 1)"));
    }
    if dataset.interactions.is_empty() {
        return invalid("cannot split an empty dataset");
    }
    let mut rng = seed.rng();
    let mut train = Vec::with_capacity(dataset.interactions.len());
    let mut test = Vec::new();
    for (u, mut items) in dataset.user_items().into_iter().enumerate() {
        let k = (test_fraction * items.len() as f64).floor() as usize;
        let (held, _) = items.partial_shuffle(&mut rng, k);
        let mut held = held.to_vec();
        held.sort_unstable();
        for &i in &items {
            if held.binary_search(&i).is_ok() {
                test.push((u as UserId, i));
            } else {
                train.push((u as UserId, i));
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PoolRule {
    /// Bottom `quantile` of items by popularity.
    ColdQuantile(f64),
    /// Top-k most popular items.
    PopularTop(usize),
    /// Items whose popularity rank falls in `[lo, hi)` (fractions of m).
    RankBand(f64, f64),
    AllItems,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemPool {
    pub items: Vec<ItemId>,
    pub rule: PoolRule,
}

impl ItemPool {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&item)
    }

    /// Membership mask over `0..item_count`.
    pub fn mask(&self, item_count: usize) -> Vec<bool> {
        let mut mask = vec![false; item_count];
        for &i in &self.items {
            mask[i as usize] = true;
        }
        mask
    }

    pub fn all(item_count: usize) -> Self {
        ItemPool { items: (0..item_count as ItemId).collect(), rule: PoolRule::AllItems }
    }
}

/// Items ordered by ascending popularity, ties by ascending id.
pub fn popularity_order(dataset: &Dataset) -> Vec<ItemId> {
    let counts = dataset.popularity();
    let mut order: Vec<ItemId> = (0..dataset.item_count as ItemId).collect();
    order.sort_by_key(|&i| (counts[i as usize], i));
    order
}

/// The `floor(quantile * m)` least-interacted items.
pub fn cold_start_pool(dataset: &Dataset, quantile: f64) -> Result<ItemPool> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return invalid(format!("quantile {quantile} outside (0, 1]"));
    }
    let take = (quantile * dataset.item_count as f64).floor() as usize;
    let mut items = popularity_order(dataset);
    items.truncate(take);
    Ok(ItemPool { items, rule: PoolRule::ColdQuantile(quantile) })
}

/// The `top_k` most-interacted items; ties by ascending id.
pub fn popular_pool(dataset: &Dataset, top_k: usize) -> Result<ItemPool> {
    if top_k == 0 || top_k > dataset.item_count {
        return invalid(format!("top_k {top_k} outside [1, {}]", dataset.item_count));
    }
    let counts = dataset.popularity();
    let mut items: Vec<ItemId> = (0..dataset.item_count as ItemId).collect();
    items.sort_by_key(|&i| (std::cmp::Reverse(counts[i as usize]), i));
    items.truncate(top_k);
    Ok(ItemPool { items, rule: PoolRule::PopularTop(top_k) })
}

/// Items whose ascending-popularity rank lies in `[lo*m, hi*m)`.
pub fn popularity_band(dataset: &Dataset, lo: f64, hi: f64) -> Result<ItemPool> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) {
        return invalid(format!("band [{lo}, {hi}) is not a sub-interval of [0, 1]"));
    }
    let m = dataset.item_count as f64;
    let order = popularity_order(dataset);
    let (a, b) = ((lo * m).floor() as usize, (hi * m).floor() as usize);
    let items = order[a..b.max(a)].to_vec();
    if items.is_empty() {
        return invalid("popularity band selects no items");
    }
    Ok(ItemPool { items, rule: PoolRule::RankBand(lo, hi) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpySet {
    pub users: Vec<UserId>,
}

impl SpySet {
    pub fn size(&self) -> usize {
        self.users.len()
    }
}

/// Uniform sample of real users without replacement.
pub fn select_spies(dataset: &Dataset, count: usize, seed: SeedStream) -> Result<SpySet> {
    let n = dataset.real_user_count();
    if count > n {
        return invalid(format!("{count} spies requested from {n} users"));
    }
    let mut users: Vec<UserId> = (0..n as UserId).collect();
    let mut rng = seed.rng();
    let (picked, _) = users.partial_shuffle(&mut rng, count);
    Ok(SpySet { users: picked.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        // items 0..4 with counts [5,1,1,9] would need many users; use a
        // compact one instead.
        Dataset::from_parts(
            3,
            4,
            vec![(0, 0), (0, 1), (1, 0), (2, 3), (1, 3), (0, 3), (0, 0)],
            vec![(0, 1), (1, 0), (2, 2)],
        )
        .unwrap()
    }

    #[test]
    fn from_parts_dedups_and_symmetrizes() {
        let d = toy();
        assert_eq!(d.interactions().len(), 6);
        assert_eq!(d.social_edges(), &[(0, 1)]);
        assert_eq!(d.social_relation_count(), 2);
        assert_eq!(d.popularity().iter().sum::<u32>() as usize, d.interactions().len());
    }

    #[test]
    fn out_of_range_ids_rejected() {
        assert!(Dataset::from_parts(2, 2, vec![(2, 0)], vec![]).is_err());
        assert!(Dataset::from_parts(2, 2, vec![(0, 0)], vec![(0, 5)]).is_err());
    }

    fn counts_dataset(counts: &[u32]) -> Dataset {
        let users = *counts.iter().max().unwrap() as usize;
        let mut inter = Vec::new();
        for (i, &c) in counts.iter().enumerate() {
            for u in 0..c {
                inter.push((u, i as ItemId));
            }
        }
        Dataset::from_parts(users, counts.len(), inter, vec![]).unwrap()
    }

    #[test]
    fn cold_pool_tie_break() {
        let d = counts_dataset(&[5, 1, 1, 9]);
        let pool = cold_start_pool(&d, 0.5).unwrap();
        assert_eq!(pool.items, vec![1, 2]);
        let all = cold_start_pool(&d, 1.0).unwrap();
        assert_eq!(all.items, vec![1, 2, 0, 3]);
        assert!(cold_start_pool(&d, 0.0).is_err());
    }

    #[test]
    fn popular_pool_argmax_and_range() {
        let d = counts_dataset(&[3, 3, 7]);
        assert_eq!(popular_pool(&d, 1).unwrap().items, vec![2]);
        assert_eq!(popular_pool(&d, 3).unwrap().items, vec![2, 0, 1]);
        assert!(popular_pool(&d, 0).is_err());
        assert!(popular_pool(&d, 4).is_err());
    }

    #[test]
    fn split_floor_arithmetic() {
        let mut inter: Vec<(UserId, ItemId)> = (0..10).map(|i| (0, i)).collect();
        inter.push((1, 3));
        let d = Dataset::from_parts(2, 10, inter, vec![]).unwrap();
        let s = split_interactions(&d, 0.2, SeedStream::new(1)).unwrap();
        assert_eq!(s.test.iter().filter(|p| p.0 == 0).count(), 2);
        assert_eq!(s.train.iter().filter(|p| p.0 == 0).count(), 8);
        assert_eq!(s.test.iter().filter(|p| p.0 == 1).count(), 0);
        assert_eq!(s, split_interactions(&d, 0.2, SeedStream::new(1)).unwrap());
        assert!(split_interactions(&d, 1.0, SeedStream::new(1)).is_err());
        assert!(split_interactions(&d, 0.0, SeedStream::new(1)).is_err());
    }

    #[test]
    fn spies_are_distinct_and_deterministic() {
        let d = counts_dataset(&[9, 2]);
        let a = select_spies(&d, 5, SeedStream::new(3)).unwrap();
        let b = select_spies(&d, 5, SeedStream::new(3)).unwrap();
        assert_eq!(a, b);
        let set: BTreeSet<_> = a.users.iter().collect();
        assert_eq!(set.len(), 5);
        let all = select_spies(&d, 9, SeedStream::new(3)).unwrap();
        let set: BTreeSet<_> = all.users.iter().copied().collect();
        assert_eq!(set, (0..9).collect());
        assert!(select_spies(&d, 10, SeedStream::new(3)).is_err());
    }
}
