//! Synthetic datasets shaped like the LastFM social-music benchmark.
//!
//! Users and items belong to latent taste groups. Item popularity follows a
//! Zipf law, users mostly consume inside their own group, and friendships
//! mostly stay inside the group, which gives the social graph a community
//! structure and the item catalogue a long cold tail.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Exp1, LogNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, ItemId, UserId};
use crate::error::{invalid, Result};
use crate::seed::SeedStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    /// Undirected friendship pairs.
    pub social_pairs: usize,
    pub groups: usize,
    /// Probability that an interaction is drawn from the user's own group.
    pub own_group_bias: f64,
    /// Probability that a friendship stays inside the group.
    pub intra_social_bias: f64,
    pub zipf_exponent: f64,
}

impl SyntheticConfig {
    /// LastFM-sized: 1892 users, 17632 items, 92834 interactions and
    /// 12717 friendship pairs (25434 directed relations).
    pub fn lastfm_like() -> Self {
        SyntheticConfig {
            users: 1892,
            items: 17632,
            interactions: 92834,
            social_pairs: 12717,
            groups: 12,
            own_group_bias: 0.9,
            intra_social_bias: 0.9,
            zipf_exponent: 1.0,
        }
    }

    /// Same shape at a fraction of the size, for fast tests.
    pub fn small() -> Self {
        SyntheticConfig {
            users: 200,
            items: 800,
            interactions: 6000,
            social_pairs: 900,
            groups: 5,
            ..Self::lastfm_like()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.users < 2 || self.items == 0 || self.groups == 0 {
            return invalid("synthetic config needs >= 2 users, >= 1 item, >= 1 group");
        }
        if self.interactions < self.items || self.interactions > self.users * self.items / 2 {
            return invalid("interaction target must cover every item and stay below half density");
        }
        if self.social_pairs > self.users * (self.users - 1) / 4 {
            return invalid("social pair target too dense");
        }
        for p in [self.own_group_bias, self.intra_social_bias] {
            if !(0.0..=1.0).contains(&p) {
                return invalid("group biases must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub dataset: Dataset,
    /// Latent taste group per user (ground truth for diagnostics).
    pub user_groups: Vec<usize>,
}

fn members(groups: &[usize], count: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new(); count];
    for (idx, &g) in groups.iter().enumerate() {
        out[g].push(idx as u32);
    }
    out
}

fn weighted(weights: impl IntoIterator<Item = f64>) -> Option<WeightedIndex<f64>> {
    WeightedIndex::new(weights).ok()
}

pub fn generate(config: &SyntheticConfig, seed: SeedStream) -> Result<SyntheticWorld> {
    config.validate()?;
    let (n, m, g) = (config.users, config.items, config.groups);
    let mut rng = seed.rng();

    let raw: Vec<f64> = (0..g).map(|_| Exp1.sample(&mut rng)).collect();
    let group_pick = weighted(raw).expect("exponential draws are positive");
    let user_groups: Vec<usize> = (0..n).map(|_| group_pick.sample(&mut rng)).collect();
    let item_groups: Vec<usize> = (0..m).map(|_| group_pick.sample(&mut rng)).collect();
    let user_members = members(&user_groups, g);
    let item_members = members(&item_groups, g);

    let mut ranks: Vec<usize> = (1..=m).collect();
    ranks.shuffle(&mut rng);
    let pop: Vec<f64> = ranks.iter().map(|&r| (r as f64).powf(-config.zipf_exponent)).collect();

    let mut inter: BTreeSet<(UserId, ItemId)> = BTreeSet::new();
    for (i, &gi) in item_groups.iter().enumerate() {
        let u = match user_members[gi].choose(&mut rng) {
            Some(&u) => u,
            None => rng.gen_range(0..n) as u32,
        };
        inter.insert((u, i as ItemId));
    }

    let global = weighted(pop.iter().copied()).expect("zipf weights are positive");
    let per_group: Vec<Option<WeightedIndex<f64>>> = item_members
        .iter()
        .map(|items| weighted(items.iter().map(|&i| pop[i as usize])))
        .collect();
    let rest = config.interactions - inter.len();
    for u in 0..n {
        let quota = rest / n + usize::from(u < rest % n);
        let own = &per_group[user_groups[u]];
        let (mut added, mut tries) = (0, 0);
        while added < quota && tries < 50 * quota + 100 {
            tries += 1;
            let item = match own {
                Some(dist) if rng.gen::<f64>() < config.own_group_bias => {
                    item_members[user_groups[u]][dist.sample(&mut rng)]
                }
                _ => global.sample(&mut rng) as ItemId,
            };
            if inter.insert((u as UserId, item)) {
                added += 1;
            }
        }
    }

    let activity_dist = LogNormal::new(0.0, 1.0).expect("unit lognormal");
    let activity: Vec<f64> = (0..n).map(|_| activity_dist.sample(&mut rng)).collect();
    let any_user = weighted(activity.iter().copied()).expect("lognormal draws are positive");
    let group_users: Vec<Option<WeightedIndex<f64>>> = user_members
        .iter()
        .map(|us| weighted(us.iter().map(|&u| activity[u as usize])))
        .collect();
    let mut social: BTreeSet<(UserId, UserId)> = BTreeSet::new();
    let mut tries = 0usize;
    while social.len() < config.social_pairs && tries < 100 * config.social_pairs {
        tries += 1;
        let u = any_user.sample(&mut rng);
        let gu = user_groups[u];
        let v = match &group_users[gu] {
            Some(dist) if rng.gen::<f64>() < config.intra_social_bias => {
                user_members[gu][dist.sample(&mut rng)] as usize
            }
            _ => any_user.sample(&mut rng),
        };
        if u != v {
            social.insert((u.min(v) as UserId, u.max(v) as UserId));
        }
    }

    let dataset = Dataset::from_parts(n, m, inter, social)?;
    Ok(SyntheticWorld { dataset, user_groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_world_hits_targets() {
        let cfg = SyntheticConfig::small();
        let w = generate(&cfg, SeedStream::new(1)).unwrap();
        let s = w.dataset.summary();
        assert_eq!(s.users, cfg.users);
        assert_eq!(s.items, cfg.items);
        assert_eq!(s.interactions, cfg.interactions);
        assert_eq!(s.social_pairs, cfg.social_pairs);
        assert!(w.dataset.popularity().iter().all(|&c| c >= 1));
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig::small();
        let a = generate(&cfg, SeedStream::new(5)).unwrap();
        let b = generate(&cfg, SeedStream::new(5)).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate(&cfg, SeedStream::new(6)).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }
}
