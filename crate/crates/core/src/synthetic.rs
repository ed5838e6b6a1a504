//! Planted-cluster folksonomies for end-to-end tests.
//!
//! Users, items and tags are partitioned into clusters. A user mostly tags
//! items of their own cluster, and an item mostly receives tags of its own
//! cluster, so profiles carry the cluster signal.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::folksonomy::Assignment;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub clusters: usize,
    pub users_per_cluster: usize,
    pub items_per_cluster: usize,
    pub tags_per_cluster: usize,
    /// Distinct assignments to generate.
    pub assignments: usize,
    /// Probability a user picks an item from their own cluster.
    pub item_affinity: f64,
    /// Probability an assignment uses a tag from the item's cluster.
    pub tag_affinity: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            clusters: 5,
            users_per_cluster: 12,
            items_per_cluster: 8,
            tags_per_cluster: 6,
            assignments: 1200,
            item_affinity: 0.9,
            tag_affinity: 0.9,
        }
    }
}

impl PlantedConfig {
    pub fn users(&self) -> usize {
        self.clusters * self.users_per_cluster
    }

    pub fn items(&self) -> usize {
        self.clusters * self.items_per_cluster
    }

    pub fn tags(&self) -> usize {
        self.clusters * self.tags_per_cluster
    }

    /// Cluster of a user index.
    pub fn user_cluster(&self, user: usize) -> usize {
        user / self.users_per_cluster
    }

    pub fn item_cluster(&self, item: usize) -> usize {
        item / self.items_per_cluster
    }
}

fn pick(rng: &mut ChaCha8Rng, cluster: usize, per: usize, total: usize, affinity: f64) -> usize {
    if rng.random_bool(affinity) {
        cluster * per + rng.random_range(0..per)
    } else {
        rng.random_range(0..total)
    }
}

/// Tokens are `u{i}`, `t{j}`, `d{k}`. Every user contributes at least one
/// assignment. Panics if the configuration cannot yield the requested
/// number of distinct triples.
pub fn planted_assignments(cfg: &PlantedConfig, seed: u64) -> Vec<Assignment> {
    let capacity = cfg.users() * cfg.items() * cfg.tags();
    assert!(cfg.assignments <= capacity / 2, "too many assignments for the planted grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(cfg.assignments);
    let mut n = 0usize;
    while out.len() < cfg.assignments {
        // Round-robin over users so every user appears.
        let user = n % cfg.users();
        n += 1;
        let item = pick(&mut rng, cfg.user_cluster(user), cfg.items_per_cluster, cfg.items(), cfg.item_affinity);
        let tag = pick(&mut rng, cfg.item_cluster(item), cfg.tags_per_cluster, cfg.tags(), cfg.tag_affinity);
        if seen.insert((user, tag, item)) {
            out.push(Assignment::new(format!("u{user}"), format!("t{tag}"), format!("d{item}")));
        }
    }
    out
}
