//! Planted block-structured interaction data for sanity experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ImplicitInteractions;

/// Users in disjoint blocks of items. Each user's items form a contiguous
/// window on the ring of its block's items, so neighbouring items share
/// users and the co-occurrence structure is learnable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub blocks: usize,
    pub users_per_block: usize,
    pub items_per_block: usize,
    pub items_per_user: usize,
    /// Extra users holding a window in every block.
    pub bridge_users: usize,
    /// Window length per block for each bridge user.
    pub bridge_items_per_block: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            users_per_block: 100,
            items_per_block: 50,
            items_per_user: 20,
            bridge_users: 0,
            bridge_items_per_block: 5,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn n_users(&self) -> usize {
        self.blocks * self.users_per_block + self.bridge_users
    }

    pub fn n_items(&self) -> usize {
        self.blocks * self.items_per_block
    }

    pub fn block_of_item(&self, v: usize) -> usize {
        v / self.items_per_block
    }
}

fn window<R: Rng>(rng: &mut R, block: usize, len: usize, block_size: usize) -> impl Iterator<Item = usize> {
    let start = rng.random_range(0..block_size);
    (0..len).map(move |j| block * block_size + (start + j) % block_size)
}

/// Users `u0..` (block users first, block-major, then bridge users) and items
/// `i0..`, in index order.
pub fn planted_interactions(cfg: &PlantedConfig) -> Result<ImplicitInteractions> {
    if cfg.blocks == 0 || cfg.items_per_block == 0 || cfg.items_per_user == 0 {
        return Err(Error::Config("planted data needs blocks, items and items per user".into()));
    }
    if cfg.items_per_user > cfg.items_per_block || cfg.bridge_items_per_block > cfg.items_per_block {
        return Err(Error::Config("a window cannot exceed its block".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    for b in 0..cfg.blocks {
        for i in 0..cfg.users_per_block {
            let u = b * cfg.users_per_block + i;
            pairs.extend(window(&mut rng, b, cfg.items_per_user, cfg.items_per_block).map(|v| (u, v)));
        }
    }
    for i in 0..cfg.bridge_users {
        let u = cfg.blocks * cfg.users_per_block + i;
        for b in 0..cfg.blocks {
            pairs.extend(window(&mut rng, b, cfg.bridge_items_per_block, cfg.items_per_block).map(|v| (u, v)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok(ImplicitInteractions {
        users: (0..cfg.n_users()).map(|u| format!("u{u}")).collect(),
        items: (0..cfg.n_items()).map(|v| format!("i{v}")).collect(),
        pairs,
    })
}
