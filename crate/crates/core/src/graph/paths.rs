use std::collections::VecDeque;

use rayon::prelude::*;

use super::coo::CooMatrix;
use super::IncidenceMatrix;

/// Sentinel for items not reachable from a user.
pub const UNREACHABLE: u32 = u32::MAX;

/// Shortest bipartite path lengths from every user to every item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathLengthMatrix {
    n_users: usize,
    n_items: usize,
    data: Vec<u32>,
}

impl PathLengthMatrix {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn get(&self, u: usize, v: usize) -> u32 {
        self.data[u * self.n_items + v]
    }

    pub fn row(&self, u: usize) -> &[u32] {
        &self.data[u * self.n_items..(u + 1) * self.n_items]
    }

    /// Finite entries only; unreachable pairs are omitted.
    pub fn to_coo(&self) -> CooMatrix {
        let mut entries = Vec::new();
        for u in 0..self.n_users {
            for (v, &d) in self.row(u).iter().enumerate() {
                if d != UNREACHABLE {
                    entries.push((u, v, d as u64));
                }
            }
        }
        CooMatrix {
            n_rows: self.n_users,
            n_cols: self.n_items,
            entries,
        }
    }
}

/// Breadth-first search from user `u`. Items farther than `max_len` (when
/// given) are reported as [`UNREACHABLE`].
pub fn item_distances(e: &IncidenceMatrix, u: usize, max_len: Option<u32>) -> Vec<u32> {
    let limit = max_len.unwrap_or(UNREACHABLE);
    let mut item_dist = vec![UNREACHABLE; e.n_items()];
    let mut user_seen = vec![false; e.n_users()];
    user_seen[u] = true;
    // queue holds users at even distance
    let mut queue = VecDeque::from([(u, 0u32)]);
    while let Some((w, d)) = queue.pop_front() {
        let item_d = d + 1;
        if item_d > limit {
            break;
        }
        for &v in e.user_items(w) {
            if item_dist[v] != UNREACHABLE {
                continue;
            }
            item_dist[v] = item_d;
            for &w2 in e.item_users(v) {
                if !user_seen[w2] {
                    user_seen[w2] = true;
                    queue.push_back((w2, item_d + 1));
                }
            }
        }
    }
    item_dist
}

pub fn shortest_paths(e: &IncidenceMatrix) -> PathLengthMatrix {
    let rows: Vec<Vec<u32>> = (0..e.n_users())
        .into_par_iter()
        .map(|u| item_distances(e, u, None))
        .collect();
    PathLengthMatrix {
        n_users: e.n_users(),
        n_items: e.n_items(),
        data: rows.concat(),
    }
}
