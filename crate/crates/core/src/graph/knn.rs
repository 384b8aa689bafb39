use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IncidenceMatrix;
use crate::error::Result;
use crate::tensor::SupportPattern;

/// Jaccard coefficient of two sorted index lists; 0 when both are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Item–item Jaccard similarity over the sets of users of each item.
#[derive(Debug, Clone)]
pub struct ItemSimilarity {
    item_users: Vec<Vec<usize>>,
}

impl ItemSimilarity {
    pub fn from_incidence(e: &IncidenceMatrix) -> Self {
        Self {
            item_users: (0..e.n_items()).map(|v| e.item_users(v).to_vec()).collect(),
        }
    }

    /// Adds extra `(user, item)` observations to the user sets.
    pub fn with_extra(mut self, pairs: &[(usize, usize)]) -> Self {
        for &(u, v) in pairs {
            self.item_users[v].push(u);
        }
        for users in &mut self.item_users {
            users.sort_unstable();
            users.dedup();
        }
        self
    }

    pub fn n_items(&self) -> usize {
        self.item_users.len()
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        jaccard(&self.item_users[a], &self.item_users[b])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub item: usize,
    pub similarity: f64,
}

/// For each item, its `knn_size` most similar other items (descending
/// similarity, ascending index on ties). The item itself is its implicit
/// 0-NN and is not listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    pub knn_size: usize,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl KnnIndex {
    pub fn n_items(&self) -> usize {
        self.neighbors.len()
    }

    /// Self plus K-NN for every row: the weight support of masked layers.
    pub fn support(&self) -> Result<SupportPattern> {
        let rows: Vec<Vec<usize>> = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(v, ns)| std::iter::once(v).chain(ns.iter().map(|n| n.item)).collect())
            .collect();
        SupportPattern::from_rows(self.n_items(), &rows)
    }
}

fn by_similarity(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then(a.item.cmp(&b.item))
}

pub fn knn_index(e: &IncidenceMatrix, knn_size: usize) -> KnnIndex {
    let n = e.n_items();
    let take = knn_size.min(n.saturating_sub(1));
    let neighbors = (0..n)
        .into_par_iter()
        .map(|v| {
            let mut co = vec![0usize; n];
            for &u in e.item_users(v) {
                for &v2 in e.user_items(u) {
                    co[v2] += 1;
                }
            }
            let deg_v = e.item_users(v).len();
            let mut cands: Vec<Neighbor> = (0..n)
                .filter(|&w| w != v)
                .map(|w| {
                    let union = deg_v + e.item_users(w).len() - co[w];
                    let similarity = if union == 0 { 0.0 } else { co[w] as f64 / union as f64 };
                    Neighbor { item: w, similarity }
                })
                .collect();
            if take < cands.len() && take > 0 {
                cands.select_nth_unstable_by(take - 1, by_similarity);
            }
            cands.truncate(take);
            cands.sort_unstable_by(by_similarity);
            cands
        })
        .collect();
    KnnIndex { knn_size, neighbors }
}
