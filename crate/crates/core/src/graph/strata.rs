use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::paths::UNREACHABLE;
use super::UserSubgraph;
use crate::error::{Error, Result};

/// Stratum cut points `c_1 < c_2 < … < c_{T-1}`; the final cut point is
/// always ∞. Stratum `t` holds zero-entries with `c_{t-1} < Q ≤ c_t`
/// (`c_0 = 0`); unreachable items fall in the final stratum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataBoundaries {
    finite: Vec<u32>,
}

impl StrataBoundaries {
    pub fn new(finite: Vec<u32>) -> Result<Self> {
        if finite.windows(2).any(|w| w[0] >= w[1]) || finite.first() == Some(&0) {
            return Err(Error::Config(format!(
                "strata boundaries must be positive and strictly increasing, got {finite:?}"
            )));
        }
        Ok(Self { finite })
    }

    pub fn n_strata(&self) -> usize {
        self.finite.len() + 1
    }

    pub fn finite(&self) -> &[u32] {
        &self.finite
    }

    /// Largest path length that distinguishes strata, if any.
    pub fn max_finite(&self) -> Option<u32> {
        self.finite.last().copied()
    }

    pub fn stratum_of(&self, path_len: u32) -> usize {
        self.finite
            .iter()
            .position(|&c| path_len != UNREACHABLE && path_len <= c)
            .unwrap_or(self.finite.len())
    }
}

impl Default for StrataBoundaries {
    fn default() -> Self {
        Self { finite: vec![3, 5] }
    }
}

impl FromStr for StrataBoundaries {
    type Err = Error;

    /// Comma-separated cut points ending in `inf`, e.g. `3,5,inf`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts.last() {
            Some(&"inf") => {}
            _ => return Err(Error::Config(format!("strata boundaries must end with `inf`, got {s:?}"))),
        }
        let finite = parts[..parts.len() - 1]
            .iter()
            .map(|p| p.parse::<u32>().map_err(|_| Error::Config(format!("bad stratum boundary {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(finite)
    }
}

impl std::fmt::Display for StrataBoundaries {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.finite {
            write!(f, "{c},")?;
        }
        f.write_str("inf")
    }
}

/// Zero-entries of every subgraph row, split into strata: `strata[k][t]` is
/// a sorted item list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStrata {
    pub user: usize,
    pub strata: Vec<Vec<Vec<usize>>>,
}

impl UserStrata {
    pub fn count(&self, k: usize, t: usize) -> usize {
        self.strata[k][t].len()
    }

    pub fn zeros_in_order(&self, k: usize) -> usize {
        self.strata[k].iter().map(Vec::len).sum()
    }
}

pub fn build_strata(a: &UserSubgraph, path_lengths: &[u32], boundaries: &StrataBoundaries) -> Result<UserStrata> {
    if path_lengths.len() != a.n_items() {
        return Err(Error::shape("path lengths", &[a.n_items()], &[path_lengths.len()]));
    }
    let strata = (0..a.order())
        .map(|k| {
            let mut buckets = vec![Vec::new(); boundaries.n_strata()];
            let ones = a.row(k);
            let mut next_one = 0;
            for (v, &q) in path_lengths.iter().enumerate() {
                if next_one < ones.len() && ones[next_one] == v {
                    next_one += 1;
                    continue;
                }
                buckets[boundaries.stratum_of(q)].push(v);
            }
            buckets
        })
        .collect();
    Ok(UserStrata { user: a.user, strata })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataIndex {
    pub boundaries: StrataBoundaries,
    pub users: Vec<UserStrata>,
}
