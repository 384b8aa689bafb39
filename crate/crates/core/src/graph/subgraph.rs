use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProximityMatrix;
use crate::error::{Error, Result};

/// How raw walk counts are scaled before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProximityNormalize {
    /// Compare thresholds against raw counts.
    #[default]
    None,
    /// Divide each row by its maximum count first.
    Row,
}

impl FromStr for ProximityNormalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "row" => Ok(Self::Row),
            other => Err(Error::Config(format!("proximity_normalize must be none|row, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphOptions {
    /// `c_1..c_K`; `c_1` must be exactly 1.
    pub thresholds: Vec<f64>,
    pub normalize: ProximityNormalize,
    /// Keep at most this many entries in each row of order >= 2, preferring
    /// larger walk counts and then smaller item index.
    pub max_high_order: Option<usize>,
}

impl SubgraphOptions {
    pub fn new(thresholds: Vec<f64>) -> Self {
        Self {
            thresholds,
            normalize: ProximityNormalize::None,
            max_high_order: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.thresholds.first() {
            None => return Err(Error::Config("at least one proximity threshold is required".into())),
            Some(&c1) if c1 != 1.0 => {
                return Err(Error::Config(format!("first-order threshold c_1 must be 1, got {c1}")))
            }
            _ => {}
        }
        if let Some(c) = self.thresholds.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::Config(format!("proximity thresholds must be positive, got {c}")));
        }
        Ok(())
    }
}

/// Binary `K_ord × |V|` observation for one user, stored as sorted item lists
/// per order. Row 0 is the first-order (observed) row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSubgraph {
    pub user: usize,
    n_items: usize,
    rows: Vec<Vec<usize>>,
}

impl UserSubgraph {
    pub fn from_rows(user: usize, n_items: usize, mut rows: Vec<Vec<usize>>) -> Result<Self> {
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if row.last().is_some_and(|&v| v >= n_items) {
                return Err(Error::Argument(format!("subgraph item out of range for user {user}")));
            }
        }
        Ok(Self { user, n_items, rows })
    }

    pub fn empty(user: usize, n_items: usize, order: usize) -> Self {
        Self {
            user,
            n_items,
            rows: vec![Vec::new(); order],
        }
    }

    pub fn order(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, k: usize) -> &[usize] {
        &self.rows[k]
    }

    pub fn contains(&self, k: usize, v: usize) -> bool {
        self.rows[k].binary_search(&v).is_ok()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Positions of the ones in the row-major flattening `k * |V| + v`.
    pub fn flat_ones(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(k, row)| row.iter().map(move |&v| k * self.n_items + v))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut out = vec![vec![0u8; self.n_items]; self.order()];
        for (k, row) in self.rows.iter().enumerate() {
            for &v in row {
                out[k][v] = 1;
            }
        }
        out
    }
}

/// `A_kv = 1` iff `E^(k)_uv >= c_k` (after optional row normalization).
/// `proximity[k]` must hold order `k + 1`.
pub fn build_subgraph(proximity: &[ProximityMatrix], u: usize, opts: &SubgraphOptions) -> Result<UserSubgraph> {
    opts.validate()?;
    if proximity.len() != opts.thresholds.len() {
        return Err(Error::Config(format!(
            "{} thresholds for {} proximity orders",
            opts.thresholds.len(),
            proximity.len()
        )));
    }
    let n_items = proximity.first().map_or(0, ProximityMatrix::n_items);
    let rows = proximity
        .iter()
        .zip(&opts.thresholds)
        .enumerate()
        .map(|(k, (p, &c))| threshold_row(p.row(u), c, k, opts))
        .collect();
    UserSubgraph::from_rows(u, n_items, rows)
}

pub(crate) fn threshold_row(row: &[(usize, u64)], c: f64, k: usize, opts: &SubgraphOptions) -> Vec<usize> {
    let scale = match opts.normalize {
        ProximityNormalize::None => 1.0,
        ProximityNormalize::Row => row.iter().map(|&(_, n)| n).max().unwrap_or(1) as f64,
    };
    let mut kept: Vec<(usize, u64)> = row.iter().copied().filter(|&(_, n)| n as f64 / scale >= c).collect();
    if k >= 1 {
        if let Some(cap) = opts.max_high_order {
            if kept.len() > cap {
                kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                kept.truncate(cap);
            }
        }
    }
    let mut items: Vec<usize> = kept.into_iter().map(|(v, _)| v).collect();
    items.sort_unstable();
    items
}

#[cfg(test)]
mod tests {
    use super::super::{proximity, IncidenceMatrix};
    use super::*;

    fn prox() -> Vec<ProximityMatrix> {
        let e = IncidenceMatrix::from_dense(&[vec![1, 1, 0], vec![1, 0, 1], vec![0, 0, 0]]);
        vec![proximity(&e, 1, None).unwrap(), proximity(&e, 2, None).unwrap()]
    }

    #[test]
    fn threshold_point_nine_keeps_every_reachable_item() {
        let a = build_subgraph(&prox(), 0, &SubgraphOptions::new(vec![1.0, 0.9])).unwrap();
        assert_eq!(a.to_dense(), vec![vec![1, 1, 0], vec![1, 1, 1]]);
        assert_eq!(a.row(0).len(), 2);
    }

    #[test]
    fn large_threshold_empties_second_row() {
        let a = build_subgraph(&prox(), 0, &SubgraphOptions::new(vec![1.0, 4.0])).unwrap();
        assert_eq!(a.row(1), &[] as &[usize]);
    }

    #[test]
    fn isolated_user_is_all_zero() {
        let a = build_subgraph(&prox(), 2, &SubgraphOptions::new(vec![1.0, 0.9])).unwrap();
        assert!(a.is_empty());
    }

    #[test]
    fn first_threshold_must_be_one() {
        let e = build_subgraph(&prox(), 0, &SubgraphOptions::new(vec![0.9, 0.9])).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn cap_and_row_normalization() {
        let mut opts = SubgraphOptions::new(vec![1.0, 0.9]);
        opts.max_high_order = Some(1);
        let a = build_subgraph(&prox(), 0, &opts).unwrap();
        assert_eq!(a.row(1), &[0]);
        let mut opts = SubgraphOptions::new(vec![1.0, 0.5]);
        opts.normalize = ProximityNormalize::Row;
        // row counts [3,2,1] / 3 -> keeps 1.0 and 0.667
        let a = build_subgraph(&prox(), 0, &opts).unwrap();
        assert_eq!(a.row(1), &[0, 1]);
    }
}
