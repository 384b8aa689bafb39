use rayon::prelude::*;

use super::coo::CooMatrix;
use super::IncidenceMatrix;
use crate::error::{Error, Result};

/// Walk counts `E^(k)`: entry `(u, v)` is the number of bipartite walks with
/// `2(k-1)+1` edges from user `u` to item `v`. Rows are sorted by item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityMatrix {
    order: usize,
    n_items: usize,
    rows: Vec<Vec<(usize, u64)>>,
}

impl ProximityMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, u: usize) -> &[(usize, u64)] {
        &self.rows[u]
    }

    pub fn get(&self, u: usize, v: usize) -> u64 {
        match self.rows[u].binary_search_by_key(&v, |&(i, _)| i) {
            Ok(i) => self.rows[u][i].1,
            Err(_) => 0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_users() as f64 * self.n_items as f64)
    }

    pub fn to_dense(&self) -> Vec<Vec<u64>> {
        let mut out = vec![vec![0; self.n_items]; self.n_users()];
        for (u, row) in self.rows.iter().enumerate() {
            for &(v, c) in row {
                out[u][v] = c;
            }
        }
        out
    }

    pub fn to_coo(&self) -> CooMatrix {
        let entries = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(v, c)| (u, v, c)))
            .collect();
        CooMatrix {
            n_rows: self.n_users(),
            n_cols: self.n_items,
            entries,
        }
    }
}

/// One row of `E^(k)`, computed by propagating walk counts through `E Eᵀ`
/// `k - 1` times.
pub(crate) fn proximity_row(e: &IncidenceMatrix, u: usize, k: usize) -> Result<Vec<(usize, u64)>> {
    let mut row: Vec<(usize, u64)> = e.user_items(u).iter().map(|&v| (v, 1)).collect();
    if k == 1 || row.is_empty() {
        return Ok(row);
    }
    let mut acc = vec![0u64; e.n_items()];
    let mut touched = Vec::new();
    for _ in 1..k {
        for &(v, c) in &row {
            for &w in e.item_users(v) {
                for &v2 in e.user_items(w) {
                    if acc[v2] == 0 {
                        touched.push(v2);
                    }
                    acc[v2] = acc[v2].checked_add(c).ok_or_else(|| Error::Numeric {
                        tensor: format!("proximity order {k}"),
                    })?;
                }
            }
        }
        touched.sort_unstable();
        row = touched.iter().map(|&v| (v, acc[v])).collect();
        for &v in &touched {
            acc[v] = 0;
        }
        touched.clear();
    }
    Ok(row)
}

/// `E^(k)` in sparse arithmetic. `max_nnz` bounds the number of stored
/// entries; exceeding it is a resource error.
pub fn proximity(e: &IncidenceMatrix, k: usize, max_nnz: Option<usize>) -> Result<ProximityMatrix> {
    if k < 1 {
        return Err(Error::Argument(format!("proximity order must be >= 1, got {k}")));
    }
    const CHUNK: usize = 256;
    let mut rows = Vec::with_capacity(e.n_users());
    let mut nnz = 0usize;
    for start in (0..e.n_users()).step_by(CHUNK) {
        let end = (start + CHUNK).min(e.n_users());
        let chunk: Vec<Vec<(usize, u64)>> = (start..end)
            .into_par_iter()
            .map(|u| proximity_row(e, u, k))
            .collect::<Result<_>>()?;
        nnz += chunk.iter().map(Vec::len).sum::<usize>();
        if let Some(budget) = max_nnz {
            if nnz > budget {
                return Err(Error::Resource {
                    what: format!("proximity matrix of order {k}"),
                    needed: nnz,
                    budget_name: "proximity_max_nnz",
                    budget,
                });
            }
        }
        rows.extend(chunk);
    }
    Ok(ProximityMatrix {
        order: k,
        n_items: e.n_items(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> IncidenceMatrix {
        IncidenceMatrix::from_dense(&[vec![1, 1, 0], vec![1, 0, 1]])
    }

    #[test]
    fn second_order_on_two_user_example() {
        let p = proximity(&fig1(), 2, None).unwrap();
        assert_eq!(p.to_dense(), vec![vec![3, 2, 1], vec![3, 1, 2]]);
        assert_eq!(p.get(0, 2), 1);
    }

    #[test]
    fn first_order_is_incidence() {
        let p = proximity(&fig1(), 1, None).unwrap();
        assert_eq!(p.to_dense(), vec![vec![1, 1, 0], vec![1, 0, 1]]);
    }

    #[test]
    fn empty_graph_and_single_edge() {
        let z = IncidenceMatrix::from_dense(&[vec![0, 0], vec![0, 0]]);
        for k in 1..4 {
            assert_eq!(proximity(&z, k, None).unwrap().nnz(), 0);
        }
        let one = IncidenceMatrix::from_dense(&[vec![1]]);
        assert_eq!(proximity(&one, 2, None).unwrap().to_dense(), vec![vec![1]]);
    }

    #[test]
    fn order_zero_is_argument_error() {
        assert!(matches!(proximity(&fig1(), 0, None), Err(Error::Argument(_))));
    }

    #[test]
    fn budget_is_enforced() {
        let e = proximity(&fig1(), 2, Some(5)).unwrap_err();
        match e {
            Error::Resource { budget_name, .. } => assert_eq!(budget_name, "proximity_max_nnz"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
