//! Top-K ranking and the NDCG, Recall and PILD metrics.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphArtifacts, ItemSimilarity, UserSubgraph};
use crate::model::Model;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    /// Blended scores, non-increasing.
    pub scores: Vec<f64>,
}

/// Per-order Bernoulli parameters for every item at the encoder mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemScores {
    /// `F_1v`
    pub first: Vec<f64>,
    /// `F_2v`; empty when the model has a single proximity order.
    pub second: Vec<f64>,
}

impl ItemScores {
    /// `α·F_1v + (1−α)·F_2v`
    pub fn blend(&self, alpha: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {alpha}")));
        }
        if self.second.is_empty() {
            if alpha != 1.0 {
                return Err(Error::Config("alpha < 1 needs a second-order head".into()));
            }
            return Ok(self.first.clone());
        }
        Ok(self
            .first
            .iter()
            .zip(&self.second)
            .map(|(&f1, &f2)| alpha * f1 + (1.0 - alpha) * f2)
            .collect())
    }
}

pub fn item_scores<T: Scalar>(model: &Model<T>, a: &UserSubgraph) -> Result<ItemScores> {
    let z = model.encoder.mean_embedding(a)?;
    let f = model.decoder.bernoulli_params(&z)?;
    let row = |k: usize| f.row(k).iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    Ok(ItemScores {
        first: row(0),
        second: if f.rows() > 1 { row(1) } else { Vec::new() },
    })
}

/// Top `k` items by score, skipping `excluded` (sorted); ties go to the
/// smaller item index.
pub fn top_k(user: usize, scores: &[f64], excluded: &[usize], k: usize) -> RankedList {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|v| excluded.binary_search(v).is_err()).collect();
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k, by_score);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(by_score);
    RankedList {
        user,
        scores: candidates.iter().map(|&v| scores[v]).collect(),
        items: candidates,
    }
}

/// Ranks unseen items for one user. Returns `None` for an empty subgraph.
/// First-order (train) items are always excluded; `also_exclude` (sorted)
/// removes more.
pub fn recommend<T: Scalar>(
    model: &Model<T>,
    a: &UserSubgraph,
    also_exclude: &[usize],
    k: usize,
    alpha: f64,
) -> Result<Option<RankedList>> {
    if a.is_empty() {
        return Ok(None);
    }
    let scores = item_scores(model, a)?.blend(alpha)?;
    let mut excluded: Vec<usize> = a.row(0).iter().chain(also_exclude).copied().collect();
    excluded.sort_unstable();
    excluded.dedup();
    Ok(Some(top_k(a.user, &scores, &excluded, k)))
}

/// `None` when `held_out` is empty. `held_out` must be sorted.
pub fn ndcg_at_k(items: &[usize], held_out: &[usize], k: usize) -> Option<f64> {
    if held_out.is_empty() {
        return None;
    }
    let dcg: f64 = items
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, v)| held_out.binary_search(v).is_ok())
        .fold(0.0, |acc, (i, _)| acc + 1.0 / ((i + 2) as f64).log2());
    let ideal: f64 = (0..k.min(held_out.len())).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Some(dcg / ideal)
}

/// `None` when `held_out` is empty. `held_out` must be sorted.
pub fn recall_at_k(items: &[usize], held_out: &[usize], k: usize) -> Option<f64> {
    if held_out.is_empty() {
        return None;
    }
    let hits = items.iter().take(k).filter(|v| held_out.binary_search(v).is_ok()).count();
    Some(hits as f64 / k.min(held_out.len()) as f64)
}

/// Mean pairwise `1 − Jaccard`; `None` for fewer than two items.
pub fn pild(items: &[usize], sim: &ItemSimilarity) -> Option<f64> {
    pild_with(items, |a, b| sim.similarity(a, b))
}

/// Mean pairwise `1 − sim(a, b)` for an arbitrary similarity.
pub fn pild_with(items: &[usize], sim: impl Fn(usize, usize) -> f64) -> Option<f64> {
    if items.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            total += 1.0 - sim(items[i], items[j]);
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: usize,
    pub ndcg: f64,
    pub recall: f64,
    /// `None` when the list was too short.
    pub pild: Option<f64>,
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub alpha: f64,
    pub users: Vec<UserMetrics>,
    pub mean_ndcg: f64,
    pub mean_recall: f64,
    pub mean_pild: f64,
    /// Users with held-out items but an empty training subgraph.
    pub skipped_empty_train: usize,
    /// Users with no held-out items.
    pub skipped_empty_held_out: usize,
    pub skipped_short_list: usize,
}

impl MetricsReport {
    pub fn from_rows(k: usize, alpha: f64, users: Vec<UserMetrics>, skipped_empty_train: usize, skipped_empty_held_out: usize) -> Self {
        let mean = |xs: Vec<f64>| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
        let pilds: Vec<f64> = users.iter().filter_map(|u| u.pild).collect();
        Self {
            k,
            alpha,
            mean_ndcg: mean(users.iter().map(|u| u.ndcg).collect()),
            mean_recall: mean(users.iter().map(|u| u.recall).collect()),
            skipped_short_list: users.len() - pilds.len(),
            mean_pild: mean(pilds),
            users,
            skipped_empty_train,
            skipped_empty_held_out,
        }
    }

    pub fn n_evaluated(&self) -> usize {
        self.users.len()
    }

    /// `user_id,ndcg,recall,pild,held_out` plus a final `mean` row.
    pub fn write_csv<W: Write>(&self, mut w: W, user_ids: &[String]) -> std::io::Result<()> {
        writeln!(w, "user_id,ndcg,recall,pild,held_out")?;
        for u in &self.users {
            let pild = u.pild.map(|p| p.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{}", user_ids[u.user], u.ndcg, u.recall, pild, u.held_out)?;
        }
        let total: usize = self.users.iter().map(|u| u.held_out).sum();
        writeln!(w, "mean,{},{},{},{}", self.mean_ndcg, self.mean_recall, self.mean_pild, total)
    }

    pub fn write_csv_file(&self, path: &Path, user_ids: &[String]) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w, user_ids).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub alpha: f64,
    pub with_pild: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 20,
            alpha: 1.0,
            with_pild: true,
        }
    }
}

/// Scores every user with held-out items. `held_out[u]` and `exclude[u]`
/// are sorted item lists; `exclude` may be empty to mean "train items only".
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    graph: &GraphArtifacts,
    held_out: &[Vec<usize>],
    exclude: &[Vec<usize>],
    sim: &ItemSimilarity,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    if held_out.len() != graph.subgraphs.len() {
        return Err(Error::shape("held-out users", &[graph.subgraphs.len()], &[held_out.len()]));
    }
    let no_exclude: &[usize] = &[];
    let rows: Vec<Option<std::result::Result<UserMetrics, bool>>> = graph
        .subgraphs
        .par_iter()
        .zip(held_out.par_iter())
        .enumerate()
        .map(|(u, (a, h))| {
            if h.is_empty() {
                return Ok(None);
            }
            let extra = exclude.get(u).map(Vec::as_slice).unwrap_or(no_exclude);
            let Some(list) = recommend(model, a, extra, opts.k, opts.alpha)? else {
                return Ok(Some(Err(true)));
            };
            Ok(Some(Ok(UserMetrics {
                user: u,
                ndcg: ndcg_at_k(&list.items, h, opts.k).expect("held-out nonempty"),
                recall: recall_at_k(&list.items, h, opts.k).expect("held-out nonempty"),
                pild: if opts.with_pild { pild(&list.items, sim) } else { None },
                held_out: h.len(),
            })))
        })
        .collect::<Result<_>>()?;
    let mut users = Vec::new();
    let (mut empty_train, mut empty_held_out) = (0, 0);
    for r in rows {
        match r {
            None => empty_held_out += 1,
            Some(Err(_)) => empty_train += 1,
            Some(Ok(m)) => users.push(m),
        }
    }
    Ok(MetricsReport::from_rows(opts.k, opts.alpha, users, empty_train, empty_held_out))
}

/// Mean validation NDCG@k used for model selection; `None` when no user
/// has validation items.
pub fn validation_ndcg<T: Scalar>(model: &Model<T>, graph: &GraphArtifacts, held_out: &[Vec<usize>], k: usize) -> Result<Option<f64>> {
    let sim = ItemSimilarity::from_incidence(&graph.incidence);
    let opts = EvalOptions {
        k,
        alpha: 1.0,
        with_pild: false,
    };
    let report = evaluate(model, graph, held_out, &[], &sim, &opts)?;
    Ok((report.n_evaluated() > 0).then_some(report.mean_ndcg))
}

/// Expected Recall@k of a uniformly random ranking of `n_candidates` items
/// containing `n_held_out` relevant ones.
pub fn random_recall(n_candidates: usize, n_held_out: usize, k: usize) -> f64 {
    if n_candidates == 0 || n_held_out == 0 {
        return 0.0;
    }
    let slots = k.min(n_candidates) as f64;
    slots * n_held_out as f64 / n_candidates as f64 / k.min(n_held_out) as f64
}

/// `user_id` then the `P` coordinates of the encoder mean, tab-separated.
pub fn write_embeddings<T: Scalar, W: Write>(
    model: &Model<T>,
    graph: &GraphArtifacts,
    user_ids: &[String],
    mut w: W,
) -> Result<()> {
    let io = |e| Error::io(Path::new("embeddings.tsv"), e);
    for a in &graph.subgraphs {
        let z = model.encoder.mean_embedding(a)?;
        let cols: Vec<String> = z.iter().map(|x| x.as_f64().to_string()).collect();
        writeln!(w, "{}\t{}", user_ids[a.user], cols.join("\t")).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::IncidenceMatrix;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 1], &[4], 2), Some(1.0));
        let second = ndcg_at_k(&[1, 4], &[4], 2).unwrap();
        assert!((second - 1.0 / 3f64.log2()).abs() < 1e-12);
        let zero = ndcg_at_k(&[0, 1], &[4], 2).unwrap();
        assert!(zero == 0.0 && zero.is_sign_positive());
        assert_eq!(ndcg_at_k(&[0, 1], &[], 2), None);
    }

    #[test]
    fn recall_examples() {
        let list: Vec<usize> = (0..20).collect();
        assert_eq!(recall_at_k(&list, &[1, 5, 7], 20), Some(1.0));
        assert_eq!(recall_at_k(&list, &[3, 30, 31, 32], 20), Some(0.25));
        let big: Vec<usize> = (0..30).collect();
        assert_eq!(recall_at_k(&list, &big, 20), Some(1.0));
        for k in 1..20 {
            assert!(recall_at_k(&list, &[2, 11, 40], k) <= recall_at_k(&list, &[2, 11, 40], k + 1));
        }
    }

    #[test]
    fn pild_examples() {
        let table = |a: usize, b: usize| match (a.min(b), a.max(b)) {
            (0, 1) => 0.5,
            (0, 2) => 0.0,
            _ => 1.0,
        };
        assert_eq!(pild_with(&[0, 1, 2], table), Some(0.5));
        assert_eq!(pild_with(&[2, 0, 1], table), Some(0.5));
        // each item seen by three of four users: pairwise Jaccard 1/2
        let e = IncidenceMatrix::from_pairs(4, 3, &[(0, 0), (1, 0), (2, 0), (1, 1), (2, 1), (3, 1), (0, 2), (2, 2), (3, 2)]).unwrap();
        let sim = ItemSimilarity::from_incidence(&e);
        assert_eq!(pild(&[0, 1, 2], &sim), Some(0.5));
        let disjoint = IncidenceMatrix::from_pairs(3, 3, &[(0, 0), (1, 1), (2, 2)]).unwrap();
        assert_eq!(pild(&[0, 1, 2], &ItemSimilarity::from_incidence(&disjoint)), Some(1.0));
        let same = IncidenceMatrix::from_pairs(1, 3, &[(0, 0), (0, 1), (0, 2)]).unwrap();
        assert_eq!(pild(&[2, 0, 1], &ItemSimilarity::from_incidence(&same)), Some(0.0));
        assert_eq!(pild(&[0], &sim), None);
    }

    #[test]
    fn top_k_orders_and_breaks_ties_by_index() {
        let scores = [0.5, 0.9, 0.5, 0.1, 0.9];
        let l = top_k(0, &scores, &[4], 3);
        assert_eq!(l.items, vec![1, 0, 2]);
        assert_eq!(l.scores, vec![0.9, 0.5, 0.5]);
        let all = top_k(0, &scores, &[], 10);
        assert_eq!(all.items, vec![1, 4, 0, 2, 3]);
    }
}
