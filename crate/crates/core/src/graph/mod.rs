//! Bipartite user–item graph: walk-count proximity, per-user subgraphs,
//! shortest-path strata and the item K-NN index.

mod coo;
mod knn;
mod paths;
mod proximity;
mod strata;
mod subgraph;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use coo::CooMatrix;
pub use knn::{jaccard, knn_index, ItemSimilarity, KnnIndex, Neighbor};
pub use paths::{item_distances, shortest_paths, PathLengthMatrix, UNREACHABLE};
pub use proximity::{proximity, ProximityMatrix};
pub use strata::{build_strata, StrataBoundaries, StrataIndex, UserStrata};
pub use subgraph::{build_subgraph, ProximityNormalize, SubgraphOptions, UserSubgraph};

use crate::error::{Error, Result};

/// Binary `|U| × |V|` interaction matrix with row and column adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    user_items: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
}

impl IncidenceMatrix {
    pub fn from_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut user_items = vec![Vec::new(); n_users];
        let mut item_users = vec![Vec::new(); n_items];
        for &(u, v) in pairs {
            if u >= n_users || v >= n_items {
                return Err(Error::Argument(format!(
                    "interaction ({u},{v}) outside {n_users}x{n_items}"
                )));
            }
            user_items[u].push(v);
            item_users[v].push(u);
        }
        for l in user_items.iter_mut().chain(item_users.iter_mut()) {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self { user_items, item_users })
    }

    /// Rows of 0/1 flags; any non-zero counts as an edge.
    pub fn from_dense(rows: &[Vec<u8>]) -> Self {
        let n_items = rows.first().map_or(0, Vec::len);
        let pairs: Vec<(usize, usize)> = rows
            .iter()
            .enumerate()
            .flat_map(|(u, r)| r.iter().enumerate().filter(|(_, &x)| x != 0).map(move |(v, _)| (u, v)))
            .collect();
        Self::from_pairs(rows.len(), n_items, &pairs).expect("indices in range by construction")
    }

    pub fn n_users(&self) -> usize {
        self.user_items.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_users.len()
    }

    pub fn user_items(&self, u: usize) -> &[usize] {
        &self.user_items[u]
    }

    pub fn item_users(&self, v: usize) -> &[usize] {
        &self.item_users[v]
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.user_items[u].binary_search(&v).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.user_items.iter().map(Vec::len).sum()
    }

    pub fn to_coo(&self) -> CooMatrix {
        let entries = self
            .user_items
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v, 1)))
            .collect();
        CooMatrix {
            n_rows: self.n_users(),
            n_cols: self.n_items(),
            entries,
        }
    }

    pub fn from_coo(m: &CooMatrix) -> Result<Self> {
        if let Some(&(r, c, v)) = m.entries.iter().find(|e| e.2 != 1) {
            return Err(Error::Format(format!("incidence entry ({r},{c}) = {v}, expected 1")));
        }
        let pairs: Vec<(usize, usize)> = m.entries.iter().map(|&(r, c, _)| (r, c)).collect();
        Self::from_pairs(m.n_rows, m.n_cols, &pairs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// One threshold per proximity order; its length is the total order.
    pub subgraph: SubgraphOptions,
    pub knn_size: usize,
    pub boundaries: StrataBoundaries,
    pub max_proximity_nnz: Option<usize>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            subgraph: SubgraphOptions::new(vec![1.0, 0.9]),
            knn_size: 300,
            boundaries: StrataBoundaries::default(),
            max_proximity_nnz: None,
        }
    }
}

impl GraphConfig {
    pub fn proximity_order(&self) -> usize {
        self.subgraph.thresholds.len()
    }
}

/// Everything training and evaluation need from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphArtifacts {
    pub incidence: IncidenceMatrix,
    pub subgraphs: Vec<UserSubgraph>,
    pub knn: KnnIndex,
    pub strata: StrataIndex,
}

/// [`GraphArtifacts`] plus the intermediate walk-count matrices.
#[derive(Debug, Clone)]
pub struct GraphBuild {
    pub artifacts: GraphArtifacts,
    pub proximity: Vec<ProximityMatrix>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphStats {
    pub users: usize,
    pub items: usize,
    pub incidence_density: f64,
    pub proximity_density: Vec<f64>,
    pub subgraph_row_density: Vec<f64>,
    pub knn_size: usize,
    pub mean_stratum_size: Vec<Vec<f64>>,
}

pub fn build_graph(n_users: usize, n_items: usize, train: &[(usize, usize)], cfg: &GraphConfig) -> Result<GraphBuild> {
    if train.is_empty() {
        return Err(Error::Config("training split is empty; nothing to build a graph from".into()));
    }
    if cfg.knn_size < 1 {
        return Err(Error::Config("knn_size must be >= 1".into()));
    }
    cfg.subgraph.validate()?;
    let incidence = IncidenceMatrix::from_pairs(n_users, n_items, train)?;
    let proximity = (1..=cfg.proximity_order())
        .map(|k| proximity(&incidence, k, cfg.max_proximity_nnz))
        .collect::<Result<Vec<_>>>()?;
    let subgraphs = (0..n_users)
        .into_par_iter()
        .map(|u| build_subgraph(&proximity, u, &cfg.subgraph))
        .collect::<Result<Vec<_>>>()?;
    let max_len = cfg.boundaries.max_finite();
    let users = subgraphs
        .par_iter()
        .map(|a| build_strata(a, &item_distances(&incidence, a.user, max_len), &cfg.boundaries))
        .collect::<Result<Vec<_>>>()?;
    let knn = knn_index(&incidence, cfg.knn_size);
    Ok(GraphBuild {
        artifacts: GraphArtifacts {
            incidence,
            subgraphs,
            knn,
            strata: StrataIndex {
                boundaries: cfg.boundaries.clone(),
                users,
            },
        },
        proximity,
    })
}

impl GraphBuild {
    pub fn stats(&self) -> GraphStats {
        let a = &self.artifacts;
        let (n_users, n_items) = (a.incidence.n_users(), a.incidence.n_items());
        let cells = n_users as f64 * n_items as f64;
        let order = a.subgraphs.first().map_or(0, UserSubgraph::order);
        let n_strata = a.strata.boundaries.n_strata();
        GraphStats {
            users: n_users,
            items: n_items,
            incidence_density: a.incidence.nnz() as f64 / cells,
            proximity_density: self.proximity.iter().map(ProximityMatrix::density).collect(),
            subgraph_row_density: (0..order)
                .map(|k| a.subgraphs.iter().map(|s| s.row(k).len()).sum::<usize>() as f64 / cells)
                .collect(),
            knn_size: a.knn.knn_size,
            mean_stratum_size: (0..order)
                .map(|k| {
                    (0..n_strata)
                        .map(|t| {
                            a.strata.users.iter().map(|s| s.count(k, t)).sum::<usize>() as f64 / n_users as f64
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Writes the artifacts plus `proximity_<k>.coo`, `paths.coo` and
    /// `graph_stats.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.artifacts.write_dir(dir)?;
        for p in &self.proximity {
            p.to_coo().write_file(&dir.join(format!("proximity_{}.coo", p.order())))?;
        }
        shortest_paths(&self.artifacts.incidence)
            .to_coo()
            .write_file(&dir.join("paths.coo"))?;
        write_json(&dir.join("graph_stats.json"), &self.stats())
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

impl GraphArtifacts {
    pub fn n_users(&self) -> usize {
        self.incidence.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.incidence.n_items()
    }

    pub fn proximity_order(&self) -> usize {
        self.subgraphs.first().map_or(0, UserSubgraph::order)
    }

    /// Writes `incidence.coo`, `subgraphs.tsv`, `knn.json` and `strata.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.incidence.to_coo().write_file(&dir.join("incidence.coo"))?;
        let path = dir.join("subgraphs.tsv");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_subgraphs(BufWriter::new(f), &self.subgraphs, self.n_items()).map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join("knn.json"), &self.knn)?;
        write_json(&dir.join("strata.json"), &self.strata)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let incidence = IncidenceMatrix::from_coo(&CooMatrix::read_file(&dir.join("incidence.coo"))?)?;
        let path = dir.join("subgraphs.tsv");
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let subgraphs = read_subgraphs(BufReader::new(f))?;
        let knn: KnnIndex = read_json(&dir.join("knn.json"))?;
        let strata: StrataIndex = read_json(&dir.join("strata.json"))?;
        if subgraphs.len() != incidence.n_users()
            || strata.users.len() != incidence.n_users()
            || knn.n_items() != incidence.n_items()
        {
            return Err(Error::Format(format!(
                "graph artifacts in {} disagree on user/item counts",
                dir.display()
            )));
        }
        Ok(Self {
            incidence,
            subgraphs,
            knn,
            strata,
        })
    }
}

/// Header `%subgraphs<TAB>users<TAB>orders<TAB>items`, then one
/// `user<TAB>order<TAB>item` line per one-entry (orders are 1-based).
pub fn write_subgraphs<W: Write>(mut w: W, subgraphs: &[UserSubgraph], n_items: usize) -> std::io::Result<()> {
    let order = subgraphs.first().map_or(0, UserSubgraph::order);
    writeln!(w, "%subgraphs\t{}\t{order}\t{n_items}", subgraphs.len())?;
    for a in subgraphs {
        for k in 0..a.order() {
            for &v in a.row(k) {
                writeln!(w, "{}\t{}\t{v}", a.user, k + 1)?;
            }
        }
    }
    w.flush()
}

pub fn read_subgraphs<R: BufRead>(r: R) -> Result<Vec<UserSubgraph>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty subgraph file".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    let h: Vec<&str> = header.split('\t').collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad number {s:?}")));
    if h.len() != 4 || h[0] != "%subgraphs" {
        return Err(Error::Format(format!("bad subgraph header {header:?}")));
    }
    let (n_users, order, n_items) = (num(h[1])?, num(h[2])?, num(h[3])?);
    let mut rows = vec![vec![Vec::new(); order]; n_users];
    for line in lines {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("bad subgraph line {line:?}")));
        }
        let (u, k, v) = (num(f[0])?, num(f[1])?, num(f[2])?);
        if u >= n_users || k == 0 || k > order || v >= n_items {
            return Err(Error::Format(format!("subgraph entry out of range: {line:?}")));
        }
        rows[u][k - 1].push(v);
    }
    rows.into_iter()
        .enumerate()
        .map(|(u, r)| UserSubgraph::from_rows(u, n_items, r))
        .collect()
}
