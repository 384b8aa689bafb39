//! Interaction-log loading, implicit-feedback filtering and the
//! interaction-level train / validation / test split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub value: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Delimiter {
    /// MovieLens `::`
    #[default]
    DoubleColon,
    Comma,
    Tab,
}

impl Delimiter {
    pub fn as_str(&self) -> &'static str {
        match self {
            Delimiter::DoubleColon => "::",
            Delimiter::Comma => ",",
            Delimiter::Tab => "\t",
        }
    }
}

impl FromStr for Delimiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "::" => Ok(Delimiter::DoubleColon),
            "," | "comma" => Ok(Delimiter::Comma),
            "\t" | "\\t" | "tab" => Ok(Delimiter::Tab),
            other => Err(Error::Config(format!(
                "unsupported delimiter {other:?} (expected `::`, `,` or `tab`)"
            ))),
        }
    }
}

impl fmt::Display for Delimiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delimiter::Tab => f.write_str("tab"),
            other => f.write_str(other.as_str()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<RawInteraction>,
    pub malformed_lines: usize,
}

fn parse_line(line: &str, delimiter: Delimiter) -> Option<RawInteraction> {
    let mut fields = line.split(delimiter.as_str()).map(str::trim);
    let user_id = fields.next()?;
    let item_id = fields.next()?;
    let value: f64 = fields.next()?.parse().ok()?;
    if user_id.is_empty() || item_id.is_empty() || !value.is_finite() {
        return None;
    }
    let timestamp = match fields.next() {
        None | Some("") => None,
        Some(ts) => Some(ts.parse::<i64>().ok()?),
    };
    Some(RawInteraction {
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        value,
        timestamp,
    })
}

/// Parses delimited interaction records. Blank lines are ignored; lines that
/// do not parse are counted in [`LoadReport::malformed_lines`].
pub fn parse_interactions<R: BufRead>(reader: R, delimiter: Delimiter) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Format(format!("unreadable line: {e}")))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, delimiter) {
            Some(r) => report.records.push(r),
            None => report.malformed_lines += 1,
        }
    }
    if report.records.is_empty() && report.malformed_lines > 0 {
        return Err(Error::Format(format!(
            "all {} non-empty lines are malformed for delimiter {delimiter}",
            report.malformed_lines
        )));
    }
    if report.malformed_lines > 0 {
        log::warn!("skipped {} malformed interaction lines", report.malformed_lines);
    }
    Ok(report)
}

pub fn load_interactions(path: &Path, delimiter: Delimiter) -> Result<LoadReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), delimiter)
}

/// Deduplicated implicit interactions with dense indices assigned in order of
/// first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitInteractions {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
}

pub fn binarize_and_filter(
    raws: &[RawInteraction],
    threshold: f64,
    min_interactions: usize,
) -> Result<ImplicitInteractions> {
    if !threshold.is_finite() {
        return Err(Error::Config(format!("threshold must be finite, got {threshold}")));
    }
    let mut seen = HashSet::new();
    let mut kept: Vec<(&str, &str)> = raws
        .iter()
        .filter(|r| r.value >= threshold)
        .map(|r| (r.user_id.as_str(), r.item_id.as_str()))
        .filter(|p| seen.insert(*p))
        .collect();

    if min_interactions > 0 {
        loop {
            let mut user_deg: HashMap<&str, usize> = HashMap::new();
            let mut item_deg: HashMap<&str, usize> = HashMap::new();
            for &(u, v) in &kept {
                *user_deg.entry(u).or_default() += 1;
                *item_deg.entry(v).or_default() += 1;
            }
            let before = kept.len();
            kept.retain(|(u, v)| user_deg[u] >= min_interactions && item_deg[v] >= min_interactions);
            if kept.len() == before {
                break;
            }
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset {
            stage: "binarize_and_filter",
        });
    }

    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut items = Vec::new();
    let pairs = kept
        .iter()
        .map(|&(u, v)| {
            let ui = *user_index.entry(u).or_insert_with(|| {
                users.push(u.to_string());
                users.len() - 1
            });
            let vi = *item_index.entry(v).or_insert_with(|| {
                items.push(v.to_string());
                items.len() - 1
            });
            (ui, vi)
        })
        .collect();
    Ok(ImplicitInteractions { users, items, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl SplitPart {
    pub fn label(&self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Validation => "val",
            SplitPart::Test => "test",
        }
    }
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Validation),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Format(format!("unknown split label {other:?}"))),
        }
    }
}

/// Index maps plus the three disjoint interaction sets, each sorted by
/// `(user, item)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub users_without_train: usize,
}

impl InteractionDataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn part(&self, part: SplitPart) -> &[(usize, usize)] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }

    /// Item lists per user for one split, each sorted ascending.
    pub fn items_by_user(&self, part: SplitPart) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for &(u, v) in self.part(part) {
            out[u].push(v);
        }
        for row in &mut out {
            row.sort_unstable();
        }
        out
    }

    pub fn users_without_train(&self) -> usize {
        let mut has = vec![false; self.n_users()];
        for &(u, _) in &self.train {
            has[u] = true;
        }
        has.iter().filter(|h| !**h).count()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == id)
    }

    pub fn stats(&self) -> DatasetStats {
        let interactions = self.n_interactions();
        DatasetStats {
            users: self.n_users(),
            items: self.n_items(),
            interactions,
            density: interactions as f64 / (self.n_users() as f64 * self.n_items() as f64),
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
            users_without_train: self.users_without_train(),
        }
    }

    /// Writes `users.tsv`, `items.tsv` and `split.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_index_map(&dir.join("users.tsv"), &self.users)?;
        write_index_map(&dir.join("items.tsv"), &self.items)?;
        let path = dir.join("split.tsv");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_manifest(BufWriter::new(file)).map_err(|e| Error::io(&path, e))
    }

    /// One line per interaction: `user_index<TAB>item_index<TAB>{train|val|test}`.
    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut rows: Vec<(usize, usize, SplitPart)> = Vec::with_capacity(self.n_interactions());
        for part in [SplitPart::Train, SplitPart::Validation, SplitPart::Test] {
            rows.extend(self.part(part).iter().map(|&(u, v)| (u, v, part)));
        }
        rows.sort_unstable_by_key(|&(u, v, _)| (u, v));
        for (u, v, part) in rows {
            writeln!(w, "{u}\t{v}\t{}", part.label())?;
        }
        w.flush()
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let users = read_index_map(&dir.join("users.tsv"))?;
        let items = read_index_map(&dir.join("items.tsv"))?;
        let path = dir.join("split.tsv");
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut ds = InteractionDataset {
            users,
            items,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        let mut seen = HashSet::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Format(format!("split.tsv line {}: {line:?}", lineno + 1));
            let mut f = line.split('\t');
            let u: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: usize = f.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let part: SplitPart = f.next().ok_or_else(bad)?.parse()?;
            if u >= ds.n_users() || v >= ds.n_items() || !seen.insert((u, v)) {
                return Err(bad());
            }
            match part {
                SplitPart::Train => ds.train.push((u, v)),
                SplitPart::Validation => ds.validation.push((u, v)),
                SplitPart::Test => ds.test.push((u, v)),
            }
        }
        ds.train.sort_unstable();
        ds.validation.sort_unstable();
        ds.test.sort_unstable();
        Ok(ds)
    }
}

fn write_index_map(path: &Path, ids: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, id) in ids.iter().enumerate() {
        writeln!(w, "{i}\t{id}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_index_map(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let (idx, id) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{}: bad index line {line:?}", path.display())))?;
        if idx.parse::<usize>().ok() != Some(ids.len()) {
            return Err(Error::Format(format!(
                "{}: expected index {}, found {idx:?}",
                path.display(),
                ids.len()
            )));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// Interaction-level random split. `train_frac` of all interactions form the
/// training portion, and `val_frac_of_train` of that portion is moved to
/// validation.
pub fn split(
    interactions: &ImplicitInteractions,
    train_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<InteractionDataset> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train_frac must be in (0,1), got {train_frac}")));
    }
    if !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(Error::Config(format!(
            "val_frac must be in [0,1), got {val_frac_of_train}"
        )));
    }
    let mut pairs = interactions.pairs.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let n_train_total = (train_frac * pairs.len() as f64).round() as usize;
    let n_val = (val_frac_of_train * n_train_total as f64).round() as usize;
    let mut validation = pairs[..n_val].to_vec();
    let mut train = pairs[n_val..n_train_total].to_vec();
    let mut test = pairs[n_train_total..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(InteractionDataset {
        users: interactions.users.clone(),
        items: interactions.items.clone(),
        train,
        validation,
        test,
    })
}
