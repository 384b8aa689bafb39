//! Flat `key = value` run configuration.
//!
//! Every key has a default, so an empty file is a valid configuration. Lines
//! starting with `#` are comments. Unknown or repeated keys are rejected.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use proxvae::graph::{GraphConfig, ProximityNormalize, StrataBoundaries, SubgraphOptions};
use proxvae::ingest::{Delimiter, SplitPart};
use proxvae::model::ModelConfig;
use proxvae::objective::SampleSizePolicy;
use proxvae::trainer::TrainConfig;

use crate::UsageError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($name:literal = $default:literal : $help:literal;)*) => {
        pub const KEYS: &[Key] = &[$(Key { name: $name, default: $default, help: $help }),*];
    };
}

keys! {
    "input" = "" : "raw interaction file read by `prepare`";
    "data_dir" = "data" : "prepared dataset directory";
    "graph_dir" = "graph" : "graph artifact directory";
    "train_dir" = "train" : "training output directory";
    "eval_dir" = "eval" : "evaluation output directory";
    "delimiter" = "::" : "field separator of the raw file: `::`, `,` or `tab`";
    "threshold" = "4" : "ratings at or above this value count as interactions";
    "min_interactions" = "10" : "iterated degree floor for users and items; 0 disables";
    "train_frac" = "0.8" : "fraction of interactions in the training portion";
    "val_frac" = "0.1" : "fraction of the training portion moved to validation";
    "seed" = "0" : "seed for the split, initialization and training";
    "k_ord" = "2" : "proximity orders in each user subgraph (1 or 2)";
    "c_2" = "0.9" : "second-order threshold on walk counts";
    "proximity_normalize" = "none" : "`none` compares raw counts, `row` divides each row by its maximum first";
    "max_second_order" = "0" : "keep at most this many second-order entries per user; 0 is unlimited";
    "max_proximity_nnz" = "0" : "memory budget for nonzeros of each proximity matrix; 0 is unlimited";
    "knn_size" = "300" : "item neighbours in the masked item layers";
    "strata_boundaries" = "3,5,inf" : "path-length cut points of the negative strata, ending in `inf`";
    "sample_size" = "50" : "negatives per stratum: a cap `n`, a per-stratum list `n1,n2,...`, or `exhaustive`";
    "latent_dim" = "200" : "user embedding dimension P";
    "embed_dim" = "3" : "item and proximity embedding dimension D";
    "item_layers" = "2" : "item network depth M";
    "prox_layers" = "2" : "proximity network depth R";
    "encoder_hidden" = "600" : "encoder hidden widths, comma-separated";
    "dropout" = "0.1" : "encoder input dropout rate during training";
    "logvar_clamp" = "10" : "bound on the absolute encoder log-variance";
    "beta" = "0.2" : "KL weight";
    "batch_size" = "512" : "users per mini-batch";
    "learning_rate" = "0.001" : "Adam step size";
    "max_epochs" = "1000" : "epoch budget";
    "patience" = "20" : "epochs without validation improvement before stopping";
    "eval_every" = "1" : "epochs between validation passes";
    "eval_k" = "20" : "cutoff of the validation NDCG used for model selection";
    "eps_samples" = "1" : "reparameterization draws per user and step";
    "grad_clip" = "10" : "global gradient-norm cap; `none` disables";
    "checkpoint_every" = "1" : "epochs between writes of last.ckpt";
    "k_cut" = "20" : "length of evaluated and recommended lists";
    "alpha" = "1" : "ranking score alpha*F1 + (1-alpha)*F2";
    "eval_split" = "test" : "held-out split scored by `evaluate`: `test` or `val`";
    "pild_include_validation" = "false" : "add validation interactions to the PILD item similarity";
    "export_embeddings" = "false" : "write embeddings.tsv with per-user encoder means";
    "threads" = "0" : "worker threads; 0 uses every core, 1 is the deterministic serial mode";
    "loss_dump" = "" : "debug: file receiving per-user loss terms for every step";
}

/// Text of a configuration file holding every default, with help comments.
pub fn defaults_file() -> String {
    let mut s = String::new();
    for k in KEYS {
        let _ = writeln!(s, "# {}\n{} = {}", k.help, k.name, k.default);
    }
    s
}

/// Key table for `--help`.
pub fn help_table() -> String {
    let width = KEYS.iter().map(|k| k.name.len() + k.default.len()).max().unwrap_or(0) + 3;
    let mut s = String::from("Configuration keys (key = default):\n");
    for k in KEYS {
        let lhs = format!("{} = {}", k.name, k.default);
        let _ = writeln!(s, "  {lhs:width$}  {}", k.help);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub graph_dir: PathBuf,
    pub train_dir: PathBuf,
    pub eval_dir: PathBuf,
    pub delimiter: Delimiter,
    pub threshold: f64,
    pub min_interactions: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    pub checkpoint_every: usize,
    pub k_cut: usize,
    pub alpha: f64,
    pub eval_split: SplitPart,
    pub pild_include_validation: bool,
    pub export_embeddings: bool,
    pub threads: usize,
    pub loss_dump: Option<PathBuf>,
}

/// Effective configuration: the raw values in key-table order plus their
/// parsed form.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: Vec<String>,
    pub settings: Settings,
}

impl RunConfig {
    /// Reads `path` (if any), then applies `overrides` of the form `key=value`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut values: Vec<String> = KEYS.iter().map(|k| k.default.to_string()).collect();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
            let mut seen = HashMap::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = split_assignment(line)
                    .ok_or_else(|| UsageError(format!("{}:{}: expected `key = value`", p.display(), lineno + 1)))?;
                if let Some(prev) = seen.insert(key.to_string(), lineno + 1) {
                    return Err(UsageError(format!(
                        "{}:{}: key `{key}` already set on line {prev}",
                        p.display(),
                        lineno + 1
                    ))
                    .into());
                }
                values[index_of(key)?] = value.to_string();
            }
        }
        for o in overrides {
            let (key, value) = split_assignment(o).ok_or_else(|| UsageError(format!("--set expects key=value, got {o:?}")))?;
            values[index_of(key)?] = value.to_string();
        }
        let settings = parse(&values)?;
        Ok(Self { values, settings })
    }

    /// Same syntax as the input file, every key present.
    pub fn to_file_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "{} = {v}", k.name);
        }
        s
    }

    /// Writes `config.effective` into `dir`.
    pub fn echo_into(&self, dir: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.effective"), self.to_file_text())?;
        Ok(())
    }

    pub fn as_json(&self) -> serde_json::Value {
        serde_json::Value::Object(
            KEYS.iter()
                .zip(&self.values)
                .map(|(k, v)| (k.name.to_string(), serde_json::Value::String(v.clone())))
                .collect(),
        )
    }
}

fn split_assignment(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    (!k.is_empty()).then_some((k, v.trim()))
}

fn index_of(key: &str) -> Result<usize, UsageError> {
    KEYS.iter()
        .position(|k| k.name == key)
        .ok_or_else(|| UsageError(format!("unknown configuration key `{key}`")))
}

struct Reader<'a> {
    values: &'a [String],
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        &self.values[index_of(key).expect("known key")]
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T, UsageError> {
        let v = self.raw(key);
        v.parse().map_err(|_| UsageError(format!("bad value for `{key}`: {v:?}")))
    }

    fn positive(&self, key: &str) -> Result<usize, UsageError> {
        match self.parse::<usize>(key)? {
            0 => Err(UsageError(format!("`{key}` must be at least 1"))),
            n => Ok(n),
        }
    }

    fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// 0 means "no limit".
    fn limit(&self, key: &str) -> Result<Option<usize>, UsageError> {
        Ok(Some(self.parse::<usize>(key)?).filter(|&n| n > 0))
    }

    fn list(&self, key: &str) -> Result<Vec<usize>, UsageError> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|p| p.trim().parse().map_err(|_| UsageError(format!("bad entry {p:?} in `{key}`"))))
            .collect()
    }
}

fn usage<E: std::fmt::Display>(e: E) -> UsageError {
    UsageError(e.to_string())
}

fn parse(values: &[String]) -> Result<Settings, UsageError> {
    let r = Reader { values };
    let k_ord: usize = r.parse("k_ord")?;
    let mut thresholds = vec![1.0];
    match k_ord {
        1 => {}
        2 => thresholds.push(r.parse("c_2")?),
        _ => return Err(UsageError(format!("`k_ord` must be 1 or 2, got {k_ord}"))),
    }
    let subgraph = SubgraphOptions {
        thresholds,
        normalize: r.raw("proximity_normalize").parse::<ProximityNormalize>().map_err(usage)?,
        max_high_order: r.limit("max_second_order")?,
    };
    subgraph.validate().map_err(usage)?;
    let graph = GraphConfig {
        subgraph,
        knn_size: r.positive("knn_size")?,
        boundaries: r.raw("strata_boundaries").parse::<StrataBoundaries>().map_err(usage)?,
        max_proximity_nnz: r.limit("max_proximity_nnz")?,
    };
    let negatives = match r.raw("sample_size") {
        "exhaustive" => SampleSizePolicy::Exhaustive,
        s if s.contains(',') => SampleSizePolicy::PerStratum(r.list("sample_size")?),
        _ => SampleSizePolicy::Cap(r.positive("sample_size")?),
    };
    if let SampleSizePolicy::PerStratum(ns) = &negatives {
        if ns.len() != graph.boundaries.n_strata() {
            return Err(UsageError(format!(
                "`sample_size` lists {} strata but `strata_boundaries` defines {}",
                ns.len(),
                graph.boundaries.n_strata()
            )));
        }
    }
    let seed = r.parse("seed")?;
    let threads = r.parse("threads")?;
    let train = TrainConfig {
        model: ModelConfig {
            latent_dim: r.positive("latent_dim")?,
            embed_dim: r.positive("embed_dim")?,
            item_layers: r.positive("item_layers")?,
            prox_layers: r.positive("prox_layers")?,
            encoder_hidden: r.list("encoder_hidden")?,
            dropout: r.parse("dropout")?,
            logvar_clamp: r.parse("logvar_clamp")?,
        },
        batch_size: r.positive("batch_size")?,
        learning_rate: r.parse("learning_rate")?,
        max_epochs: r.positive("max_epochs")?,
        beta: r.parse("beta")?,
        early_stop_patience: r.positive("patience")?,
        eval_every: r.positive("eval_every")?,
        eval_k: r.positive("eval_k")?,
        seed,
        negatives,
        eps_samples: r.positive("eps_samples")?,
        grad_clip: match r.raw("grad_clip") {
            "none" => None,
            _ => Some(r.parse("grad_clip")?),
        },
        threads,
    };
    train.validate().map_err(usage)?;
    let alpha: f64 = r.parse("alpha")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(UsageError(format!("`alpha` must be in [0,1], got {alpha}")));
    }
    if k_ord == 1 && alpha != 1.0 {
        return Err(UsageError("`alpha` below 1 needs k_ord = 2".into()));
    }
    let eval_split = match r.raw("eval_split") {
        "test" => SplitPart::Test,
        "val" => SplitPart::Validation,
        other => return Err(UsageError(format!("`eval_split` must be test or val, got {other:?}"))),
    };
    Ok(Settings {
        input: r.optional_path("input"),
        data_dir: r.path("data_dir"),
        graph_dir: r.path("graph_dir"),
        train_dir: r.path("train_dir"),
        eval_dir: r.path("eval_dir"),
        delimiter: r.raw("delimiter").parse::<Delimiter>().map_err(usage)?,
        threshold: r.parse("threshold")?,
        min_interactions: r.parse("min_interactions")?,
        train_frac: r.parse("train_frac")?,
        val_frac: r.parse("val_frac")?,
        seed,
        graph,
        train,
        checkpoint_every: r.positive("checkpoint_every")?,
        k_cut: r.positive("k_cut")?,
        alpha,
        eval_split,
        pild_include_validation: r.parse("pild_include_validation")?,
        export_embeddings: r.parse("export_embeddings")?,
        threads,
        loss_dump: r.optional_path("loss_dump"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_text(text: &str) -> anyhow::Result<RunConfig> {
        let dir = tempfile::tempdir()?;
        let p = dir.path().join("run.conf");
        std::fs::write(&p, text)?;
        RunConfig::load(Some(&p), &[])
    }

    #[test]
    fn defaults_match_the_library_defaults() {
        let s = RunConfig::load(None, &[]).unwrap().settings;
        assert_eq!(s.graph, GraphConfig::default());
        let t = TrainConfig::default();
        assert_eq!(s.train, t);
        assert_eq!(s.k_cut, 20);
        assert_eq!(s.alpha, 1.0);
        assert_eq!(s.delimiter, Delimiter::DoubleColon);
    }

    #[test]
    fn defaults_file_round_trips() {
        let c = load_text(&defaults_file()).unwrap();
        assert_eq!(c.settings, RunConfig::load(None, &[]).unwrap().settings);
        let again = load_text(&c.to_file_text()).unwrap();
        assert_eq!(again.to_file_text(), c.to_file_text());
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let e = load_text("latent_dims = 3\n").unwrap_err();
        assert!(e.to_string().contains("latent_dims"));
        assert!(e.downcast_ref::<UsageError>().is_some());
        let e = load_text("seed = 1\n# comment\nseed = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn values_are_typed() {
        let c = load_text("k_ord = 1\nsample_size = 3,2,1\ngrad_clip = none\nencoder_hidden = 8,4\n").unwrap();
        assert_eq!(c.settings.graph.subgraph.thresholds, vec![1.0]);
        assert_eq!(c.settings.train.negatives, SampleSizePolicy::PerStratum(vec![3, 2, 1]));
        assert_eq!(c.settings.train.grad_clip, None);
        assert_eq!(c.settings.train.model.encoder_hidden, vec![8, 4]);
        assert!(load_text("sample_size = 3,2\n").is_err());
        assert!(load_text("k_ord = 3\n").is_err());
        assert!(load_text("alpha = 1.5\n").is_err());
        assert!(load_text("k_ord = 1\nalpha = 0.5\n").is_err());
        assert!(load_text("batch_size = 0\n").is_err());
        assert!(load_text("threshold = four\n").is_err());
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let c = RunConfig::load(None, &["seed=9".into(), "c_2 = 4".into()]).unwrap();
        assert_eq!(c.settings.seed, 9);
        assert_eq!(c.settings.graph.subgraph.thresholds, vec![1.0, 4.0]);
        assert!(c.to_file_text().contains("\nc_2 = 4\n"));
        assert!(RunConfig::load(None, &["nonsense".into()]).is_err());
    }
}
