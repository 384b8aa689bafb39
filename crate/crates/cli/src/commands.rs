use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use proxvae::checkpoint::Checkpoint;
use proxvae::evaluate::{self, EvalOptions};
use proxvae::graph::{GraphArtifacts, ItemSimilarity};
use proxvae::ingest::{self, DatasetStats, InteractionDataset, SplitPart};
use proxvae::trainer::{EpochRecord, StopReason, Trainer};
use proxvae::Checkpoint64;
use serde::Serialize;

use crate::config::RunConfig;
use crate::UsageError;

fn require(path: &Path, what: &str) -> Result<(), UsageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())))
    }
}

fn load_dataset(dir: &Path) -> anyhow::Result<InteractionDataset> {
    require(&dir.join("split.tsv"), "prepared dataset")?;
    InteractionDataset::read_dir(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn load_graph(dir: &Path) -> anyhow::Result<GraphArtifacts> {
    require(&dir.join("subgraphs.tsv"), "graph artifacts")?;
    GraphArtifacts::read_dir(dir).with_context(|| format!("loading graph from {}", dir.display()))
}

fn load_model_checkpoint(path: &Path, graph: &GraphArtifacts) -> anyhow::Result<Checkpoint64> {
    require(path, "checkpoint")?;
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    ckpt.model.check_compatible(graph.n_items(), graph.proximity_order())?;
    Ok(ckpt)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct PrepareStats {
    raw_records: usize,
    malformed_lines: usize,
    #[serde(flatten)]
    dataset: DatasetStats,
}

pub fn prepare(cfg: &RunConfig, input: &Path, out: &Path) -> anyhow::Result<()> {
    let s = &cfg.settings;
    require(input, "input file")?;
    let report = ingest::load_interactions(input, s.delimiter)?;
    let implicit = ingest::binarize_and_filter(&report.records, s.threshold, s.min_interactions)?;
    let ds = ingest::split(&implicit, s.train_frac, s.val_frac, s.seed)?;
    ds.write_dir(out)?;
    let stats = PrepareStats {
        raw_records: report.records.len(),
        malformed_lines: report.malformed_lines,
        dataset: ds.stats(),
    };
    write_json(&out.join("stats.json"), &stats)?;
    cfg.echo_into(out)?;
    let d = &stats.dataset;
    log::info!(
        "{} users, {} items, {} interactions, density {:.6}; split {}/{}/{}",
        d.users,
        d.items,
        d.interactions,
        d.density,
        d.train,
        d.validation,
        d.test
    );
    Ok(())
}

pub fn build_graph(cfg: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let ds = load_dataset(data)?;
    let build = proxvae::graph::build_graph(ds.n_users(), ds.n_items(), &ds.train, &cfg.settings.graph)?;
    build.write_dir(out)?;
    cfg.echo_into(out)?;
    let st = build.stats();
    log::info!("incidence density {:.6}", st.incidence_density);
    for (k, (p, a)) in st.proximity_density.iter().zip(&st.subgraph_row_density).enumerate() {
        log::info!("order {}: proximity density {p:.6}, subgraph density {a:.6}", k + 1);
    }
    Ok(())
}

/// Keeps the header and the rows up to `epoch` of an existing log.
fn truncated_log(path: &Path, epoch: usize) -> anyhow::Result<String> {
    let text = fs::read_to_string(path)?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|e| e.parse::<usize>().ok())
                .is_some_and(|e| e <= epoch);
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct TrainSummary {
    stop: StopReason,
    epochs: usize,
    best_epoch: Option<usize>,
    best_validation_ndcg: Option<f64>,
}

pub fn train(cfg: &RunConfig, data: &Path, graph_dir: &Path, out: &Path, resume: Option<&Path>) -> anyhow::Result<()> {
    let s = &cfg.settings;
    let ds = load_dataset(data)?;
    let graph = load_graph(graph_dir)?;
    fs::create_dir_all(out)?;
    cfg.echo_into(out)?;
    let log_path = out.join("train_log.csv");
    let best_path = out.join("best.ckpt");
    let last_path = out.join("last.ckpt");

    let (mut trainer, log_text) = match resume {
        None => (
            Trainer::<f64>::new(&ds, &graph, s.train.clone())?,
            format!("{}\n", EpochRecord::CSV_HEADER),
        ),
        Some(from) => {
            let last_file: PathBuf = if from.is_dir() { from.join("last.ckpt") } else { from.to_path_buf() };
            let last = load_model_checkpoint(&last_file, &graph)?;
            let best_file = last_file.with_file_name("best.ckpt");
            let best = if best_file.exists() && last.best_epoch != Some(last.epoch) {
                let b = load_model_checkpoint(&best_file, &graph)?;
                (Some(b.epoch) == last.best_epoch).then_some(b)
            } else {
                None
            };
            let epoch = last.epoch;
            let text = if log_path.exists() {
                truncated_log(&log_path, epoch)?
            } else {
                format!("{}\n", EpochRecord::CSV_HEADER)
            };
            log::info!("resuming from {} at epoch {epoch}", last_file.display());
            (Trainer::resume(&ds, &graph, s.train.clone(), last, best)?, text)
        }
    };
    if let Some(p) = &s.loss_dump {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        trainer.set_loss_dump(Box::new(BufWriter::new(f)))?;
    }
    fs::write(&log_path, log_text)?;
    let mut log = BufWriter::new(fs::OpenOptions::new().append(true).open(&log_path)?);

    let every = s.checkpoint_every;
    let result = trainer.train(|record, t| {
        let io = |e: std::io::Error| proxvae::Error::Format(format!("train_log.csv: {e}"));
        writeln!(log, "{}", record.csv_row()).and_then(|_| log.flush()).map_err(io)?;
        if record.improved {
            if let Some(b) = t.best_checkpoint() {
                b.save(&best_path)?;
            }
        }
        if record.epoch.is_multiple_of(every) {
            t.checkpoint().save(&last_path)?;
        }
        Ok(())
    });
    let stop = result.with_context(|| {
        format!(
            "training stopped at epoch {}; the best checkpoint so far is in {}",
            trainer.epoch() + 1,
            best_path.display()
        )
    })?;
    let last = trainer.checkpoint();
    last.save(&last_path)?;
    if trainer.best_checkpoint().is_none() {
        last.save(&best_path)?;
    }
    let summary = TrainSummary {
        stop,
        epochs: trainer.epoch(),
        best_epoch: last.best_epoch,
        best_validation_ndcg: last.best_validation_ndcg,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    log::info!(
        "stopped ({:?}) after {} epochs; best epoch {:?}",
        summary.stop,
        summary.epochs,
        summary.best_epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    split: SplitPart,
    checkpoint_epoch: usize,
    k: usize,
    alpha: f64,
    users_evaluated: usize,
    mean_ndcg: f64,
    mean_recall: f64,
    mean_pild: f64,
    skipped_empty_train: usize,
    skipped_empty_held_out: usize,
    skipped_short_list: usize,
    config: serde_json::Value,
}

pub fn evaluate(cfg: &RunConfig, ckpt_path: &Path, data: &Path, graph_dir: &Path, out: &Path) -> anyhow::Result<()> {
    let s = &cfg.settings;
    let ds = load_dataset(data)?;
    let graph = load_graph(graph_dir)?;
    let ckpt = load_model_checkpoint(ckpt_path, &graph)?;
    let held_out = ds.items_by_user(s.eval_split);
    let exclude = match s.eval_split {
        SplitPart::Test => ds.items_by_user(SplitPart::Validation),
        _ => Vec::new(),
    };
    let mut sim = ItemSimilarity::from_incidence(&graph.incidence);
    if s.pild_include_validation {
        sim = sim.with_extra(&ds.validation);
    }
    let opts = EvalOptions {
        k: s.k_cut,
        alpha: s.alpha,
        with_pild: true,
    };
    let report = evaluate::evaluate(&ckpt.model, &graph, &held_out, &exclude, &sim, &opts)?;

    fs::create_dir_all(out)?;
    cfg.echo_into(out)?;
    report.write_csv_file(&out.join("metrics.csv"), &ds.users)?;
    let summary = EvalSummary {
        split: s.eval_split,
        checkpoint_epoch: ckpt.epoch,
        k: report.k,
        alpha: report.alpha,
        users_evaluated: report.n_evaluated(),
        mean_ndcg: report.mean_ndcg,
        mean_recall: report.mean_recall,
        mean_pild: report.mean_pild,
        skipped_empty_train: report.skipped_empty_train,
        skipped_empty_held_out: report.skipped_empty_held_out,
        skipped_short_list: report.skipped_short_list,
        config: cfg.as_json(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    if s.export_embeddings {
        let path = out.join("embeddings.tsv");
        let mut w = BufWriter::new(File::create(&path)?);
        evaluate::write_embeddings(&ckpt.model, &graph, &ds.users, &mut w)?;
        w.flush()?;
    }
    log::info!(
        "{} users: NDCG@{k} {:.4}, Recall@{k} {:.4}, PILD@{k} {:.4}; skipped {} without train items",
        summary.users_evaluated,
        summary.mean_ndcg,
        summary.mean_recall,
        summary.mean_pild,
        summary.skipped_empty_train,
        k = summary.k
    );
    Ok(())
}

pub fn recommend(ckpt_path: &Path, data: &Path, graph_dir: &Path, user: &str, k: usize, alpha: f64) -> anyhow::Result<()> {
    let ds = load_dataset(data)?;
    let graph = load_graph(graph_dir)?;
    let ckpt = load_model_checkpoint(ckpt_path, &graph)?;
    let u = ds
        .user_index(user)
        .ok_or_else(|| UsageError(format!("unknown user id {user:?}")))?;
    let a = &graph.subgraphs[u];
    let seen = &ds.items_by_user(SplitPart::Validation)[u];
    let list = evaluate::recommend(&ckpt.model, a, seen, k, alpha)?
        .ok_or_else(|| anyhow::anyhow!("user {user:?} has no training interactions to encode"))?;
    let scores = evaluate::item_scores(&ckpt.model, a)?;
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    for (rank, (&v, score)) in list.items.iter().zip(&list.scores).enumerate() {
        let second = scores.second.get(v).map(|f| format!("{f:.6}")).unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{score:.6}\t{:.6}\t{second}",
            rank + 1,
            ds.items[v],
            scores.first[v]
        )?;
    }
    w.flush()?;
    Ok(())
}
