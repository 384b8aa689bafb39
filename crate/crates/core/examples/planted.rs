//! Trains on planted two-block data and prints test metrics for a few
//! values of alpha.
//!
//! ```text
//! cargo run --release --example planted -- [bridge_users] [seed]
//! ```

use std::time::Instant;

use proxvae::evaluate::{evaluate, EvalOptions};
use proxvae::graph::{build_graph, GraphConfig, ItemSimilarity};
use proxvae::ingest::{split, SplitPart};
use proxvae::model::ModelConfig;
use proxvae::synthetic::{planted_interactions, PlantedConfig};
use proxvae::trainer::{TrainConfig, Trainer};

fn arg(i: usize, default: u64) -> u64 {
    std::env::args()
        .nth(i)
        .map_or(default, |s| s.parse().expect("numeric argument"))
}

fn main() -> proxvae::Result<()> {
    let bridge_users = arg(1, 0) as usize;
    let seed = arg(2, 7);
    let data = planted_interactions(&PlantedConfig {
        bridge_users,
        seed,
        ..PlantedConfig::default()
    })?;
    let ds = split(&data, 0.8, 0.1, seed)?;
    let graph_cfg = GraphConfig {
        knn_size: 10,
        ..GraphConfig::default()
    };
    let graph = build_graph(ds.n_users(), ds.n_items(), &ds.train, &graph_cfg)?.artifacts;
    let cfg = TrainConfig {
        model: ModelConfig {
            latent_dim: 16,
            embed_dim: 2,
            ..ModelConfig::default()
        },
        batch_size: 64,
        max_epochs: 300,
        early_stop_patience: 300,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let mut trainer: Trainer<f64> = Trainer::new(&ds, &graph, cfg)?;
    let stop = trainer.train(|_, _| Ok(()))?;
    let best = trainer.best_checkpoint().expect("at least one epoch ran");
    println!(
        "{stop:?} after {} epochs in {:.1} s; best epoch {:?}, validation NDCG@20 {:.4}",
        trainer.epoch(),
        start.elapsed().as_secs_f64(),
        best.best_epoch,
        best.best_validation_ndcg.unwrap_or(f64::NAN)
    );

    let test = ds.items_by_user(SplitPart::Test);
    let val = ds.items_by_user(SplitPart::Validation);
    let sim = ItemSimilarity::from_incidence(&graph.incidence);
    for alpha in [1.0, 0.5, 0.0] {
        let opts = EvalOptions {
            k: 10,
            alpha,
            with_pild: true,
        };
        let r = evaluate(&best.model, &graph, &test, &val, &sim, &opts)?;
        println!(
            "alpha {alpha:.1}: Recall@10 {:.4}  NDCG@10 {:.4}  PILD@10 {:.4}",
            r.mean_recall, r.mean_ndcg, r.mean_pild
        );
    }
    Ok(())
}
