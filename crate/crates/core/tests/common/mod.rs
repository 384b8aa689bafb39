#![allow(dead_code)]

use proxvae::graph::{build_graph, GraphArtifacts, GraphConfig};
use proxvae::ingest::{split, InteractionDataset};
use proxvae::model::ModelConfig;
use proxvae::synthetic::{planted_interactions, PlantedConfig};
use proxvae::trainer::TrainConfig;

/// 20 users and 12 items in two disjoint blocks.
pub fn tiny_planted() -> (InteractionDataset, GraphArtifacts) {
    let cfg = PlantedConfig {
        blocks: 2,
        users_per_block: 10,
        items_per_block: 6,
        items_per_user: 4,
        seed: 3,
        ..PlantedConfig::default()
    };
    let ds = split(&planted_interactions(&cfg).unwrap(), 0.8, 0.1, 5).unwrap();
    let graph = build_graph(
        ds.n_users(),
        ds.n_items(),
        &ds.train,
        &GraphConfig {
            knn_size: 3,
            ..GraphConfig::default()
        },
    )
    .unwrap()
    .artifacts;
    (ds, graph)
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            latent_dim: 4,
            embed_dim: 2,
            encoder_hidden: vec![8],
            ..ModelConfig::default()
        },
        batch_size: 8,
        learning_rate: 0.01,
        max_epochs: 5,
        early_stop_patience: 1000,
        seed: 11,
        threads: 1,
        ..TrainConfig::default()
    }
}
