use std::sync::Arc;

use proxvae::evaluate::{item_scores, recommend};
use proxvae::graph::UserSubgraph;
use proxvae::model::{Model, ModelConfig};
use proxvae::tensor::SupportPattern;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: usize = 8;

fn config() -> ModelConfig {
    ModelConfig {
        latent_dim: 3,
        embed_dim: 2,
        encoder_hidden: vec![5],
        ..ModelConfig::default()
    }
}

fn ring_support() -> Arc<SupportPattern> {
    let rows: Vec<Vec<usize>> = (0..N).map(|v| vec![v, (v + 1) % N]).collect();
    Arc::new(SupportPattern::from_rows(N, &rows).unwrap())
}

fn user() -> UserSubgraph {
    UserSubgraph::from_rows(0, N, vec![vec![1, 5], vec![0, 1, 2, 5, 6]]).unwrap()
}

#[test]
fn dominant_item_ranks_first() {
    let mut m: Model<f64> = Model::zeros(&config(), N, 2, ring_support()).unwrap();
    for v in 0..N {
        m.decoder.gamma.set(0, v, -5.0);
    }
    m.decoder.gamma.set(0, 6, 40.0);
    let list = recommend(&m, &user(), &[], 3, 1.0).unwrap().unwrap();
    assert_eq!(list.items[0], 6);
    assert_eq!(list.scores[0], 1.0);
    assert!(!list.items.contains(&1) && !list.items.contains(&5));
}

#[test]
fn alpha_switches_heads() {
    let mut m: Model<f64> = Model::zeros(&config(), N, 2, ring_support()).unwrap();
    for v in 0..N {
        m.decoder.gamma.set(0, v, v as f64 * 0.3);
        m.decoder.gamma.set(1, v, -(v as f64) * 0.3);
    }
    let first = recommend(&m, &user(), &[], N, 1.0).unwrap().unwrap();
    let second = recommend(&m, &user(), &[], N, 0.0).unwrap().unwrap();
    assert_eq!(first.items, vec![7, 6, 4, 3, 2, 0]);
    let mut reversed = second.items.clone();
    reversed.reverse();
    assert_eq!(first.items, reversed);
}

#[test]
fn ranking_matches_an_exhaustive_argsort() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Model<f64> = Model::init(&config(), N, 2, ring_support(), &mut rng).unwrap();
        let a = user();
        let alpha = 0.3;
        // independent scorer: sigmoid of the decoder logits at the encoder mean
        let z = m.encoder.mean_embedding(&a).unwrap();
        let logits = m.decoder.forward(&z).unwrap().logits;
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut oracle: Vec<(usize, f64)> = (0..N)
            .filter(|v| !a.row(0).contains(v))
            .map(|v| (v, alpha * sig(logits.get(0, v)) + (1.0 - alpha) * sig(logits.get(1, v))))
            .collect();
        oracle.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
        let list = recommend(&m, &a, &[], 4, alpha).unwrap().unwrap();
        let expected: Vec<usize> = oracle.iter().take(4).map(|p| p.0).collect();
        assert_eq!(list.items, expected, "seed {seed}");
        for (s, (_, o)) in list.scores.iter().zip(&oracle) {
            assert!((s - o).abs() < 1e-14);
        }
        let scores = item_scores(&m, &a).unwrap();
        assert!(scores.first.iter().chain(&scores.second).all(|&f| f > 0.0 && f < 1.0));
    }
}

#[test]
fn empty_subgraph_is_skipped() {
    let m: Model<f64> = Model::zeros(&config(), N, 2, ring_support()).unwrap();
    let empty = UserSubgraph::empty(3, N, 2);
    assert_eq!(recommend(&m, &empty, &[], 3, 1.0).unwrap(), None);
}

#[test]
fn extra_exclusions_are_respected() {
    let m: Model<f64> = Model::zeros(&config(), N, 2, ring_support()).unwrap();
    let list = recommend(&m, &user(), &[0, 2], N, 1.0).unwrap().unwrap();
    assert_eq!(list.items, vec![3, 4, 6, 7]);
}
