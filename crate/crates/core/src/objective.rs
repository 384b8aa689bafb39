//! Stratified negative sampling, the sampled log-likelihood estimator and
//! the per-user loss with analytic gradients.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::DecoderParams;
use crate::encoder::{kl_to_standard_normal, reparameterize, SparseInput};
use crate::error::{Error, Result};
use crate::graph::{UserStrata, UserSubgraph};
use crate::model::Model;
use crate::params::ParamSet;
use crate::scalar::{log_sigmoid, sigmoid, Scalar};
use crate::tensor::Matrix;

/// Number of negatives drawn from each stratum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSizePolicy {
    /// `n = min(N, cap)` in every stratum.
    Cap(usize),
    /// Explicit `n` per stratum index; values above `N` are clamped.
    PerStratum(Vec<usize>),
    /// `n = N`: no sampling.
    Exhaustive,
}

impl Default for SampleSizePolicy {
    fn default() -> Self {
        SampleSizePolicy::Cap(50)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratumSample {
    pub order: usize,
    pub stratum: usize,
    /// `N`: zero-entries in the stratum.
    pub population: usize,
    /// The `n` chosen items, sorted.
    pub items: Vec<usize>,
}

impl StratumSample {
    /// `N / n`
    pub fn weight<T: Scalar>(&self) -> T {
        T::of(self.population as f64) / T::of(self.items.len() as f64)
    }
}

/// Negatives chosen for one user; strata with no draws are omitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledBatchPlan {
    pub user: usize,
    pub samples: Vec<StratumSample>,
}

/// Uniform draws without replacement inside each stratum.
pub fn draw_negatives<R: Rng + ?Sized>(strata: &UserStrata, policy: &SampleSizePolicy, rng: &mut R) -> SampledBatchPlan {
    let mut samples = Vec::new();
    for (k, order_strata) in strata.strata.iter().enumerate() {
        for (t, items) in order_strata.iter().enumerate() {
            let population = items.len();
            let requested = match policy {
                SampleSizePolicy::Cap(cap) => population.min(*cap),
                SampleSizePolicy::PerStratum(sizes) => sizes.get(t).copied().unwrap_or(0),
                SampleSizePolicy::Exhaustive => population,
            };
            let n = if requested > population {
                log::warn!(
                    "user {} order {} stratum {}: requested {requested} negatives from {population}; clamping",
                    strata.user,
                    k + 1,
                    t + 1
                );
                population
            } else {
                requested
            };
            if n == 0 {
                continue;
            }
            let mut chosen: Vec<usize> = if n == population {
                items.clone()
            } else {
                index::sample(rng, population, n).into_iter().map(|i| items[i]).collect()
            };
            chosen.sort_unstable();
            samples.push(StratumSample {
                order: k,
                stratum: t,
                population,
                items: chosen,
            });
        }
    }
    SampledBatchPlan {
        user: strata.user,
        samples,
    }
}

pub fn exhaustive_plan(strata: &UserStrata) -> SampledBatchPlan {
    let mut samples = Vec::new();
    for (k, order_strata) in strata.strata.iter().enumerate() {
        for (t, items) in order_strata.iter().enumerate() {
            if !items.is_empty() {
                samples.push(StratumSample {
                    order: k,
                    stratum: t,
                    population: items.len(),
                    items: items.clone(),
                });
            }
        }
    }
    SampledBatchPlan {
        user: strata.user,
        samples,
    }
}

/// `(ℓ_{u,1}, ℓ̂_{u,0})` from a logit matrix.
pub fn likelihood_terms<T: Scalar>(logits: &Matrix<T>, a: &UserSubgraph, plan: &SampledBatchPlan) -> (T, T) {
    let mut positive = T::zero();
    for k in 0..a.order() {
        for &v in a.row(k) {
            positive += log_sigmoid(logits.get(k, v));
        }
    }
    let mut negative = T::zero();
    for s in &plan.samples {
        let sum: T = s.items.iter().map(|&v| log_sigmoid(-logits.get(s.order, v))).sum();
        negative += s.weight::<T>() * sum;
    }
    (positive, negative)
}

/// `ℓ̂_u = ℓ_{u,1} + ℓ̂_{u,0}`, returned as its two parts.
pub fn estimated_log_likelihood<T: Scalar>(
    decoder: &DecoderParams<T>,
    z: &[T],
    a: &UserSubgraph,
    plan: &SampledBatchPlan,
) -> Result<(T, T)> {
    decoder.check_subgraph(a)?;
    let fwd = decoder.forward(z)?;
    Ok(likelihood_terms(&fwd.logits, a, plan))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    /// `ℓ_{u,1}`
    pub positive: T,
    /// `ℓ̂_{u,0}`
    pub negative: T,
    pub kl: T,
    pub beta: T,
    /// `−(ℓ_{u,1} + ℓ̂_{u,0}) + β·KL`
    pub total: T,
}

/// `L̂_u` and its gradients, accumulated into `grads`. `input` is the
/// (possibly dropped-out) encoder input for `a`; `eps` is the single
/// reparameterization draw.
pub fn accumulate_loss_and_gradients<T: Scalar>(
    model: &Model<T>,
    a: &UserSubgraph,
    input: SparseInput<T>,
    eps: &[T],
    plan: &SampledBatchPlan,
    beta: T,
    grads: &mut Model<T>,
) -> Result<LossBreakdown<T>> {
    model.decoder.check_subgraph(a)?;
    let enc = model.encoder.forward(input);
    let post = &enc.posterior;
    let z = reparameterize(post, eps)?;
    let dec = model.decoder.forward(&z)?;

    let (positive, negative) = likelihood_terms(&dec.logits, a, plan);
    let kl = kl_to_standard_normal(post);
    let total = -(positive + negative) + beta * kl;
    if !total.is_finite() {
        return Err(Error::Numeric { tensor: "loss".into() });
    }

    let mut cells = Vec::with_capacity(a.nnz() + plan.samples.iter().map(|s| s.items.len()).sum::<usize>());
    for k in 0..a.order() {
        for &v in a.row(k) {
            cells.push((k, v, -sigmoid(-dec.logits.get(k, v))));
        }
    }
    for s in &plan.samples {
        let w: T = s.weight();
        for &v in &s.items {
            cells.push((s.order, v, w * sigmoid(dec.logits.get(s.order, v))));
        }
    }
    let dz = model.decoder.backward(&z, &dec, &cells, &mut grads.decoder);

    let half = T::of(0.5);
    let sigma = post.sigma();
    let d_mu: Vec<T> = dz.iter().zip(&post.mu).map(|(&g, &m)| g + beta * m).collect();
    let d_logvar: Vec<T> = dz
        .iter()
        .zip(eps)
        .zip(&sigma)
        .zip(&post.logvar)
        .map(|(((&g, &e), &s), &lv)| half * g * e * s + beta * half * (lv.exp() - T::one()))
        .collect();
    model.encoder.backward(&enc, &d_mu, &d_logvar, &mut grads.encoder);

    Ok(LossBreakdown {
        positive,
        negative,
        kl,
        beta,
        total,
    })
}

pub fn loss_and_gradients<T: Scalar>(
    model: &Model<T>,
    a: &UserSubgraph,
    input: SparseInput<T>,
    eps: &[T],
    plan: &SampledBatchPlan,
    beta: T,
) -> Result<(LossBreakdown<T>, Model<T>)> {
    let mut grads = model.zeros_like();
    let loss = accumulate_loss_and_gradients(model, a, input, eps, plan, beta, &mut grads)?;
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric { tensor: name });
    }
    Ok((loss, grads))
}

/// Loss only, sharing the exact code path of the gradient routine's forward
/// half.
pub fn loss_value<T: Scalar>(
    model: &Model<T>,
    a: &UserSubgraph,
    input: SparseInput<T>,
    eps: &[T],
    plan: &SampledBatchPlan,
    beta: T,
) -> Result<LossBreakdown<T>> {
    model.decoder.check_subgraph(a)?;
    let enc = model.encoder.forward(input);
    let z = reparameterize(&enc.posterior, eps)?;
    let dec = model.decoder.forward(&z)?;
    let (positive, negative) = likelihood_terms(&dec.logits, a, plan);
    let kl = kl_to_standard_normal(&enc.posterior);
    Ok(LossBreakdown {
        positive,
        negative,
        kl,
        beta,
        total: -(positive + negative) + beta * kl,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::{build_strata, StrataBoundaries};
    use crate::model::ModelConfig;
    use crate::tensor::SupportPattern;

    fn strata_with(n: usize) -> UserStrata {
        UserStrata {
            user: 0,
            strata: vec![vec![(0..n).collect(), vec![]]],
        }
    }

    #[test]
    fn exhaustive_stratum_has_unit_weight() {
        let plan = draw_negatives(&strata_with(10), &SampleSizePolicy::Cap(10), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(plan.samples.len(), 1);
        assert_eq!(plan.samples[0].items, (0..10).collect::<Vec<_>>());
        assert_eq!(plan.samples[0].weight::<f64>(), 1.0);
    }

    #[test]
    fn empty_stratum_and_clamping() {
        let s = strata_with(3);
        let plan = draw_negatives(&s, &SampleSizePolicy::PerStratum(vec![5, 2]), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(plan.samples.len(), 1);
        assert_eq!(plan.samples[0].items.len(), 3);
        assert_eq!(plan.samples[0].weight::<f64>(), 1.0);
    }

    #[test]
    fn draws_are_deterministic_and_inside_stratum() {
        let s = UserStrata {
            user: 0,
            strata: vec![vec![vec![3, 7, 9, 11, 20], vec![1, 2]]],
        };
        let a = draw_negatives(&s, &SampleSizePolicy::Cap(2), &mut ChaCha8Rng::seed_from_u64(5));
        let b = draw_negatives(&s, &SampleSizePolicy::Cap(2), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(a.samples[0].items.iter().all(|v| s.strata[0][0].contains(v)));
        assert_eq!(a.samples[0].weight::<f64>(), 2.5);
    }

    #[test]
    fn sampling_is_uniform_within_stratum() {
        let s = strata_with(100);
        let mut counts = vec![0usize; 100];
        let trials = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..trials {
            let plan = draw_negatives(&s, &SampleSizePolicy::Cap(10), &mut rng);
            for &v in &plan.samples[0].items {
                counts[v] += 1;
            }
        }
        // Pearson statistic over 100 cells, 99 dof: mean 99, sd ~14
        let expected = trials as f64 * 10.0 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 99.0 + 5.0 * 14.0, "chi2 {chi2}");
        assert_eq!(counts.iter().sum::<usize>(), trials * 10);
    }

    fn tiny_model() -> Model<f64> {
        let support = Arc::new(SupportPattern::from_rows(4, &[vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 0]]).unwrap());
        let cfg = ModelConfig {
            latent_dim: 2,
            embed_dim: 2,
            encoder_hidden: vec![3],
            ..ModelConfig::default()
        };
        Model::zeros(&cfg, 4, 2, support).unwrap()
    }

    #[test]
    fn zero_decoder_gamma_gradient_is_half_pattern() {
        let model = tiny_model();
        let a = UserSubgraph::from_rows(0, 4, vec![vec![0, 2], vec![1]]).unwrap();
        let strata = build_strata(&a, &[1, 3, 1, 3], &StrataBoundaries::default()).unwrap();
        let plan = exhaustive_plan(&strata);
        let (loss, g) = loss_and_gradients(&model, &a, SparseInput::from_subgraph(&a), &[0.3, -0.4], &plan, 1.0).unwrap();
        let dense = a.to_dense();
        for k in 0..2 {
            for v in 0..4 {
                let expected = if dense[k][v] == 1 { -0.5 } else { 0.5 };
                assert_eq!(g.decoder.gamma.get(k, v), expected);
            }
        }
        assert!((loss.total + 8.0 * 0.5f64.ln()).abs() < 1e-12);
        // networks are zero, so the objective is constant in the encoder
        assert!(g.encoder.tensors().iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn exhaustive_plan_matches_full_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let support = Arc::new(SupportPattern::from_rows(4, &[vec![0, 1], vec![1, 2], vec![2, 3], vec![3, 0]]).unwrap());
        let cfg = ModelConfig {
            latent_dim: 2,
            embed_dim: 2,
            encoder_hidden: vec![3],
            ..ModelConfig::default()
        };
        let model: Model<f64> = Model::init(&cfg, 4, 2, support, &mut rng).unwrap();
        let a = UserSubgraph::from_rows(0, 4, vec![vec![1], vec![0, 1, 3]]).unwrap();
        let strata = build_strata(&a, &[3, 1, 5, 3], &StrataBoundaries::default()).unwrap();
        let z = [0.2, -0.9];
        let (pos, neg) = estimated_log_likelihood(&model.decoder, &z, &a, &exhaustive_plan(&strata)).unwrap();
        let full = model.decoder.log_likelihood_full(&z, &a).unwrap();
        assert!(((pos + neg) - full).abs() <= 1e-12 * full.abs());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let support = Arc::new(SupportPattern::from_rows(5, &[vec![0, 3], vec![1, 2], vec![2, 4], vec![3, 0], vec![4, 1]]).unwrap());
        let cfg = ModelConfig {
            latent_dim: 3,
            embed_dim: 2,
            encoder_hidden: vec![4],
            ..ModelConfig::default()
        };
        let mut model: Model<f64> = Model::init(&cfg, 5, 2, support, &mut rng).unwrap();
        // non-zero gamma so its gradient is not the trivial pattern
        for x in model.decoder.gamma.as_mut_slice() {
            *x = rng.random_range(-0.5..0.5);
        }
        let a = UserSubgraph::from_rows(0, 5, vec![vec![1, 3], vec![0, 1, 3, 4]]).unwrap();
        let strata = build_strata(&a, &[3, 1, 5, 1, 3], &StrataBoundaries::default()).unwrap();
        let plan = draw_negatives(&strata, &SampleSizePolicy::Cap(1), &mut rng);
        let eps = [0.4, -1.1, 0.7];
        for beta in [0.0, 1.0] {
            let input = SparseInput::from_subgraph(&a);
            let (_, grads) = loss_and_gradients(&model, &a, input.clone(), &eps, &plan, beta).unwrap();
            let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();
            let names: Vec<String> = grads.tensors().into_iter().map(|t| t.name).collect();
            let h = 1e-5;
            for (ti, name) in names.iter().enumerate() {
                for i in 0..analytic[ti].len() {
                    let orig = model.tensors_mut()[ti][i];
                    model.tensors_mut()[ti][i] = orig + h;
                    let up = loss_value(&model, &a, input.clone(), &eps, &plan, beta).unwrap().total;
                    model.tensors_mut()[ti][i] = orig - h;
                    let down = loss_value(&model, &a, input.clone(), &eps, &plan, beta).unwrap().total;
                    model.tensors_mut()[ti][i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let g = analytic[ti][i];
                    let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{name}[{i}] beta={beta}: analytic {g} numeric {numeric}");
                }
            }
        }
    }
}
