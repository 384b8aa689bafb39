//! Mini-batch training with Adam, early stopping on validation NDCG and
//! checkpoint bookkeeping.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, RngState};
use crate::encoder::SparseInput;
use crate::error::{Error, Result};
use crate::evaluate::validation_ndcg;
use crate::graph::GraphArtifacts;
use crate::ingest::{InteractionDataset, SplitPart};
use crate::model::{Model, ModelConfig};
use crate::objective::{accumulate_loss_and_gradients, draw_negatives, LossBreakdown, SampleSizePolicy};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// KL weight.
    pub beta: f64,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    pub eval_every: usize,
    /// Cutoff of the validation NDCG used for model selection.
    pub eval_k: usize,
    pub seed: u64,
    pub negatives: SampleSizePolicy,
    /// Reparameterization draws averaged per user and step.
    pub eps_samples: usize,
    /// Global L2 gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Worker threads for per-user gradients; 0 uses every core. Results do
    /// not depend on this value.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: 512,
            learning_rate: 1e-3,
            max_epochs: 1000,
            beta: 0.2,
            early_stop_patience: 20,
            eval_every: 1,
            eval_k: 20,
            seed: 0,
            negatives: SampleSizePolicy::default(),
            eps_samples: 1,
            grad_clip: Some(10.0),
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("early_stop_patience", self.early_stop_patience),
            ("eval_every", self.eval_every),
            ("eval_k", self.eval_k),
            ("eps_samples", self.eps_samples),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if let SampleSizePolicy::Cap(0) = self.negatives {
            return Err(Error::Config("negative sample cap must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over the users seen this epoch.
    pub train_loss: f64,
    pub positive: f64,
    pub negative: f64,
    pub kl: f64,
    pub validation_ndcg: Option<f64>,
    pub improved: bool,
    pub seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,mean_positive_ll,mean_negative_ll,mean_kl,validation_ndcg,seconds";

    pub fn csv_row(&self) -> String {
        let ndcg = self.validation_ndcg.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.positive, self.negative, self.kl, ndcg, self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
}

/// Loss and gradient of one user at one step. The per-user generator is
/// seeded from `seed`, so the result does not depend on scheduling.
pub fn user_gradient<T: Scalar>(
    model: &Model<T>,
    graph: &GraphArtifacts,
    cfg: &TrainConfig,
    user: usize,
    seed: u64,
) -> Result<(LossBreakdown<T>, Model<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = &graph.subgraphs[user];
    let input = SparseInput::with_dropout(a, cfg.model.dropout, &mut rng);
    let plan = draw_negatives(&graph.strata.users[user], &cfg.negatives, &mut rng);
    let beta = T::of(cfg.beta);
    let mut grads = model.zeros_like();
    let mut sum = LossBreakdown {
        positive: T::zero(),
        negative: T::zero(),
        kl: T::zero(),
        beta,
        total: T::zero(),
    };
    for _ in 0..cfg.eps_samples {
        let eps: Vec<T> = (0..model.latent_dim()).map(|_| T::of(rng.sample(StandardNormal))).collect();
        let l = accumulate_loss_and_gradients(model, a, input.clone(), &eps, &plan, beta, &mut grads)?;
        sum.positive += l.positive;
        sum.negative += l.negative;
        sum.kl += l.kl;
        sum.total += l.total;
    }
    if cfg.eps_samples > 1 {
        let s = T::one() / T::of(cfg.eps_samples as f64);
        grads.scale(s);
        sum.positive *= s;
        sum.negative *= s;
        sum.kl *= s;
        sum.total *= s;
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric { tensor: name });
    }
    Ok((sum, grads))
}

/// Sum of per-user gradients over a batch, added in batch order whatever the
/// thread count, so serial and parallel runs agree bit for bit.
pub fn batch_gradient<T: Scalar>(
    model: &Model<T>,
    graph: &GraphArtifacts,
    cfg: &TrainConfig,
    users: &[usize],
    seeds: &[u64],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Vec<LossBreakdown<T>>, Model<T>)> {
    let mut acc = model.zeros_like();
    let mut losses = Vec::with_capacity(users.len());
    let chunk = pool.map_or(1, |p| p.current_num_threads().max(1));
    for (us, ss) in users.chunks(chunk).zip(seeds.chunks(chunk)) {
        let results: Vec<Result<(LossBreakdown<T>, Model<T>)>> = match pool {
            Some(p) if us.len() > 1 => p.install(|| {
                us.par_iter()
                    .zip(ss)
                    .map(|(&u, &s)| user_gradient(model, graph, cfg, u, s))
                    .collect()
            }),
            _ => us.iter().zip(ss).map(|(&u, &s)| user_gradient(model, graph, cfg, u, s)).collect(),
        };
        for r in results {
            let (l, g) = r?;
            acc.add_assign(&g);
            losses.push(l);
        }
    }
    Ok((losses, acc))
}

pub struct Trainer<'a, T> {
    cfg: TrainConfig,
    graph: &'a GraphArtifacts,
    validation: Vec<Vec<usize>>,
    users: Vec<usize>,
    model: Model<T>,
    optimizer: Adam<T>,
    rng: ChaCha8Rng,
    epoch: usize,
    best: Option<Checkpoint<T>>,
    best_epoch: Option<usize>,
    best_ndcg: Option<f64>,
    pool: Option<rayon::ThreadPool>,
    loss_dump: Option<Box<dyn Write + Send + 'a>>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(dataset: &InteractionDataset, graph: &'a GraphArtifacts, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let support = std::sync::Arc::new(graph.knn.support()?);
        let model = Model::init(&cfg.model, graph.n_items(), graph.proximity_order(), support, &mut rng)?;
        let optimizer = Adam::new(cfg.adam(), &model);
        Self::assemble(dataset, graph, cfg, model, optimizer, rng)
    }

    /// Continues from `last`. `best` is the best checkpoint so far when it
    /// differs from `last`.
    pub fn resume(
        dataset: &InteractionDataset,
        graph: &'a GraphArtifacts,
        cfg: TrainConfig,
        last: Checkpoint<T>,
        best: Option<Checkpoint<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.model != last.config.model {
            return Err(Error::Config("model settings differ from the checkpoint being resumed".into()));
        }
        last.model.check_compatible(graph.n_items(), graph.proximity_order())?;
        let rng = last.rng.restore()?;
        let mut optimizer = last.optimizer.clone();
        optimizer.config = cfg.adam();
        let mut t = Self::assemble(dataset, graph, cfg, last.model.clone(), optimizer, rng)?;
        t.epoch = last.epoch;
        t.best_epoch = last.best_epoch;
        t.best_ndcg = last.best_validation_ndcg;
        t.best = match best {
            Some(b) => Some(b),
            None if last.best_epoch == Some(last.epoch) => Some(last),
            None => None,
        };
        Ok(t)
    }

    fn assemble(
        dataset: &InteractionDataset,
        graph: &'a GraphArtifacts,
        cfg: TrainConfig,
        model: Model<T>,
        optimizer: Adam<T>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if dataset.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        if graph.n_users() != dataset.n_users()
            || graph.n_items() != dataset.n_items()
            || graph.incidence.nnz() != dataset.train.len()
        {
            return Err(Error::Config("graph artifacts were not built from this dataset's training split".into()));
        }
        let users: Vec<usize> = graph.subgraphs.iter().filter(|a| !a.row(0).is_empty()).map(|a| a.user).collect();
        let pool = if cfg.threads == 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?,
            )
        };
        Ok(Self {
            validation: dataset.items_by_user(SplitPart::Validation),
            cfg,
            graph,
            users,
            model,
            optimizer,
            rng,
            epoch: 0,
            best: None,
            best_epoch: None,
            best_ndcg: None,
            pool,
            loss_dump: None,
        })
    }

    /// Per-user loss rows `epoch,user,positive,negative,kl,total`.
    pub fn set_loss_dump(&mut self, mut w: Box<dyn Write + Send + 'a>) -> Result<()> {
        writeln!(w, "epoch,user,positive,negative,kl,total").map_err(|e| Error::io(std::path::Path::new("loss dump"), e))?;
        self.loss_dump = Some(w);
        Ok(())
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn best_checkpoint(&self) -> Option<&Checkpoint<T>> {
        self.best.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.cfg.clone(),
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_validation_ndcg: self.best_ndcg,
            epochs_since_improvement: self.epochs_since_improvement(),
            rng: RngState::capture(&self.rng),
            model: self.model.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epoch - self.best_epoch.unwrap_or(0)
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        if self.best_ndcg.is_some() && self.epochs_since_improvement() >= self.cfg.early_stop_patience {
            Some(StopReason::EarlyStopped)
        } else if self.epoch >= self.cfg.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        }
    }

    fn step(&mut self, batch: &[usize]) -> Result<Vec<LossBreakdown<T>>> {
        let seeds: Vec<u64> = batch.iter().map(|_| self.rng.next_u64()).collect();
        let (losses, mut grads) = batch_gradient(&self.model, self.graph, &self.cfg, batch, &seeds, self.pool.as_ref())?;
        grads.scale(T::one() / T::of(batch.len() as f64));
        if let Some(c) = self.cfg.grad_clip {
            clip_global_norm(&mut grads, T::of(c));
        }
        self.optimizer.update(&mut self.model, &grads);
        if let Some(name) = self.model.first_non_finite() {
            return Err(Error::Numeric { tensor: name });
        }
        Ok(losses)
    }

    /// One pass over the shuffled users followed by validation. On a
    /// numeric error the best checkpoint so far is still available.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let mut order = self.users.clone();
        order.shuffle(&mut self.rng);
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(self.cfg.batch_size) {
            let losses = self.step(batch)?;
            for (&u, l) in batch.iter().zip(&losses) {
                sums[0] += l.total.as_f64();
                sums[1] += l.positive.as_f64();
                sums[2] += l.negative.as_f64();
                sums[3] += l.kl.as_f64();
                if let Some(w) = self.loss_dump.as_mut() {
                    writeln!(
                        w,
                        "{epoch},{u},{},{},{},{}",
                        l.positive.as_f64(),
                        l.negative.as_f64(),
                        l.kl.as_f64(),
                        l.total.as_f64()
                    )
                    .map_err(|e| Error::io(std::path::Path::new("loss dump"), e))?;
                }
            }
        }
        self.epoch = epoch;

        let mut validation = None;
        let mut improved = false;
        if epoch.is_multiple_of(self.cfg.eval_every) || epoch >= self.cfg.max_epochs {
            validation = match &self.pool {
                Some(p) => p.install(|| validation_ndcg(&self.model, self.graph, &self.validation, self.cfg.eval_k))?,
                None => validation_ndcg(&self.model, self.graph, &self.validation, self.cfg.eval_k)?,
            };
            improved = match (validation, self.best_ndcg) {
                (Some(v), Some(b)) => v > b,
                (Some(_), None) => true,
                // nothing to select on: keep the latest
                (None, _) => self.best_ndcg.is_none(),
            };
        }
        if improved {
            self.best_epoch = Some(epoch);
            self.best_ndcg = validation;
            self.best = Some(self.checkpoint());
        }
        let n = order.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            train_loss: sums[0] / n,
            positive: sums[1] / n,
            negative: sums[2] / n,
            kl: sums[3] / n,
            validation_ndcg: validation,
            improved,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val ndcg@{} {}",
            record.train_loss,
            self.cfg.eval_k,
            validation.map_or("-".into(), |v| format!("{v:.4}"))
        );
        Ok(record)
    }

    /// Runs epochs until a stop condition holds, calling `on_epoch` after
    /// each one.
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochRecord, &Self) -> Result<()>) -> Result<StopReason> {
        loop {
            if let Some(reason) = self.stop_reason() {
                return Ok(reason);
            }
            let record = self.run_epoch()?;
            on_epoch(&record, self)?;
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
    pub log: Vec<EpochRecord>,
    pub stop: StopReason,
}

pub fn train<T: Scalar>(dataset: &InteractionDataset, graph: &GraphArtifacts, cfg: TrainConfig) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(dataset, graph, cfg)?;
    let mut log = Vec::new();
    let stop = trainer.train(|r, _| {
        log.push(r.clone());
        Ok(())
    })?;
    let last = trainer.checkpoint();
    let best = trainer.best.take().unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, log, stop })
}
