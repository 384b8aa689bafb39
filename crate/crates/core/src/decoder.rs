//! Generative network: latent vector → Bernoulli parameters over every
//! (proximity order, item) cell.
//!
//! Logit for cell `(k, v)` is `γ_kv + g_k(z)·s_v(z)`. Item embeddings `s_v`
//! come from a per-dimension stack whose first layer is dense (`|V| × P`) and
//! whose later layers are `|V| × |V|` matrices supported on each item's
//! self + K-NN neighborhood. Proximity embeddings `g_k` come from a small
//! dense stack of width `K_ord`. Hidden layers use tanh, final layers are
//! linear. Biases are shared across embedding dimensions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserSubgraph;
use crate::params::{ParamSet, TensorLayout, TensorView};
use crate::scalar::{log_sigmoid, sigmoid, Scalar};
use crate::tensor::{dot, MaskedMatrix, Matrix, SupportPattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderShape {
    pub n_items: usize,
    /// Total proximity order `K_ord`.
    pub order: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub item_layers: usize,
    pub prox_layers: usize,
}

impl DecoderShape {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 || self.order == 0 || self.latent_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!("decoder dimensions must be positive: {self:?}")));
        }
        if self.item_layers == 0 || self.prox_layers == 0 {
            return Err(Error::Config("item_layers and prox_layers must be >= 1".into()));
        }
        Ok(())
    }
}

#[inline]
fn activate<T: Scalar>(x: T, last: bool) -> T {
    if last {
        x
    } else {
        x.tanh()
    }
}

/// Derivative of the activation expressed through its output.
#[inline]
fn activation_grad<T: Scalar>(out: T, last: bool) -> T {
    if last {
        T::one()
    } else {
        T::one() - out * out
    }
}

fn xavier<T: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> T {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    T::of(rng.random_range(-a..a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemNet<T> {
    /// Layer 1 weights, one `|V| × P` matrix per embedding dimension.
    pub first: Vec<Matrix<T>>,
    pub first_bias: Vec<T>,
    /// `masked[m][d]` is layer `m + 2` for dimension `d`.
    pub masked: Vec<Vec<MaskedMatrix<T>>>,
    pub masked_bias: Vec<Vec<T>>,
    /// Self plus K-NN support shared by every masked layer.
    pub support: Arc<SupportPattern>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityNet<T> {
    /// Layer 1 weights, one `K_ord × P` matrix per embedding dimension.
    pub first: Vec<Matrix<T>>,
    pub first_bias: Vec<T>,
    /// `hidden[r][d]` is layer `r + 2` for dimension `d`.
    pub hidden: Vec<Vec<Matrix<T>>>,
    pub hidden_bias: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams<T> {
    pub shape: DecoderShape,
    /// Baseline logits `γ`, `K_ord × |V|`.
    pub gamma: Matrix<T>,
    pub item: ItemNet<T>,
    pub prox: ProximityNet<T>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct DecoderForward<T> {
    /// `item[d][m]`: output of item layer `m + 1` for dimension `d`.
    pub item: Vec<Vec<Vec<T>>>,
    /// `prox[d][r]`: output of proximity layer `r + 1` for dimension `d`.
    pub prox: Vec<Vec<Vec<T>>>,
    /// `γ + ψ`, `K_ord × |V|`.
    pub logits: Matrix<T>,
}

impl<T: Scalar> DecoderForward<T> {
    /// `s_v(z)[d]`
    pub fn item_embedding(&self, v: usize, d: usize) -> T {
        self.item[d].last().expect("at least one layer")[v]
    }

    /// `g_k(z)[d]`
    pub fn proximity_embedding(&self, k: usize, d: usize) -> T {
        self.prox[d].last().expect("at least one layer")[k]
    }
}

impl<T: Scalar> DecoderParams<T> {
    pub fn zeros(shape: DecoderShape, support: Arc<SupportPattern>) -> Result<Self> {
        shape.validate()?;
        if support.n_rows() != shape.n_items || support.n_cols() != shape.n_items {
            return Err(Error::shape(
                "item mask",
                &[shape.n_items, shape.n_items],
                &[support.n_rows(), support.n_cols()],
            ));
        }
        let DecoderShape {
            n_items,
            order,
            latent_dim,
            embed_dim,
            item_layers,
            prox_layers,
        } = shape;
        Ok(Self {
            shape,
            gamma: Matrix::zeros(order, n_items),
            item: ItemNet {
                first: vec![Matrix::zeros(n_items, latent_dim); embed_dim],
                first_bias: vec![T::zero(); n_items],
                masked: (1..item_layers)
                    .map(|_| vec![MaskedMatrix::zeros(Arc::clone(&support)); embed_dim])
                    .collect(),
                masked_bias: (1..item_layers).map(|_| vec![T::zero(); n_items]).collect(),
                support,
            },
            prox: ProximityNet {
                first: vec![Matrix::zeros(order, latent_dim); embed_dim],
                first_bias: vec![T::zero(); order],
                hidden: (1..prox_layers).map(|_| vec![Matrix::zeros(order, order); embed_dim]).collect(),
                hidden_bias: (1..prox_layers).map(|_| vec![T::zero(); order]).collect(),
            },
        })
    }

    /// Xavier-uniform weights, zero biases and zero baseline.
    pub fn init<R: Rng + ?Sized>(shape: DecoderShape, support: Arc<SupportPattern>, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape, support)?;
        let (n, pdim, order) = (shape.n_items, shape.latent_dim, shape.order);
        for w in &mut p.item.first {
            w.as_mut_slice().iter_mut().for_each(|x| *x = xavier(rng, pdim, n));
        }
        for layer in &mut p.item.masked {
            for w in layer {
                let fan = w.support().nnz().div_ceil(n.max(1));
                w.values_mut().iter_mut().for_each(|x| *x = xavier(rng, fan, fan));
            }
        }
        for w in &mut p.prox.first {
            w.as_mut_slice().iter_mut().for_each(|x| *x = xavier(rng, pdim, order));
        }
        for layer in &mut p.prox.hidden {
            for w in layer {
                w.as_mut_slice().iter_mut().for_each(|x| *x = xavier(rng, order, order));
            }
        }
        Ok(p)
    }

    pub fn support(&self) -> &Arc<SupportPattern> {
        &self.item.support
    }

    fn check_latent(&self, z: &[T]) -> Result<()> {
        if z.len() != self.shape.latent_dim {
            return Err(Error::shape("z", &[self.shape.latent_dim], &[z.len()]));
        }
        Ok(())
    }

    fn item_forward(&self, z: &[T], d: usize) -> Vec<Vec<T>> {
        let n_layers = self.shape.item_layers;
        let mut outs = Vec::with_capacity(n_layers);
        let mut h = self.item.first[d].matvec(z);
        for (x, &b) in h.iter_mut().zip(&self.item.first_bias) {
            *x = activate(*x + b, n_layers == 1);
        }
        outs.push(h);
        for (m, (layer, bias)) in self.item.masked.iter().zip(&self.item.masked_bias).enumerate() {
            let last = m + 2 == n_layers;
            let mut h = layer[d].matvec(outs.last().expect("nonempty"));
            for (x, &b) in h.iter_mut().zip(bias) {
                *x = activate(*x + b, last);
            }
            outs.push(h);
        }
        outs
    }

    fn prox_forward(&self, z: &[T], d: usize) -> Vec<Vec<T>> {
        let n_layers = self.shape.prox_layers;
        let mut outs = Vec::with_capacity(n_layers);
        let mut h = self.prox.first[d].matvec(z);
        for (x, &b) in h.iter_mut().zip(&self.prox.first_bias) {
            *x = activate(*x + b, n_layers == 1);
        }
        outs.push(h);
        for (r, (layer, bias)) in self.prox.hidden.iter().zip(&self.prox.hidden_bias).enumerate() {
            let last = r + 2 == n_layers;
            let mut h = layer[d].matvec(outs.last().expect("nonempty"));
            for (x, &b) in h.iter_mut().zip(bias) {
                *x = activate(*x + b, last);
            }
            outs.push(h);
        }
        outs
    }

    /// `S(z)`: `|V| × D`.
    pub fn item_embeddings(&self, z: &[T]) -> Result<Matrix<T>> {
        self.check_latent(z)?;
        let cols: Vec<Vec<T>> = (0..self.shape.embed_dim)
            .map(|d| self.item_forward(z, d).pop().expect("nonempty"))
            .collect();
        Ok(Matrix::from_fn(self.shape.n_items, self.shape.embed_dim, |v, d| cols[d][v]))
    }

    /// `G(z)`: `K_ord × D`.
    pub fn proximity_embeddings(&self, z: &[T]) -> Result<Matrix<T>> {
        self.check_latent(z)?;
        let cols: Vec<Vec<T>> = (0..self.shape.embed_dim)
            .map(|d| self.prox_forward(z, d).pop().expect("nonempty"))
            .collect();
        Ok(Matrix::from_fn(self.shape.order, self.shape.embed_dim, |k, d| cols[d][k]))
    }

    pub fn forward(&self, z: &[T]) -> Result<DecoderForward<T>> {
        self.check_latent(z)?;
        let item: Vec<Vec<Vec<T>>> = (0..self.shape.embed_dim).map(|d| self.item_forward(z, d)).collect();
        let prox: Vec<Vec<Vec<T>>> = (0..self.shape.embed_dim).map(|d| self.prox_forward(z, d)).collect();
        let mut logits = self.gamma.clone();
        for d in 0..self.shape.embed_dim {
            let s = item[d].last().expect("nonempty");
            let g = prox[d].last().expect("nonempty");
            for (k, &gk) in g.iter().enumerate() {
                for (x, &sv) in logits.row_mut(k).iter_mut().zip(s) {
                    *x += gk * sv;
                }
            }
        }
        if logits.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric { tensor: "psi".into() });
        }
        Ok(DecoderForward { item, prox, logits })
    }

    /// `F_kv = sigmoid(γ_kv + ψ_kv)`, every entry in (0, 1) for finite logits.
    pub fn bernoulli_params(&self, z: &[T]) -> Result<Matrix<T>> {
        let fwd = self.forward(z)?;
        let mut f = fwd.logits;
        f.as_mut_slice().iter_mut().for_each(|x| *x = sigmoid(*x));
        Ok(f)
    }

    /// Exact Bernoulli log-likelihood of a whole subgraph.
    pub fn log_likelihood_full(&self, z: &[T], a: &UserSubgraph) -> Result<T> {
        self.check_subgraph(a)?;
        let fwd = self.forward(z)?;
        Ok(full_log_likelihood(&fwd.logits, a))
    }

    pub fn check_subgraph(&self, a: &UserSubgraph) -> Result<()> {
        if a.order() != self.shape.order || a.n_items() != self.shape.n_items {
            return Err(Error::shape(
                "subgraph",
                &[self.shape.order, self.shape.n_items],
                &[a.order(), a.n_items()],
            ));
        }
        Ok(())
    }

    /// Back-propagates `∂L/∂logit` for the listed cells into `grads` and
    /// returns `∂L/∂z`.
    pub fn backward(
        &self,
        z: &[T],
        fwd: &DecoderForward<T>,
        cell_grads: &[(usize, usize, T)],
        grads: &mut DecoderParams<T>,
    ) -> Vec<T> {
        let DecoderShape {
            n_items,
            order,
            embed_dim,
            item_layers,
            prox_layers,
            ..
        } = self.shape;
        let mut dz = vec![T::zero(); z.len()];
        let mut ds = vec![vec![T::zero(); n_items]; embed_dim];
        let mut dg = vec![vec![T::zero(); order]; embed_dim];
        for &(k, v, g) in cell_grads {
            let cur = grads.gamma.get(k, v);
            grads.gamma.set(k, v, cur + g);
            for d in 0..embed_dim {
                dg[d][k] += g * fwd.item_embedding(v, d);
                ds[d][v] += g * fwd.proximity_embedding(k, d);
            }
        }

        for d in 0..embed_dim {
            let outs = &fwd.item[d];
            let mut delta = std::mem::take(&mut ds[d]);
            for l in (0..item_layers).rev() {
                let last = l + 1 == item_layers;
                for (x, &o) in delta.iter_mut().zip(&outs[l]) {
                    *x *= activation_grad(o, last);
                }
                if l == 0 {
                    add_into(&mut grads.item.first_bias, &delta);
                    grads.item.first[d].add_outer(&delta, z);
                    self.item.first[d].add_matvec_t(&delta, &mut dz);
                } else {
                    add_into(&mut grads.item.masked_bias[l - 1], &delta);
                    grads.item.masked[l - 1][d].add_outer(&delta, &outs[l - 1]);
                    let mut prev = vec![T::zero(); n_items];
                    self.item.masked[l - 1][d].add_matvec_t(&delta, &mut prev);
                    delta = prev;
                }
            }
        }

        for d in 0..embed_dim {
            let outs = &fwd.prox[d];
            let mut delta = std::mem::take(&mut dg[d]);
            for l in (0..prox_layers).rev() {
                let last = l + 1 == prox_layers;
                for (x, &o) in delta.iter_mut().zip(&outs[l]) {
                    *x *= activation_grad(o, last);
                }
                if l == 0 {
                    add_into(&mut grads.prox.first_bias, &delta);
                    grads.prox.first[d].add_outer(&delta, z);
                    self.prox.first[d].add_matvec_t(&delta, &mut dz);
                } else {
                    add_into(&mut grads.prox.hidden_bias[l - 1], &delta);
                    grads.prox.hidden[l - 1][d].add_outer(&delta, &outs[l - 1]);
                    let mut prev = vec![T::zero(); order];
                    self.prox.hidden[l - 1][d].add_matvec_t(&delta, &mut prev);
                    delta = prev;
                }
            }
        }
        dz
    }
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// `Σ_kv A_kv log F_kv + (1 − A_kv) log(1 − F_kv)` from logits.
pub fn full_log_likelihood<T: Scalar>(logits: &Matrix<T>, a: &UserSubgraph) -> T {
    let mut total = T::zero();
    for k in 0..logits.rows() {
        let ones = a.row(k);
        let mut next = 0;
        for (v, &x) in logits.row(k).iter().enumerate() {
            if next < ones.len() && ones[next] == v {
                next += 1;
                total += log_sigmoid(x);
            } else {
                total += log_sigmoid(-x);
            }
        }
    }
    total
}

/// Inner product `g_k(z)·s_v(z)` taken from a cached forward pass.
pub fn psi<T: Scalar>(fwd: &DecoderForward<T>, k: usize, v: usize) -> T {
    let d = fwd.item.len();
    let s: Vec<T> = (0..d).map(|i| fwd.item_embedding(v, i)).collect();
    let g: Vec<T> = (0..d).map(|i| fwd.proximity_embedding(k, i)).collect();
    dot(&g, &s)
}

impl<T: Scalar> ParamSet<T> for DecoderParams<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = vec![TensorView {
            name: "gamma".into(),
            layout: TensorLayout::Dense(self.gamma.shape().to_vec()),
            data: self.gamma.as_slice(),
        }];
        for (d, w) in self.item.first.iter().enumerate() {
            out.push(TensorView {
                name: format!("item.W.{}.1", d + 1),
                layout: TensorLayout::Dense(w.shape().to_vec()),
                data: w.as_slice(),
            });
        }
        out.push(TensorView {
            name: "item.b.1".into(),
            layout: TensorLayout::Dense(vec![self.item.first_bias.len()]),
            data: &self.item.first_bias,
        });
        for (m, (layer, bias)) in self.item.masked.iter().zip(&self.item.masked_bias).enumerate() {
            for (d, w) in layer.iter().enumerate() {
                out.push(TensorView {
                    name: format!("item.W.{}.{}", d + 1, m + 2),
                    layout: TensorLayout::Masked(Arc::clone(w.support())),
                    data: w.values(),
                });
            }
            out.push(TensorView {
                name: format!("item.b.{}", m + 2),
                layout: TensorLayout::Dense(vec![bias.len()]),
                data: bias,
            });
        }
        for (d, w) in self.prox.first.iter().enumerate() {
            out.push(TensorView {
                name: format!("prox.W.{}.1", d + 1),
                layout: TensorLayout::Dense(w.shape().to_vec()),
                data: w.as_slice(),
            });
        }
        out.push(TensorView {
            name: "prox.b.1".into(),
            layout: TensorLayout::Dense(vec![self.prox.first_bias.len()]),
            data: &self.prox.first_bias,
        });
        for (r, (layer, bias)) in self.prox.hidden.iter().zip(&self.prox.hidden_bias).enumerate() {
            for (d, w) in layer.iter().enumerate() {
                out.push(TensorView {
                    name: format!("prox.W.{}.{}", d + 1, r + 2),
                    layout: TensorLayout::Dense(w.shape().to_vec()),
                    data: w.as_slice(),
                });
            }
            out.push(TensorView {
                name: format!("prox.b.{}", r + 2),
                layout: TensorLayout::Dense(vec![bias.len()]),
                data: bias,
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Self { gamma, item, prox, .. } = self;
        let mut out: Vec<&mut [T]> = vec![gamma.as_mut_slice()];
        out.extend(item.first.iter_mut().map(Matrix::as_mut_slice));
        out.push(&mut item.first_bias);
        for (layer, bias) in item.masked.iter_mut().zip(item.masked_bias.iter_mut()) {
            out.extend(layer.iter_mut().map(MaskedMatrix::values_mut));
            out.push(bias);
        }
        out.extend(prox.first.iter_mut().map(Matrix::as_mut_slice));
        out.push(&mut prox.first_bias);
        for (layer, bias) in prox.hidden.iter_mut().zip(prox.hidden_bias.iter_mut()) {
            out.extend(layer.iter_mut().map(Matrix::as_mut_slice));
            out.push(bias);
        }
        out
    }
}
