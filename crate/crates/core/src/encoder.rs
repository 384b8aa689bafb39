//! Inference network: flattened subgraph → diagonal Gaussian posterior.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::UserSubgraph;
use crate::params::{ParamSet, TensorLayout, TensorView};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderShape {
    /// `K_ord · |V|`
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub dropout: f64,
    /// Log-variance is clamped to `[-logvar_clamp, logvar_clamp]`.
    pub logvar_clamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out × in`
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![T::zero(); output],
        }
    }

    fn forward(&self, x: &[T]) -> Vec<T> {
        let mut y = self.weight.matvec(x);
        for (o, &b) in y.iter_mut().zip(&self.bias) {
            *o += b;
        }
        y
    }

    fn forward_sparse(&self, x: &SparseInput<T>) -> Vec<T> {
        (0..self.weight.rows())
            .map(|r| {
                let row = self.weight.row(r);
                x.indices
                    .iter()
                    .zip(&x.values)
                    .fold(self.bias[r], |acc, (&i, &xi)| acc + row[i] * xi)
            })
            .collect()
    }
}

/// Non-zero cells of the (possibly dropped-out) flattened subgraph.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInput<T> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Scalar> SparseInput<T> {
    pub fn from_subgraph(a: &UserSubgraph) -> Self {
        let indices = a.flat_ones();
        let values = vec![T::one(); indices.len()];
        Self { indices, values }
    }

    /// Inverted dropout: each cell survives with probability `1 − rate` and
    /// survivors are scaled by `1 / (1 − rate)`. Zero cells are unaffected.
    pub fn with_dropout<R: Rng + ?Sized>(a: &UserSubgraph, rate: f64, rng: &mut R) -> Self {
        if rate <= 0.0 {
            return Self::from_subgraph(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in a.flat_ones() {
            if rng.random::<f64>() >= rate {
                indices.push(i);
                values.push(keep);
            }
        }
        Self { indices, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub shape: EncoderShape,
    pub hidden: Vec<DenseLayer<T>>,
    pub mean: DenseLayer<T>,
    pub logvar: DenseLayer<T>,
}

/// `N(mu, diag(exp(logvar)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
}

impl<T: Scalar> GaussianPosterior<T> {
    pub fn from_std(mu: Vec<T>, sigma: &[T]) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::shape("sigma", &[mu.len()], &[sigma.len()]));
        }
        if sigma.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::Numeric { tensor: "sigma".into() });
        }
        let two = T::of(2.0);
        let logvar = sigma.iter().map(|s| two * s.ln()).collect();
        Ok(Self { mu, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<T> {
        let half = T::of(0.5);
        self.logvar.iter().map(|&lv| (half * lv).exp()).collect()
    }
}

/// `z = mu + eps ⊙ sigma`
pub fn reparameterize<T: Scalar>(post: &GaussianPosterior<T>, eps: &[T]) -> Result<Vec<T>> {
    if eps.len() != post.dim() {
        return Err(Error::shape("eps", &[post.dim()], &[eps.len()]));
    }
    Ok(post
        .mu
        .iter()
        .zip(post.sigma())
        .zip(eps)
        .map(|((&m, s), &e)| m + e * s)
        .collect())
}

/// Closed-form `KL(N(mu, diag σ²) ‖ N(0, I))`.
pub fn kl_to_standard_normal<T: Scalar>(post: &GaussianPosterior<T>) -> T {
    let half = T::of(0.5);
    post.mu
        .iter()
        .zip(&post.logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
        .sum()
}

/// Cached activations of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderForward<T> {
    pub input: SparseInput<T>,
    /// Post-tanh output of each hidden layer.
    pub hidden: Vec<Vec<T>>,
    /// Log-variance before clamping.
    pub raw_logvar: Vec<T>,
    pub posterior: GaussianPosterior<T>,
}

fn xavier_fill<T: Scalar, R: Rng + ?Sized>(m: &mut Matrix<T>, rng: &mut R) {
    let a = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
    m.as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = T::of(rng.random_range(-a..a)));
}

impl<T: Scalar> EncoderParams<T> {
    pub fn zeros(shape: EncoderShape) -> Result<Self> {
        if shape.input_dim == 0 || shape.latent_dim == 0 || shape.hidden.contains(&0) {
            return Err(Error::Config(format!("encoder dimensions must be positive: {shape:?}")));
        }
        if !(0.0..1.0).contains(&shape.dropout) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {}", shape.dropout)));
        }
        let mut widths = vec![shape.input_dim];
        widths.extend(&shape.hidden);
        let hidden = widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect();
        let last = *widths.last().expect("nonempty");
        Ok(Self {
            hidden,
            mean: DenseLayer::zeros(last, shape.latent_dim),
            logvar: DenseLayer::zeros(last, shape.latent_dim),
            shape,
        })
    }

    pub fn init<R: Rng + ?Sized>(shape: EncoderShape, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        for layer in &mut p.hidden {
            xavier_fill(&mut layer.weight, rng);
        }
        xavier_fill(&mut p.mean.weight, rng);
        xavier_fill(&mut p.logvar.weight, rng);
        Ok(p)
    }

    fn check(&self, a: &UserSubgraph) -> Result<()> {
        let n = a.order() * a.n_items();
        if n != self.shape.input_dim {
            return Err(Error::shape("encoder input", &[self.shape.input_dim], &[n]));
        }
        Ok(())
    }

    /// Posterior for a subgraph. With `training`, input dropout draws from
    /// `rng`; otherwise the pass is deterministic and `rng` is untouched.
    pub fn encode<R: Rng + ?Sized>(&self, a: &UserSubgraph, training: bool, rng: &mut R) -> Result<GaussianPosterior<T>> {
        self.check(a)?;
        let input = if training {
            SparseInput::with_dropout(a, self.shape.dropout, rng)
        } else {
            SparseInput::from_subgraph(a)
        };
        Ok(self.forward(input).posterior)
    }

    /// Deterministic posterior mean, the inference-time embedding.
    pub fn mean_embedding(&self, a: &UserSubgraph) -> Result<Vec<T>> {
        self.check(a)?;
        Ok(self.forward(SparseInput::from_subgraph(a)).posterior.mu)
    }

    pub fn forward(&self, input: SparseInput<T>) -> EncoderForward<T> {
        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(self.hidden.len());
        for (i, layer) in self.hidden.iter().enumerate() {
            let mut h = if i == 0 {
                layer.forward_sparse(&input)
            } else {
                layer.forward(&hidden[i - 1])
            };
            h.iter_mut().for_each(|x| *x = x.tanh());
            hidden.push(h);
        }
        let (mu, raw_logvar) = match hidden.last() {
            Some(h) => (self.mean.forward(h), self.logvar.forward(h)),
            None => (self.mean.forward_sparse(&input), self.logvar.forward_sparse(&input)),
        };
        let c = T::of(self.shape.logvar_clamp);
        let logvar = raw_logvar.iter().map(|&x| x.max(-c).min(c)).collect();
        EncoderForward {
            input,
            hidden,
            raw_logvar,
            posterior: GaussianPosterior { mu, logvar },
        }
    }

    /// Accumulates parameter gradients given `∂L/∂mu` and `∂L/∂logvar`
    /// (with respect to the clamped log-variance).
    pub fn backward(&self, fwd: &EncoderForward<T>, d_mu: &[T], d_logvar: &[T], grads: &mut EncoderParams<T>) {
        let c = T::of(self.shape.logvar_clamp);
        let d_lv: Vec<T> = d_logvar
            .iter()
            .zip(&fwd.raw_logvar)
            .map(|(&g, &raw)| if raw > c || raw < -c { T::zero() } else { g })
            .collect();
        let n_hidden = self.hidden.len();
        match fwd.hidden.last() {
            Some(h) => {
                grads.mean.weight.add_outer(d_mu, h);
                grads.logvar.weight.add_outer(&d_lv, h);
            }
            None => {
                add_outer_sparse(&mut grads.mean.weight, d_mu, &fwd.input);
                add_outer_sparse(&mut grads.logvar.weight, &d_lv, &fwd.input);
            }
        }
        add_into(&mut grads.mean.bias, d_mu);
        add_into(&mut grads.logvar.bias, &d_lv);
        if n_hidden == 0 {
            return;
        }
        let mut delta = vec![T::zero(); self.mean.weight.cols()];
        self.mean.weight.add_matvec_t(d_mu, &mut delta);
        self.logvar.weight.add_matvec_t(&d_lv, &mut delta);
        for l in (0..n_hidden).rev() {
            for (x, &h) in delta.iter_mut().zip(&fwd.hidden[l]) {
                *x *= T::one() - h * h;
            }
            add_into(&mut grads.hidden[l].bias, &delta);
            if l == 0 {
                add_outer_sparse(&mut grads.hidden[0].weight, &delta, &fwd.input);
            } else {
                grads.hidden[l].weight.add_outer(&delta, &fwd.hidden[l - 1]);
                let mut prev = vec![T::zero(); self.hidden[l].weight.cols()];
                self.hidden[l].weight.add_matvec_t(&delta, &mut prev);
                delta = prev;
            }
        }
    }
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn add_outer_sparse<T: Scalar>(w: &mut Matrix<T>, y: &[T], x: &SparseInput<T>) {
    for (r, &yr) in y.iter().enumerate() {
        if yr == T::zero() {
            continue;
        }
        let row = w.row_mut(r);
        for (&i, &xi) in x.indices.iter().zip(&x.values) {
            row[i] += yr * xi;
        }
    }
}

impl<T: Scalar> ParamSet<T> for EncoderParams<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        fn push<'a, T: Scalar>(name: &str, layer: &'a DenseLayer<T>, out: &mut Vec<TensorView<'a, T>>) {
            out.push(TensorView {
                name: format!("{name}.W"),
                layout: TensorLayout::Dense(layer.weight.shape().to_vec()),
                data: layer.weight.as_slice(),
            });
            out.push(TensorView {
                name: format!("{name}.b"),
                layout: TensorLayout::Dense(vec![layer.bias.len()]),
                data: &layer.bias,
            });
        }
        let mut out = Vec::new();
        for (i, layer) in self.hidden.iter().enumerate() {
            push(&format!("hidden.{}", i + 1), layer, &mut out);
        }
        push("mu", &self.mean, &mut out);
        push("logvar", &self.logvar, &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let Self {
            hidden, mean, logvar, ..
        } = self;
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in hidden.iter_mut().chain([mean, logvar]) {
            let DenseLayer { weight, bias } = layer;
            out.push(weight.as_mut_slice());
            out.push(bias);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn shape(hidden: Vec<usize>) -> EncoderShape {
        EncoderShape {
            input_dim: 8,
            hidden,
            latent_dim: 3,
            dropout: 0.1,
            logvar_clamp: 10.0,
        }
    }

    fn subgraph() -> UserSubgraph {
        UserSubgraph::from_rows(0, 4, vec![vec![0, 2], vec![1, 2, 3]]).unwrap()
    }

    #[test]
    fn zero_network_is_standard_normal() {
        let p: EncoderParams<f64> = EncoderParams::zeros(shape(vec![5])).unwrap();
        let post = p.encode(&subgraph(), false, &mut rand::rng()).unwrap();
        assert_eq!(post.mu, vec![0.0; 3]);
        assert_eq!(post.sigma(), vec![1.0; 3]);
        assert_eq!(kl_to_standard_normal(&post), 0.0);
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: EncoderParams<f64> = EncoderParams::init(shape(vec![5]), &mut rng).unwrap();
        let a = p.encode(&subgraph(), false, &mut rng).unwrap();
        let b = p.encode(&subgraph(), false, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heads_match_reference_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: EncoderParams<f64> = EncoderParams::init(shape(vec![5, 4]), &mut rng).unwrap();
        let post = p.encode(&subgraph(), false, &mut rng).unwrap();
        let dense: Vec<f64> = subgraph().to_dense().concat().iter().map(|&x| x as f64).collect();
        let mut h = dense;
        for layer in &p.hidden {
            h = (0..layer.weight.rows())
                .map(|r| {
                    let s: f64 = (0..h.len()).map(|c| layer.weight.get(r, c) * h[c]).sum();
                    (s + layer.bias[r]).tanh()
                })
                .collect();
        }
        for j in 0..3 {
            let m: f64 = (0..h.len()).map(|c| p.mean.weight.get(j, c) * h[c]).sum::<f64>() + p.mean.bias[j];
            let lv: f64 = (0..h.len()).map(|c| p.logvar.weight.get(j, c) * h[c]).sum::<f64>() + p.logvar.bias[j];
            assert!((post.mu[j] - m).abs() < 1e-14);
            assert!((post.logvar[j] - lv).abs() < 1e-14);
        }
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let big = UserSubgraph::from_rows(0, 1000, vec![(0..1000).collect()]).unwrap();
        let x: SparseInput<f64> = SparseInput::with_dropout(&big, 0.1, &mut rng);
        let kept = x.indices.len();
        assert!((850..=950).contains(&kept), "kept {kept}");
        assert!(x.values.iter().all(|&v| (v - 1.0 / 0.9).abs() < 1e-15));
    }

    #[test]
    fn reparameterization_examples() {
        let post = GaussianPosterior::<f64>::from_std(vec![1.0, 2.0], &[2.0, 1.0]).unwrap();
        let z = reparameterize(&post, &[0.5, -1.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15 && (z[1] - 1.0).abs() < 1e-15);
        assert_eq!(reparameterize(&post, &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        let std = GaussianPosterior::from_std(vec![0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(reparameterize(&std, &[0.3, -0.8]).unwrap(), vec![0.3, -0.8]);
        assert!(reparameterize(&std, &[1.0]).is_err());
    }

    #[test]
    fn kl_closed_form_values() {
        let one = GaussianPosterior::<f64>::from_std(vec![1.0], &[1.0]).unwrap();
        assert!((kl_to_standard_normal(&one) - 0.5).abs() < 1e-15);
        let two = GaussianPosterior::<f64>::from_std(vec![1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((kl_to_standard_normal(&two) - 1.0).abs() < 1e-15);
        assert!(GaussianPosterior::from_std(vec![0.0], &[0.0]).is_err());
        assert!(GaussianPosterior::from_std(vec![0.0], &[-1.0]).is_err());
    }

    #[test]
    fn reparameterized_samples_have_target_moments() {
        let post = GaussianPosterior::from_std(vec![0.5, -1.0], &[2.0, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        let mut cross = 0.0;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let z = reparameterize(&post, &eps).unwrap();
            samples.push(z);
        }
        for z in &samples {
            for i in 0..2 {
                sum[i] += z[i];
            }
        }
        let mean = [sum[0] / n as f64, sum[1] / n as f64];
        for z in &samples {
            for i in 0..2 {
                sq[i] += (z[i] - mean[i]).powi(2);
            }
            cross += (z[0] - mean[0]) * (z[1] - mean[1]);
        }
        let sigma = post.sigma();
        for i in 0..2 {
            let var = sq[i] / (n - 1) as f64;
            let se_mean = sigma[i] / (n as f64).sqrt();
            assert!((mean[i] - post.mu[i]).abs() < 3.0 * se_mean, "mean {i}");
            // var of the sample variance of a normal: 2σ⁴/(n−1)
            let se_var = (2.0 * sigma[i].powi(4) / (n - 1) as f64).sqrt();
            assert!((var - sigma[i].powi(2)).abs() < 3.0 * se_var, "var {i}");
        }
        let cov = cross / (n - 1) as f64;
        let se_cov = sigma[0] * sigma[1] / (n as f64).sqrt();
        assert!(cov.abs() < 3.0 * se_cov);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let p: EncoderParams<f64> = EncoderParams::zeros(shape(vec![5])).unwrap();
        let a = UserSubgraph::empty(0, 3, 2);
        assert!(matches!(p.encode(&a, false, &mut rand::rng()), Err(Error::Shape { .. })));
    }
}
