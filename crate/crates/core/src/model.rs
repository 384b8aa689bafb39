use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderParams, DecoderShape};
use crate::encoder::{EncoderParams, EncoderShape};
use crate::error::{Error, Result};
use crate::params::{ParamSet, TensorView};
use crate::scalar::Scalar;
use crate::tensor::SupportPattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `P`
    pub latent_dim: usize,
    /// `D`
    pub embed_dim: usize,
    /// `M`
    pub item_layers: usize,
    /// `R`
    pub prox_layers: usize,
    pub encoder_hidden: Vec<usize>,
    pub dropout: f64,
    pub logvar_clamp: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 200,
            embed_dim: 3,
            item_layers: 2,
            prox_layers: 2,
            encoder_hidden: vec![600],
            dropout: 0.1,
            logvar_clamp: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn decoder_shape(&self, n_items: usize, order: usize) -> DecoderShape {
        DecoderShape {
            n_items,
            order,
            latent_dim: self.latent_dim,
            embed_dim: self.embed_dim,
            item_layers: self.item_layers,
            prox_layers: self.prox_layers,
        }
    }

    pub fn encoder_shape(&self, n_items: usize, order: usize) -> EncoderShape {
        EncoderShape {
            input_dim: n_items * order,
            hidden: self.encoder_hidden.clone(),
            latent_dim: self.latent_dim,
            dropout: self.dropout,
            logvar_clamp: self.logvar_clamp,
        }
    }
}

/// Encoder and decoder parameters; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        n_items: usize,
        order: usize,
        support: Arc<SupportPattern>,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = EncoderParams::init(cfg.encoder_shape(n_items, order), rng)?;
        let decoder = DecoderParams::init(cfg.decoder_shape(n_items, order), support, rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn zeros(cfg: &ModelConfig, n_items: usize, order: usize, support: Arc<SupportPattern>) -> Result<Self> {
        Ok(Self {
            encoder: EncoderParams::zeros(cfg.encoder_shape(n_items, order))?,
            decoder: DecoderParams::zeros(cfg.decoder_shape(n_items, order), support)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(T::zero());
        g
    }

    pub fn n_items(&self) -> usize {
        self.decoder.shape.n_items
    }

    pub fn order(&self) -> usize {
        self.decoder.shape.order
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.shape.latent_dim
    }

    pub fn check_compatible(&self, n_items: usize, order: usize) -> Result<()> {
        if self.n_items() != n_items || self.order() != order {
            return Err(Error::shape("gamma", &[order, n_items], &[self.order(), self.n_items()]));
        }
        Ok(())
    }
}

impl<T: Scalar> ParamSet<T> for Model<T> {
    fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        for mut t in self.encoder.tensors() {
            t.name = format!("encoder/{}", t.name);
            out.push(t);
        }
        for mut t in self.decoder.tensors() {
            t.name = format!("decoder/{}", t.name);
            out.push(t);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out
    }
}
