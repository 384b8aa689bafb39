use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction and no weight decay. Moment buffers follow the
/// tensor order of the parameter set they were created for.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: ParamSet<T>>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn update<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let lr = T::of(self.config.learning_rate);
        let eps = T::of(self.config.epsilon);
        let bc1 = T::one() - b1.powi(self.step as i32);
        let bc2 = T::one() - b2.powi(self.step as i32);
        let grads = grads.tensors();
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(&grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                let gi = g.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let step = lr * m_hat / (v_hat.sqrt() + eps);
                if step != T::zero() {
                    p[i] -= step;
                }
            }
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar, P: ParamSet<T>>(grads: &mut P, max_norm: T) -> T {
    let norm = grads.squared_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{TensorLayout, TensorView};

    #[derive(Clone)]
    struct Flat(Vec<f64>);

    impl ParamSet<f64> for Flat {
        fn tensors(&self) -> Vec<TensorView<'_, f64>> {
            vec![TensorView {
                name: "x".into(),
                layout: TensorLayout::Dense(vec![self.0.len()]),
                data: &self.0,
            }]
        }

        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Flat(vec![1.0, -2.0]);
        let g = Flat(vec![0.5, -3.0]);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.update(&mut p, &g);
        // bias-corrected first step is lr * sign(g) up to epsilon
        assert!((p.0[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.0[1] - (-2.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Flat(vec![3.0, -4.0]);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..2000 {
            let g = Flat(p.0.iter().map(|x| 2.0 * x).collect());
            adam.update(&mut p, &g);
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-3), "{:?}", p.0);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = Flat(vec![0.1, -0.0, 7.5]);
        let before = p.0.clone();
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..10 {
            adam.update(&mut p, &Flat(vec![1.0, -2.0, 3.0]));
        }
        for (a, b) in p.0.iter().zip(&before) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = Flat(vec![3.0, 4.0]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g.0[0] - 0.6).abs() < 1e-15 && (g.0[1] - 0.8).abs() < 1e-15);
        let mut small = Flat(vec![0.3, 0.4]);
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.0, vec![0.3, 0.4]);
    }
}
