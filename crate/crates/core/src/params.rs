//! Named-tensor views shared by the optimizer and checkpoint code.

use std::sync::Arc;

use crate::scalar::Scalar;
use crate::tensor::SupportPattern;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorLayout {
    Dense(Vec<usize>),
    Masked(Arc<SupportPattern>),
}

impl TensorLayout {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorLayout::Dense(s) => s.clone(),
            TensorLayout::Masked(p) => vec![p.n_rows(), p.n_cols()],
        }
    }
}

#[derive(Debug)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub layout: TensorLayout,
    pub data: &'a [T],
}

/// A collection of trainable tensors with a fixed visiting order.
pub trait ParamSet<T: Scalar> {
    fn tensors(&self) -> Vec<TensorView<'_, T>>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn fill(&mut self, value: T) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }

    fn squared_norm(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(T::zero(), |acc, &x| acc + x * x)
    }

    fn n_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Name of the first tensor holding a NaN or infinity.
    fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
            .map(|t| t.name)
    }
}
