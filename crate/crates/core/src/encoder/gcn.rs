use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::layers::{glorot, standard, GraphInput};
use crate::scalar::Scalar;

/// Graph convolution `Z = Â (X W) + b` with the symmetric-normalized adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct GcnCache<T> {
    input: Array2<T>,
}

impl<T: Scalar> GcnLayer<T> {
    pub fn init(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Self {
        GcnLayer { weight: glorot(rng, (input, output), input, output), bias: Array1::zeros(output) }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        GcnLayer { weight: Array2::zeros((input, output)), bias: Array1::zeros(output) }
    }

    pub fn forward(&self, x: &Array2<T>, graph: &GraphInput<T>) -> (Array2<T>, GcnCache<T>) {
        let z = graph.norm_adjacency.dot(&x.dot(&self.weight)) + &self.bias;
        (z, GcnCache { input: x.clone() })
    }

    pub fn backward(&self, cache: &GcnCache<T>, graph: &GraphInput<T>, dz: &Array2<T>) -> (Array2<T>, GcnLayer<T>) {
        // Â is symmetric, so Âᵀ dz = Â dz.
        let d_xw = graph.norm_adjacency.dot(dz);
        let grads = GcnLayer { weight: standard(cache.input.t().dot(&d_xw)), bias: dz.sum_axis(Axis(0)) };
        (d_xw.dot(&self.weight.t()), grads)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}
