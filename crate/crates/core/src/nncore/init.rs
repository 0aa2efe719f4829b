use rand::Rng as _;

use super::{NdArray, Scalar};
use crate::rng::Rng;

/// Parameter initializers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Kaiming-uniform with negative slope √5, i.e. `U(-1/√fan_in, 1/√fan_in)`.
    KaimingUniform { fan_in: usize },
    Zeros,
    Ones,
}

impl Init {
    pub fn build<F: Scalar>(&self, shape: &[usize], rng: &mut Rng) -> NdArray<F> {
        match *self {
            Init::KaimingUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let len: usize = shape.iter().product();
                let data = (0..len)
                    .map(|_| F::of(rng.random_range(-bound..bound)))
                    .collect();
                NdArray::new(shape.to_vec(), data).expect("length matches shape")
            }
            Init::Zeros => NdArray::zeros(shape.to_vec()),
            Init::Ones => NdArray::full(shape.to_vec(), F::one()),
        }
    }
}
