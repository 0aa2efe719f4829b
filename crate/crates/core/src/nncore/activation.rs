use serde::{Deserialize, Serialize};

use super::{NdArray, Scalar};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// `x · σ(x)`.
    Silu,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl Activation {
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => x.max(F::zero()),
            Activation::Silu => x * sigmoid(x),
        }
    }

    pub fn derivative<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            }
        }
    }
}

pub fn activation<F: Scalar>(input: &NdArray<F>, kind: Activation) -> NdArray<F> {
    input.map(|v| kind.apply(v))
}

/// Gradient with respect to the pre-activation `input`.
pub fn activation_backward<F: Scalar>(
    input: &NdArray<F>,
    grad_out: &NdArray<F>,
    kind: Activation,
) -> Result<NdArray<F>> {
    grad_out.expect_shape("activation_backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| g * kind.derivative(x))
        .collect();
    NdArray::new(input.shape().to_vec(), data)
}
