use super::{gemm, Init, NdArray, ParamId, ParamStore, Scalar};
use crate::rng::Rng;
use crate::{Error, Result};

/// `out[b, o] = Σ_i input[b, i] · weight[o, i] + bias[o]`.
pub fn linear<F: Scalar>(
    input: &NdArray<F>,
    weight: &NdArray<F>,
    bias: &NdArray<F>,
) -> Result<NdArray<F>> {
    let (batch, out_dim, in_dim) = check_shapes(input, weight)?;
    let [bias_len] = bias.dims("linear", "bias")?;
    if bias_len != out_dim {
        return Err(Error::dim(
            "linear",
            format!("bias axis 0 has {bias_len} entries but weight axis 0 has {out_dim}"),
        ));
    }
    let mut out = Vec::with_capacity(batch * out_dim);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    gemm(
        batch,
        in_dim,
        out_dim,
        input.data(),
        false,
        weight.data(),
        true,
        F::one(),
        &mut out,
    );
    NdArray::new([batch, out_dim], out)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<F> {
    pub input: NdArray<F>,
    pub weight: NdArray<F>,
    pub bias: NdArray<F>,
}

pub fn linear_backward<F: Scalar>(
    input: &NdArray<F>,
    weight: &NdArray<F>,
    grad_out: &NdArray<F>,
) -> Result<LinearGrads<F>> {
    let (batch, out_dim, in_dim) = check_shapes(input, weight)?;
    grad_out.expect_shape("linear_backward", &[batch, out_dim])?;
    let mut gx = vec![F::zero(); batch * in_dim];
    gemm(
        batch,
        out_dim,
        in_dim,
        grad_out.data(),
        false,
        weight.data(),
        false,
        F::zero(),
        &mut gx,
    );
    let mut gw = vec![F::zero(); out_dim * in_dim];
    gemm(
        out_dim,
        batch,
        in_dim,
        grad_out.data(),
        true,
        input.data(),
        false,
        F::zero(),
        &mut gw,
    );
    let mut gb = vec![F::zero(); out_dim];
    for row in grad_out.data().chunks_exact(out_dim) {
        for (acc, &g) in gb.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        input: NdArray::new([batch, in_dim], gx)?,
        weight: NdArray::new([out_dim, in_dim], gw)?,
        bias: NdArray::new([out_dim], gb)?,
    })
}

fn check_shapes<F: Scalar>(
    input: &NdArray<F>,
    weight: &NdArray<F>,
) -> Result<(usize, usize, usize)> {
    let [batch, in_dim] = input.dims("linear", "input")?;
    let [out_dim, w_in] = weight.dims("linear", "weight")?;
    if w_in != in_dim {
        return Err(Error::dim(
            "linear",
            format!("input axis 1 has {in_dim} features but weight axis 1 expects {w_in}"),
        ));
    }
    Ok((batch, out_dim, in_dim))
}

/// Fully connected layer bound to two entries of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Self::with_init(
            params,
            name,
            in_dim,
            out_dim,
            Init::KaimingUniform { fan_in: in_dim },
            rng,
        )
    }

    pub fn with_init<F: Scalar>(
        params: &mut ParamStore<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        weight_init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = weight_init.build(&[out_dim, in_dim], rng);
        let weight = params.add(format!("{name}.weight"), w)?;
        let bias = params.add(format!("{name}.bias"), NdArray::zeros([out_dim]))?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        input: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        linear(input, params.value(self.weight), params.value(self.bias))
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        input: &NdArray<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let g = linear_backward(input, params.value(self.weight), grad_out)?;
        params.accumulate(self.weight, &g.weight)?;
        params.accumulate(self.bias, &g.bias)?;
        Ok(g.input)
    }
}
