use super::{NdArray, Scalar};
use crate::{Error, Result};

pub const DEFAULT_MAX_PERIOD: f64 = 10_000.0;

/// Sinusoidal embedding of a non-negative integer: `dim/2` sines followed by
/// `dim/2` cosines at frequencies `max_period^(-i/(dim/2))`.
pub fn sinusoidal_embed<F: Scalar>(k: usize, dim: usize, max_period: f64) -> Result<NdArray<F>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "embedding dimension must be a positive even number, got {dim}"
        )));
    }
    if max_period <= 0.0 {
        return Err(Error::Config("max_period must be positive".into()));
    }
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        let angle = k as f64 * freq;
        out[i] = F::of(angle.sin());
        out[half + i] = F::of(angle.cos());
    }
    NdArray::new([dim], out)
}

/// One embedding row per entry of `steps`, shape `[B, dim]`.
pub fn sinusoidal_embed_batch<F: Scalar>(
    steps: &[usize],
    dim: usize,
    max_period: f64,
) -> Result<NdArray<F>> {
    let mut data = Vec::with_capacity(steps.len() * dim);
    for &k in steps {
        data.extend_from_slice(sinusoidal_embed::<F>(k, dim, max_period)?.data());
    }
    NdArray::new([steps.len(), dim], data)
}
