use super::{NdArray, ParamId, ParamStore, Scalar};
use crate::{Error, Result};

/// What the backward pass of [`group_norm`] needs.
#[derive(Clone, Debug)]
pub struct GroupNormCache<F> {
    /// Standardized input, same layout as the input.
    pub normalized: NdArray<F>,
    /// `1/√(var + eps)` per (sample, group).
    pub inv_std: Vec<F>,
    pub groups: usize,
}

#[derive(Clone, Debug)]
pub struct GroupNormGrads<F> {
    pub input: NdArray<F>,
    pub gain: NdArray<F>,
    pub shift: NdArray<F>,
}

fn layout<F: Scalar>(input: &NdArray<F>, groups: usize) -> Result<(usize, usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::dim(
            "group_norm",
            format!("input must be [B, C, ...], got {shape:?}"),
        ));
    }
    let (batch, channels) = (shape[0], shape[1]);
    if groups == 0 || channels % groups != 0 {
        return Err(Error::Config(format!(
            "group_norm: {channels} channels are not divisible into {groups} groups"
        )));
    }
    let spatial: usize = shape[2..].iter().product();
    Ok((batch, channels, spatial))
}

/// Per-sample, per-group standardization followed by a per-channel affine map.
/// Variance is the biased (population) estimate.
pub fn group_norm<F: Scalar>(
    input: &NdArray<F>,
    groups: usize,
    gain: &NdArray<F>,
    shift: &NdArray<F>,
    eps: f64,
) -> Result<(NdArray<F>, GroupNormCache<F>)> {
    let (batch, channels, spatial) = layout(input, groups)?;
    if eps <= 0.0 {
        return Err(Error::Config("group_norm: eps must be positive".into()));
    }
    gain.expect_shape("group_norm", &[channels])?;
    shift.expect_shape("group_norm", &[channels])?;
    let per_group = channels / groups;
    let group_len = per_group * spatial;
    let count = F::of(group_len as f64);
    let eps = F::of(eps);

    let mut normalized = vec![F::zero(); input.len()];
    let mut out = vec![F::zero(); input.len()];
    let mut inv_std = Vec::with_capacity(batch * groups);
    let x = input.data();
    for b in 0..batch {
        for g in 0..groups {
            let start = (b * channels + g * per_group) * spatial;
            let xs = &x[start..start + group_len];
            let mean = xs.iter().copied().sum::<F>() / count;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / count;
            let inv = F::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (i, &v) in xs.iter().enumerate() {
                let c = g * per_group + i / spatial;
                let n = (v - mean) * inv;
                normalized[start + i] = n;
                out[start + i] = n * gain.data()[c] + shift.data()[c];
            }
        }
    }
    let shape = input.shape().to_vec();
    Ok((
        NdArray::new(shape.clone(), out)?,
        GroupNormCache {
            normalized: NdArray::new(shape, normalized)?,
            inv_std,
            groups,
        },
    ))
}

pub fn group_norm_backward<F: Scalar>(
    cache: &GroupNormCache<F>,
    gain: &NdArray<F>,
    grad_out: &NdArray<F>,
) -> Result<GroupNormGrads<F>> {
    let xhat = &cache.normalized;
    grad_out.expect_shape("group_norm_backward", xhat.shape())?;
    let (batch, channels, spatial) = layout(xhat, cache.groups)?;
    gain.expect_shape("group_norm_backward", &[channels])?;
    let groups = cache.groups;
    let per_group = channels / groups;
    let group_len = per_group * spatial;
    let count = F::of(group_len as f64);

    let mut gx = vec![F::zero(); xhat.len()];
    let mut g_gain = vec![F::zero(); channels];
    let mut g_shift = vec![F::zero(); channels];
    let (xh, gy) = (xhat.data(), grad_out.data());
    for b in 0..batch {
        for g in 0..groups {
            let start = (b * channels + g * per_group) * spatial;
            let mut sum_d = F::zero();
            let mut sum_dx = F::zero();
            for i in 0..group_len {
                let c = g * per_group + i / spatial;
                let dy = gy[start + i];
                g_gain[c] += dy * xh[start + i];
                g_shift[c] += dy;
                let d = dy * gain.data()[c];
                sum_d += d;
                sum_dx += d * xh[start + i];
            }
            let inv = cache.inv_std[b * groups + g];
            for i in 0..group_len {
                let c = g * per_group + i / spatial;
                let d = gy[start + i] * gain.data()[c];
                gx[start + i] = inv / count * (count * d - sum_d - xh[start + i] * sum_dx);
            }
        }
    }
    Ok(GroupNormGrads {
        input: NdArray::new(xhat.shape().to_vec(), gx)?,
        gain: NdArray::new([channels], g_gain)?,
        shift: NdArray::new([channels], g_shift)?,
    })
}

/// GroupNorm layer; gain starts at one and shift at zero.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "`{name}`: {channels} channels are not divisible into {groups} groups"
            )));
        }
        let gain = params.add(format!("{name}.gain"), NdArray::full([channels], F::one()))?;
        let shift = params.add(format!("{name}.shift"), NdArray::zeros([channels]))?;
        Ok(GroupNorm {
            gain,
            shift,
            groups,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        x: &NdArray<F>,
    ) -> Result<(NdArray<F>, GroupNormCache<F>)> {
        group_norm(
            x,
            self.groups,
            params.value(self.gain),
            params.value(self.shift),
            self.eps,
        )
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        cache: &GroupNormCache<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let g = group_norm_backward(cache, params.value(self.gain), grad_out)?;
        params.accumulate(self.gain, &g.gain)?;
        params.accumulate(self.shift, &g.shift)?;
        Ok(g.input)
    }
}
