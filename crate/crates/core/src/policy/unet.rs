use super::denoiser::{DenoiserConfig, StepCondCache, StepCondEmbedding};
use super::ops::{concat_cols, split_cols, swap_last_two};
use crate::nncore::{
    activation, activation_backward, upsample1d, upsample1d_backward, Activation, Conv1d,
    ConvSpec, GroupNorm, GroupNormCache, Init, Linear, NdArray, ParamStore, Scalar,
};
use crate::rng::Rng;
use crate::Result;

/// Residual temporal block: two conv → GroupNorm → SiLU stages with a FiLM
/// modulation in between, plus a 1×1 projection when the width changes.
#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv1d,
    gn1: GroupNorm,
    film: Linear,
    conv2: Conv1d,
    gn2: GroupNorm,
    proj: Option<Conv1d>,
    out_ch: usize,
}

#[derive(Clone, Debug)]
struct ResCache<F> {
    x: NdArray<F>,
    n1: NdArray<F>,
    c1: GroupNormCache<F>,
    a1: NdArray<F>,
    gamma: NdArray<F>,
    m: NdArray<F>,
    n2: NdArray<F>,
    c2: GroupNormCache<F>,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        cfg: &DenoiserConfig,
        embed_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let k = cfg.kernel;
        let same = ConvSpec::new(1, k / 2);
        let conv1 = Conv1d::new(params, &format!("{name}.conv1"), in_ch, out_ch, k, same, Init::KaimingUniform { fan_in: in_ch * k }, rng)?;
        let gn1 = GroupNorm::new(params, &format!("{name}.gn1"), out_ch, cfg.groupnorm_groups)?;
        let film = Linear::new(params, &format!("{name}.film"), embed_dim, 2 * out_ch, rng)?;
        let conv2 = Conv1d::new(params, &format!("{name}.conv2"), out_ch, out_ch, k, same, Init::KaimingUniform { fan_in: out_ch * k }, rng)?;
        let gn2 = GroupNorm::new(params, &format!("{name}.gn2"), out_ch, cfg.groupnorm_groups)?;
        let proj = if in_ch != out_ch {
            Some(Conv1d::new(params, &format!("{name}.proj"), in_ch, out_ch, 1, ConvSpec::new(1, 0), Init::KaimingUniform { fan_in: in_ch }, rng)?)
        } else {
            None
        };
        Ok(ResBlock {
            conv1,
            gn1,
            film,
            conv2,
            gn2,
            proj,
            out_ch,
        })
    }

    fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        x: NdArray<F>,
        joint: &NdArray<F>,
    ) -> Result<(NdArray<F>, ResCache<F>)> {
        let h1 = self.conv1.forward(params, &x)?;
        let (n1, c1) = self.gn1.forward(params, &h1)?;
        let a1 = activation(&n1, Activation::Silu);
        let fb = self.film.forward(params, joint)?;
        let mut parts = split_cols(&fb, &[self.out_ch, self.out_ch])?;
        let beta = parts.pop().expect("two parts");
        let gamma = parts.pop().expect("two parts");
        let t = a1.shape()[2];
        let mut m = a1.clone();
        for (row, (g, b)) in m.data_mut().chunks_exact_mut(t).zip(gamma.data().iter().zip(beta.data())) {
            for v in row {
                *v = (F::one() + *g) * *v + *b;
            }
        }
        let h2 = self.conv2.forward(params, &m)?;
        let (n2, c2) = self.gn2.forward(params, &h2)?;
        let mut out = activation(&n2, Activation::Silu);
        match &self.proj {
            Some(p) => out.add_assign(&p.forward(params, &x)?)?,
            None => out.add_assign(&x)?,
        }
        Ok((
            out,
            ResCache {
                x,
                n1,
                c1,
                a1,
                gamma,
                m,
                n2,
                c2,
            },
        ))
    }

    fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        cache: &ResCache<F>,
        grad_out: &NdArray<F>,
        joint: &NdArray<F>,
        grad_joint: &mut NdArray<F>,
    ) -> Result<NdArray<F>> {
        let g = activation_backward(&cache.n2, grad_out, Activation::Silu)?;
        let g = self.gn2.backward(params, &cache.c2, &g)?;
        let g_m = self.conv2.backward(params, &cache.m, &g)?;

        let t = g_m.shape()[2];
        let batch = g_m.shape()[0];
        let mut g_a1 = g_m.clone();
        let mut g_gamma = vec![F::zero(); batch * self.out_ch];
        let mut g_beta = vec![F::zero(); batch * self.out_ch];
        for (i, (row, a)) in g_a1
            .data_mut()
            .chunks_exact_mut(t)
            .zip(cache.a1.data().chunks_exact(t))
            .enumerate()
        {
            let scale = F::one() + cache.gamma.data()[i];
            for (gv, av) in row.iter_mut().zip(a) {
                g_gamma[i] += *gv * *av;
                g_beta[i] += *gv;
                *gv *= scale;
            }
        }
        let g_gamma = NdArray::new([batch, self.out_ch], g_gamma)?;
        let g_beta = NdArray::new([batch, self.out_ch], g_beta)?;
        let g_fb = concat_cols(&[&g_gamma, &g_beta])?;
        grad_joint.add_assign(&self.film.backward(params, joint, &g_fb)?)?;

        let g = activation_backward(&cache.n1, &g_a1, Activation::Silu)?;
        let g = self.gn1.backward(params, &cache.c1, &g)?;
        let mut g_x = self.conv1.backward(params, &cache.x, &g)?;
        match &self.proj {
            Some(p) => g_x.add_assign(&p.backward(params, &cache.x, grad_out)?)?,
            None => g_x.add_assign(grad_out)?,
        }
        Ok(g_x)
    }
}

/// Temporal U-Net over `[B, T_p, A]`: one residual block per level with
/// stride-2 downsampling, a middle block, and nearest-neighbour upsampling
/// followed by a conv and skip concatenation on the way back up.
#[derive(Clone, Debug)]
pub struct Unet1d {
    embed: StepCondEmbedding,
    channels: Vec<usize>,
    down_blocks: Vec<ResBlock>,
    downs: Vec<Conv1d>,
    mid: ResBlock,
    ups: Vec<Conv1d>,
    up_blocks: Vec<ResBlock>,
    out: Conv1d,
    pred_horizon: usize,
    action_dim: usize,
}

#[derive(Clone, Debug)]
pub struct UnetCache<F> {
    embed: StepCondCache<F>,
    joint: NdArray<F>,
    down: Vec<ResCache<F>>,
    skips: Vec<NdArray<F>>,
    mid: ResCache<F>,
    up_in: Vec<NdArray<F>>,
    up: Vec<ResCache<F>>,
    last: NdArray<F>,
}

impl Unet1d {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        prefix: &str,
        cfg: &DenoiserConfig,
        pred_horizon: usize,
        action_dim: usize,
        cond_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let embed = StepCondEmbedding::new(params, &format!("{prefix}.embed"), cfg.time_embed_dim, cond_dim, rng)?;
        let e = embed.out_dim();
        let ch = cfg.hidden.clone();
        let levels = ch.len();
        let k = cfg.kernel;
        let (mut down_blocks, mut downs) = (Vec::new(), Vec::new());
        let mut width = action_dim;
        for (i, &c) in ch.iter().enumerate() {
            down_blocks.push(ResBlock::new(params, &format!("{prefix}.down{i}"), width, c, cfg, e, rng)?);
            if i + 1 < levels {
                downs.push(Conv1d::new(params, &format!("{prefix}.downsample{i}"), c, c, k, ConvSpec::new(2, k / 2), Init::KaimingUniform { fan_in: c * k }, rng)?);
            }
            width = c;
        }
        let mid = ResBlock::new(params, &format!("{prefix}.mid"), width, width, cfg, e, rng)?;
        let (mut ups, mut up_blocks) = (Vec::new(), Vec::new());
        for i in 0..levels - 1 {
            ups.push(Conv1d::new(params, &format!("{prefix}.upsample{i}"), ch[i + 1], ch[i], k, ConvSpec::new(1, k / 2), Init::KaimingUniform { fan_in: ch[i + 1] * k }, rng)?);
            up_blocks.push(ResBlock::new(params, &format!("{prefix}.up{i}"), 2 * ch[i], ch[i], cfg, e, rng)?);
        }
        let out = Conv1d::new(params, &format!("{prefix}.out"), ch[0], action_dim, 1, ConvSpec::new(1, 0), Init::Zeros, rng)?;
        Ok(Unet1d {
            embed,
            channels: ch,
            down_blocks,
            downs,
            mid,
            ups,
            up_blocks,
            out,
            pred_horizon,
            action_dim,
        })
    }

    pub fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        noisy: &NdArray<F>,
        steps: &[usize],
        cond: &NdArray<F>,
    ) -> Result<(NdArray<F>, UnetCache<F>)> {
        let batch = steps.len();
        noisy.expect_shape("unet1d", &[batch, self.pred_horizon, self.action_dim])?;
        let (joint, embed) = self.embed.forward(params, steps, cond)?;
        let levels = self.channels.len();
        let mut x = swap_last_two(noisy)?;
        let (mut down, mut skips) = (Vec::new(), Vec::new());
        for i in 0..levels {
            let (y, c) = self.down_blocks[i].forward(params, x, &joint)?;
            down.push(c);
            x = if i + 1 < levels {
                let d = self.downs[i].forward(params, &y)?;
                skips.push(y);
                d
            } else {
                y
            };
        }
        let (mut x, mid) = self.mid.forward(params, x, &joint)?;
        let (mut up_in, mut up) = (Vec::new(), Vec::new());
        for i in (0..levels - 1).rev() {
            let u = upsample1d(&x)?;
            let y = self.ups[i].forward(params, &u)?;
            up_in.push(u);
            let cat = concat_channels(&y, &skips[i])?;
            let (z, c) = self.up_blocks[i].forward(params, cat, &joint)?;
            up.push(c);
            x = z;
        }
        let out = self.out.forward(params, &x)?;
        Ok((
            swap_last_two(&out)?,
            UnetCache {
                embed,
                joint,
                down,
                skips,
                mid,
                up_in,
                up,
                last: x,
            },
        ))
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        mut cache: UnetCache<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let levels = self.channels.len();
        let joint = std::mem::replace(&mut cache.joint, NdArray::zeros([0]));
        let mut g_joint = NdArray::zeros(joint.shape().to_vec());
        let g = swap_last_two(grad_out)?;
        let mut g_x = self.out.backward(params, &cache.last, &g)?;
        let mut g_skips: Vec<Option<NdArray<F>>> = vec![None; levels.saturating_sub(1)];
        for i in 0..levels - 1 {
            let rc = cache.up.pop().expect("one cache per up level");
            let u = cache.up_in.pop().expect("one input per up level");
            let g_cat = self.up_blocks[i].backward(params, &rc, &g_x, &joint, &mut g_joint)?;
            let (g_y, g_skip) = split_channels(&g_cat, self.channels[i])?;
            g_skips[i] = Some(g_skip);
            let g_u = self.ups[i].backward(params, &u, &g_y)?;
            g_x = upsample1d_backward(&g_u)?;
        }
        g_x = self.mid.backward(params, &cache.mid, &g_x, &joint, &mut g_joint)?;
        for i in (0..levels).rev() {
            if i + 1 < levels {
                g_x = self.downs[i].backward(params, &cache.skips[i], &g_x)?;
                g_x.add_assign(g_skips[i].as_ref().expect("filled on the way up"))?;
            }
            g_x = self.down_blocks[i].backward(params, &cache.down[i], &g_x, &joint, &mut g_joint)?;
        }
        self.embed.backward(params, &cache.embed, &g_joint)
    }
}

fn concat_channels<F: Scalar>(a: &NdArray<F>, b: &NdArray<F>) -> Result<NdArray<F>> {
    let [batch, ca, t] = a.dims("concat_channels", "first")?;
    let cb = b.shape()[1];
    let flat = concat_cols(&[
        &a.clone().reshape([batch, ca * t])?,
        &b.clone().reshape([batch, cb * t])?,
    ])?;
    flat.reshape([batch, ca + cb, t])
}

/// Splits `[B, C, T]` into the first `c` channels and the rest.
fn split_channels<F: Scalar>(x: &NdArray<F>, c: usize) -> Result<(NdArray<F>, NdArray<F>)> {
    let [batch, total, t] = x.dims("split_channels", "input")?;
    let flat = x.clone().reshape([batch, total * t])?;
    let mut parts = split_cols(&flat, &[c * t, (total - c) * t])?;
    let rest = parts.pop().expect("two parts").reshape([batch, total - c, t])?;
    let first = parts.pop().expect("two parts").reshape([batch, c, t])?;
    Ok((first, rest))
}
