use serde::{Deserialize, Serialize};

use super::ops::{concat_cols, hwc_to_chw, split_cols};
use crate::nncore::{
    activation, activation_backward, Activation, Conv2d, ConvSpec, GroupNorm, GroupNormCache,
    Linear, NdArray, ParamStore, Scalar,
};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    State,
    Visual,
    Hybrid,
}

impl EncoderMode {
    pub fn uses_images(self) -> bool {
        self != EncoderMode::State
    }

    pub fn uses_states(self) -> bool {
        self != EncoderMode::Visual
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub mode: EncoderMode,
    /// Output channels of conv block `i` are `conv_channels[min(i, len − 1)]`.
    #[serde(default = "default_channels")]
    pub conv_channels: Vec<usize>,
    /// Number of conv blocks.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_groups")]
    pub groupnorm_groups: usize,
    /// Width D_c of the conditioning vector.
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Per-frame width of the visual features.
    #[serde(default = "default_features")]
    pub visual_features: usize,
    #[serde(default = "default_features")]
    pub state_hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_channels() -> Vec<usize> {
    vec![16, 32]
}
fn default_depth() -> usize {
    2
}
fn default_groups() -> usize {
    4
}
fn default_embed() -> usize {
    64
}
fn default_kernel() -> usize {
    3
}
fn default_stride() -> usize {
    2
}
fn default_features() -> usize {
    64
}
fn default_activation() -> Activation {
    Activation::Relu
}

impl EncoderConfig {
    pub fn new(mode: EncoderMode) -> Self {
        EncoderConfig {
            mode,
            conv_channels: default_channels(),
            depth: default_depth(),
            groupnorm_groups: default_groups(),
            embed_dim: default_embed(),
            kernel: default_kernel(),
            stride: default_stride(),
            visual_features: default_features(),
            state_hidden: default_features(),
            activation: default_activation(),
        }
    }

    pub fn block_channels(&self, i: usize) -> usize {
        self.conv_channels[i.min(self.conv_channels.len() - 1)]
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.embed_dim == 0 {
            v.push("encoder embed_dim must be ≥ 1".into());
        }
        if self.mode.uses_states() && self.state_hidden == 0 {
            v.push("encoder state_hidden must be ≥ 1".into());
        }
        if self.mode.uses_images() {
            if self.depth == 0 {
                v.push("encoder depth must be ≥ 1".into());
            }
            if self.conv_channels.is_empty() {
                v.push("encoder conv_channels must not be empty".into());
            }
            if self.groupnorm_groups == 0 {
                v.push("encoder groupnorm_groups must be ≥ 1".into());
            } else if let Some(c) = self
                .conv_channels
                .iter()
                .find(|c| **c == 0 || *c % self.groupnorm_groups != 0)
            {
                v.push(format!(
                    "encoder conv channel count {c} is not divisible into {} groups",
                    self.groupnorm_groups
                ));
            }
            if self.kernel == 0 || self.kernel.is_multiple_of(2) {
                v.push(format!("encoder kernel must be odd, got {}", self.kernel));
            }
            if self.stride == 0 {
                v.push("encoder stride must be ≥ 1".into());
            }
            if self.visual_features == 0 {
                v.push("encoder visual_features must be ≥ 1".into());
            }
        }
        v
    }
}

/// Stacked observation windows for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch<F> {
    /// `[B, T_o, H, W, 3]`.
    pub images: Option<NdArray<F>>,
    /// `[B, T_o, S]`.
    pub states: Option<NdArray<F>>,
}

impl<F: Scalar> ObsBatch<F> {
    pub fn batch(&self) -> usize {
        self.states
            .as_ref()
            .or(self.images.as_ref())
            .map_or(0, |a| a.shape()[0])
    }
}

/// Observation encoder.
///
/// Visual path: `depth` × (conv2d → GroupNorm → activation) per frame,
/// flatten, linear. State path: two linear layers over the stacked state
/// window. The paths are concatenated, passed through the activation and
/// projected to `embed_dim`.
#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    obs_horizon: usize,
    state_dim: usize,
    image_hw: Option<[usize; 2]>,
    blocks: Vec<(Conv2d, GroupNorm)>,
    visual_proj: Option<Linear>,
    state_in: Option<Linear>,
    state_out: Option<Linear>,
    out: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderCache<F> {
    block_inputs: Vec<NdArray<F>>,
    gn_caches: Vec<GroupNormCache<F>>,
    gn_outputs: Vec<NdArray<F>>,
    flat: Option<NdArray<F>>,
    states_flat: Option<NdArray<F>>,
    state_pre: Option<NdArray<F>>,
    state_post: Option<NdArray<F>>,
    joint_pre: NdArray<F>,
    joint_post: NdArray<F>,
}

impl Encoder {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        prefix: &str,
        cfg: &EncoderConfig,
        obs_horizon: usize,
        state_dim: usize,
        image_hw: Option<[usize; 2]>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(Error::Config(v.join("; ")));
        }
        if cfg.mode.uses_images() && image_hw.is_none() {
            return Err(Error::Config(format!(
                "{:?} encoder requires image observations",
                cfg.mode
            )));
        }
        let mut blocks = Vec::new();
        let mut visual_proj = None;
        let mut joint = 0;
        if cfg.mode.uses_images() {
            let [mut h, mut w] = image_hw.expect("checked above");
            let spec = ConvSpec::new(cfg.stride, cfg.kernel / 2);
            let mut ch = 3;
            for i in 0..cfg.depth {
                let out_ch = cfg.block_channels(i);
                let conv = Conv2d::new(params, &format!("{prefix}.conv{i}"), ch, out_ch, cfg.kernel, spec, rng)?;
                let gn = GroupNorm::new(params, &format!("{prefix}.gn{i}"), out_ch, cfg.groupnorm_groups)?;
                h = spec.output_len(h, cfg.kernel)?;
                w = spec.output_len(w, cfg.kernel)?;
                blocks.push((conv, gn));
                ch = out_ch;
            }
            visual_proj = Some(Linear::new(params, &format!("{prefix}.visual"), ch * h * w, cfg.visual_features, rng)?);
            joint += obs_horizon * cfg.visual_features;
        }
        let (mut state_in, mut state_out) = (None, None);
        if cfg.mode.uses_states() {
            state_in = Some(Linear::new(params, &format!("{prefix}.state_in"), obs_horizon * state_dim, cfg.state_hidden, rng)?);
            state_out = Some(Linear::new(params, &format!("{prefix}.state_out"), cfg.state_hidden, cfg.state_hidden, rng)?);
            joint += cfg.state_hidden;
        }
        let out = Linear::new(params, &format!("{prefix}.out"), joint, cfg.embed_dim, rng)?;
        Ok(Encoder {
            cfg: cfg.clone(),
            obs_horizon,
            state_dim,
            image_hw,
            blocks,
            visual_proj,
            state_in,
            state_out,
            out,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    /// The output projection (weights `[D_c, ·]`, bias `[D_c]`).
    pub fn output_layer(&self) -> &Linear {
        &self.out
    }

    fn check_inputs<F: Scalar>(&self, obs: &ObsBatch<F>) -> Result<usize> {
        let batch = obs.batch();
        let mode = self.cfg.mode;
        if mode.uses_images() {
            let img = obs.images.as_ref().ok_or_else(|| {
                Error::Config(format!("{mode:?} encoder needs image observations"))
            })?;
            let [h, w] = self.image_hw.expect("visual encoders know their image size");
            img.expect_shape("encode_observation", &[batch, self.obs_horizon, h, w, 3])?;
        }
        if mode.uses_states() {
            let st = obs.states.as_ref().ok_or_else(|| {
                Error::Config(format!("{mode:?} encoder needs state observations"))
            })?;
            st.expect_shape("encode_observation", &[batch, self.obs_horizon, self.state_dim])?;
        }
        Ok(batch)
    }

    /// Conditioning vectors `[B, D_c]`.
    pub fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        obs: &ObsBatch<F>,
    ) -> Result<(NdArray<F>, EncoderCache<F>)> {
        let batch = self.check_inputs(obs)?;
        let act = self.cfg.activation;
        let mut parts = Vec::new();
        let (mut block_inputs, mut gn_caches, mut gn_outputs) = (Vec::new(), Vec::new(), Vec::new());
        let mut flat = None;
        if let Some(img) = obs.images.as_ref().filter(|_| self.cfg.mode.uses_images()) {
            let [h, w] = self.image_hw.expect("visual encoders know their image size");
            let frames = img.clone().reshape([batch * self.obs_horizon, h, w, 3])?;
            let mut x = hwc_to_chw(&frames)?;
            for (conv, gn) in &self.blocks {
                let y = conv.forward(params, &x)?;
                let (z, cache) = gn.forward(params, &y)?;
                block_inputs.push(std::mem::replace(&mut x, activation(&z, act)));
                gn_caches.push(cache);
                gn_outputs.push(z);
            }
            let per_frame = x.len() / (batch * self.obs_horizon);
            let f = x.reshape([batch * self.obs_horizon, per_frame])?;
            let proj = self.visual_proj.as_ref().expect("visual path has a projection");
            let feats = proj.forward(params, &f)?;
            parts.push(feats.reshape([batch, self.obs_horizon * self.cfg.visual_features])?);
            flat = Some(f);
        }
        let (mut states_flat, mut state_pre, mut state_post) = (None, None, None);
        if let Some(st) = obs.states.as_ref().filter(|_| self.cfg.mode.uses_states()) {
            let s = st.clone().reshape([batch, self.obs_horizon * self.state_dim])?;
            let l1 = self.state_in.as_ref().expect("state path has two layers");
            let l2 = self.state_out.as_ref().expect("state path has two layers");
            let pre = l1.forward(params, &s)?;
            let post = activation(&pre, act);
            parts.push(l2.forward(params, &post)?);
            states_flat = Some(s);
            state_pre = Some(pre);
            state_post = Some(post);
        }
        let refs: Vec<&NdArray<F>> = parts.iter().collect();
        let joint_pre = concat_cols(&refs)?;
        let joint_post = activation(&joint_pre, act);
        let cond = self.out.forward(params, &joint_post)?;
        Ok((
            cond,
            EncoderCache {
                block_inputs,
                gn_caches,
                gn_outputs,
                flat,
                states_flat,
                state_pre,
                state_post,
                joint_pre,
                joint_post,
            },
        ))
    }

    /// Accumulates parameter gradients for `d loss / d cond`.
    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        cache: EncoderCache<F>,
        grad_cond: &NdArray<F>,
    ) -> Result<()> {
        let act = self.cfg.activation;
        let g_post = self.out.backward(params, &cache.joint_post, grad_cond)?;
        let g_pre = activation_backward(&cache.joint_pre, &g_post, act)?;
        let batch = g_pre.shape()[0];
        let mut widths = Vec::new();
        if cache.flat.is_some() {
            widths.push(self.obs_horizon * self.cfg.visual_features);
        }
        if cache.states_flat.is_some() {
            widths.push(self.cfg.state_hidden);
        }
        let mut grads = split_cols(&g_pre, &widths)?.into_iter();
        if let Some(flat) = &cache.flat {
            let g = grads.next().expect("one gradient per path");
            let g = g.reshape([batch * self.obs_horizon, self.cfg.visual_features])?;
            let proj = self.visual_proj.as_ref().expect("visual path has a projection");
            let mut g = proj.backward(params, flat, &g)?;
            for (i, (conv, gn)) in self.blocks.iter().enumerate().rev() {
                let z = &cache.gn_outputs[i];
                g = g.reshape(z.shape().to_vec())?;
                let gz = activation_backward(z, &g, act)?;
                let gy = gn.backward(params, &cache.gn_caches[i], &gz)?;
                g = conv.backward(params, &cache.block_inputs[i], &gy)?;
            }
        }
        if let (Some(s), Some(pre), Some(post)) = (&cache.states_flat, &cache.state_pre, &cache.state_post) {
            let g = grads.next().expect("one gradient per path");
            let l1 = self.state_in.as_ref().expect("state path has two layers");
            let l2 = self.state_out.as_ref().expect("state path has two layers");
            let g = l2.backward(params, post, &g)?;
            let g = activation_backward(pre, &g, act)?;
            l1.backward(params, s, &g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck;
    use crate::rng::rng_from_seed;

    fn tiny(mode: EncoderMode) -> EncoderConfig {
        EncoderConfig {
            mode,
            conv_channels: vec![2, 4],
            depth: 2,
            groupnorm_groups: 2,
            embed_dim: 3,
            kernel: 3,
            stride: 2,
            visual_features: 3,
            state_hidden: 4,
            activation: Activation::Silu,
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = rng_from_seed(0);
        let mut p = ParamStore::<f64>::new();
        let enc = Encoder::new(&mut p, "enc", &tiny(EncoderMode::State), 2, 4, None, &mut rng).unwrap();
        for (_, e) in p.iter_mut() {
            e.value.fill(0.0);
        }
        let bias = NdArray::from_f64([3], &[0.5, -1.0, 2.0]).unwrap();
        *p.value_mut(enc.out.bias) = bias.clone();
        let obs = ObsBatch {
            images: None,
            states: Some(NdArray::randn([2, 2, 4], &mut rng)),
        };
        let (cond, _) = enc.forward(&p, &obs).unwrap();
        assert_eq!(cond.row(0), bias.data());
        assert_eq!(cond.row(1), bias.data());
    }

    #[test]
    fn encodes_64x64_frames() {
        let mut rng = rng_from_seed(0);
        let mut p = ParamStore::<f32>::new();
        let enc = Encoder::new(&mut p, "enc", &tiny(EncoderMode::Visual), 1, 6, Some([64, 64]), &mut rng).unwrap();
        let obs = ObsBatch {
            images: Some(NdArray::zeros([1, 1, 64, 64, 3])),
            states: None,
        };
        assert_eq!(enc.forward(&p, &obs).unwrap().0.shape(), &[1, 3]);
    }

    #[test]
    fn mode_input_mismatch_is_config_error() {
        let mut rng = rng_from_seed(0);
        let mut p = ParamStore::<f32>::new();
        let enc = Encoder::new(&mut p, "enc", &tiny(EncoderMode::Hybrid), 1, 6, Some([8, 8]), &mut rng).unwrap();
        let obs = ObsBatch {
            images: None,
            states: Some(NdArray::zeros([1, 1, 6])),
        };
        assert!(matches!(enc.forward(&p, &obs), Err(Error::Config(_))));
        let mut q = ParamStore::<f32>::new();
        let err = Encoder::new(&mut q, "enc", &tiny(EncoderMode::Visual), 1, 6, None, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn hybrid_encoder_gradcheck() {
        for seed in 0..3 {
            let mut rng = rng_from_seed(seed);
            let mut p = ParamStore::<f64>::new();
            let enc = Encoder::new(&mut p, "enc", &tiny(EncoderMode::Hybrid), 2, 3, Some([5, 6]), &mut rng).unwrap();
            let obs = ObsBatch {
                images: Some(NdArray::randn([2, 2, 5, 6, 3], &mut rng)),
                states: Some(NdArray::randn([2, 2, 3], &mut rng)),
            };
            let proj = NdArray::<f64>::randn([2, 3], &mut rng);
            let err = gradcheck(&mut p, 300, 1e-5, &mut rng, |p| {
                let (c, cache) = enc.forward(p, &obs)?;
                let loss = c.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
                enc.backward(p, cache, &proj)?;
                Ok(loss)
            })
            .unwrap();
            assert!(err <= 1e-5, "seed {seed}: {err}");
        }
    }
}
