use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserConfig, Encoder, EncoderConfig, HorizonConfig, Normalizer, ObsBatch};
use crate::data::WindowSample;
use crate::diffusion::{sample_batch, training_loss, DiffusionBatch, NoiseSchedule, ScheduleDescriptor};
use crate::nncore::{Checkpoint, NdArray, ParamStore, Scalar};
use crate::rng::Rng;
use crate::{Error, Result};

/// Architecture and diffusion hyperparameters of a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub horizons: HorizonConfig,
    #[serde(default)]
    pub schedule: ScheduleDescriptor,
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.encoder.violations();
        v.extend(self.horizons.violations());
        v.extend(self.denoiser.violations(self.horizons.pred));
        v.extend(self.schedule.violations());
        v
    }
}

/// Data-dependent sizes a model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Rendered frame size, present when observations carry images.
    pub image_hw: Option<[usize; 2]>,
}

/// Observation encoder followed by the conditional ε-predictor. Parameters
/// live in a separate [`ParamStore`] under `encoder.` and `denoiser.`.
#[derive(Clone, Debug)]
pub struct PolicyModel {
    cfg: ModelConfig,
    shape: ModelShape,
    encoder: Encoder,
    denoiser: Denoiser,
}

impl PolicyModel {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        cfg: &ModelConfig,
        shape: ModelShape,
        rng: &mut Rng,
    ) -> Result<Self> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(Error::Config(v.join("; ")));
        }
        let image_hw = if cfg.encoder.mode.uses_images() { shape.image_hw } else { None };
        let encoder = Encoder::new(params, "encoder", &cfg.encoder, cfg.horizons.obs, shape.state_dim, image_hw, rng)?;
        let denoiser = Denoiser::new(
            params,
            "denoiser",
            &cfg.denoiser,
            cfg.horizons.pred,
            shape.action_dim,
            cfg.encoder.embed_dim,
            rng,
        )?;
        Ok(PolicyModel {
            cfg: cfg.clone(),
            shape,
            encoder,
            denoiser,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn horizons(&self) -> HorizonConfig {
        self.cfg.horizons
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn denoiser(&self) -> &Denoiser {
        &self.denoiser
    }

    /// Denoising loss on normalized `[B, T_p, A]` actions. Gradients flow
    /// through the denoiser into the encoder and accumulate in `params`.
    pub fn loss<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        obs: &ObsBatch<F>,
        actions: NdArray<F>,
        sched: &NoiseSchedule,
        rng: &mut Rng,
    ) -> Result<F> {
        let (cond, enc_cache) = self.encoder.forward(params, obs)?;
        let batch = DiffusionBatch::draw(actions, cond, sched, rng);
        let out = training_loss(&self.denoiser, params, &batch, sched)?;
        self.encoder.backward(params, enc_cache, &out.grad_cond)?;
        Ok(out.loss)
    }

    /// Normalized action sequences `[B, T_p, A]`, one generator per row.
    pub fn sample<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        obs: &ObsBatch<F>,
        sched: &NoiseSchedule,
        rngs: &mut [Rng],
    ) -> Result<NdArray<F>> {
        let (cond, _) = self.encoder.forward(params, obs)?;
        sample_batch(
            &self.denoiser,
            params,
            &cond,
            sched,
            rngs,
            [self.cfg.horizons.pred, self.shape.action_dim],
        )
    }

    /// Stacks windows into an observation batch and normalized actions.
    pub fn collate(&self, windows: &[WindowSample], norm: &Normalizer) -> Result<(ObsBatch<f32>, NdArray<f32>)> {
        let b = windows.len();
        let h = self.cfg.horizons;
        let stack = |parts: Vec<&NdArray<f32>>| -> Result<NdArray<f32>> {
            let mut shape = vec![b];
            shape.extend_from_slice(parts[0].shape());
            let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
            NdArray::new(shape, data)
        };
        if b == 0 {
            return Err(Error::EmptyDataset("no windows to collate".into()));
        }
        let images = if self.cfg.encoder.mode.uses_images() {
            let parts = windows
                .iter()
                .map(|w| {
                    w.images
                        .as_ref()
                        .ok_or_else(|| Error::Config("the encoder needs images but the data has none".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(stack(parts)?)
        } else {
            None
        };
        let states = if self.cfg.encoder.mode.uses_states() {
            Some(stack(windows.iter().map(|w| &w.states).collect())?)
        } else {
            None
        };
        let actions = stack(windows.iter().map(|w| &w.actions).collect())?;
        let actions = norm
            .normalize(&actions.reshape([b * h.pred, self.shape.action_dim])?)?
            .reshape([b, h.pred, self.shape.action_dim])?;
        Ok((ObsBatch { images, states }, actions))
    }
}

/// Checkpoint metadata that, with the tensors, fully reconstructs a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub model: ModelConfig,
    pub shape: ModelShape,
    pub normalizer: Normalizer,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A deployable policy: model, weights, action normalizer and schedule.
#[derive(Clone, Debug)]
pub struct PolicyBundle {
    pub model: PolicyModel,
    pub params: ParamStore<f32>,
    pub normalizer: Normalizer,
    pub schedule: NoiseSchedule,
    pub step: u64,
}

impl PolicyBundle {
    pub fn new(model: PolicyModel, params: ParamStore<f32>, normalizer: Normalizer, step: u64) -> Result<Self> {
        if normalizer.dims() != model.shape().action_dim {
            return Err(Error::dim(
                "policy bundle",
                format!(
                    "normalizer has {} dimensions, model acts in {}",
                    normalizer.dims(),
                    model.shape().action_dim
                ),
            ));
        }
        let schedule = model.config().schedule.build()?;
        Ok(PolicyBundle {
            model,
            params,
            normalizer,
            schedule,
            step,
        })
    }

    /// Freshly initialized weights.
    pub fn init(cfg: &ModelConfig, shape: ModelShape, normalizer: Normalizer, rng: &mut Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let model = PolicyModel::new(&mut params, cfg, shape, rng)?;
        Self::new(model, params, normalizer, 0)
    }

    pub fn meta(&self, extra: serde_json::Value) -> BundleMeta {
        BundleMeta {
            model: self.model.config().clone(),
            shape: self.model.shape(),
            normalizer: self.normalizer.clone(),
            step: self.step,
            extra,
        }
    }

    /// Weights only, tensors named by parameter.
    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::to_value(self.meta(extra))?);
        ck.tensors = self.params.values();
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, BundleMeta)> {
        let meta: BundleMeta = serde_json::from_value(ck.metadata.clone()).map_err(|e| Error::Format {
            what: "checkpoint metadata",
            detail: e.to_string(),
        })?;
        let mut params = ParamStore::new();
        // Initialization draws are overwritten by the stored values.
        let model = PolicyModel::new(&mut params, &meta.model, meta.shape, &mut crate::rng::rng_from_seed(0))?;
        let values = ck
            .tensors
            .iter()
            .filter(|(k, _)| params.id(k).is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        params.load_values(&values)?;
        let bundle = Self::new(model, params, meta.normalizer.clone(), meta.step)?;
        Ok((bundle, meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        self.to_checkpoint(extra)?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_checkpoint(&Checkpoint::load(path)?)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ScheduleKind;
    use crate::policy::{DenoiserArch, EncoderMode};
    use crate::rng::rng_from_seed;

    fn cfg() -> ModelConfig {
        let mut encoder = EncoderConfig::new(EncoderMode::Hybrid);
        encoder.conv_channels = vec![4];
        encoder.groupnorm_groups = 2;
        encoder.embed_dim = 8;
        encoder.visual_features = 4;
        encoder.state_hidden = 8;
        ModelConfig {
            encoder,
            denoiser: DenoiserConfig::new(DenoiserArch::Unet1d, vec![8, 16]),
            horizons: HorizonConfig::default(),
            schedule: ScheduleDescriptor {
                kind: ScheduleKind::Cosine,
                steps: 5,
                beta_start: 1e-4,
                beta_end: 0.02,
            },
        }
    }

    fn shape() -> ModelShape {
        ModelShape {
            state_dim: 6,
            action_dim: 2,
            image_hw: Some([8, 8]),
        }
    }

    fn obs(b: usize, rng: &mut Rng) -> ObsBatch<f32> {
        ObsBatch {
            images: Some(NdArray::randn([b, 2, 8, 8, 3], rng)),
            states: Some(NdArray::randn([b, 2, 6], rng)),
        }
    }

    #[test]
    fn checkpoint_round_trip_reproduces_samples() {
        let mut rng = rng_from_seed(0);
        let norm = Normalizer::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let mut bundle = PolicyBundle::init(&cfg(), shape(), norm, &mut rng).unwrap();
        for (_, p) in bundle.params.iter_mut() {
            p.value = NdArray::randn(p.value.shape().to_vec(), &mut rng).map(|v| 0.3 * v);
        }
        let mut bytes = Vec::new();
        bundle.to_checkpoint(serde_json::json!({"note": 1})).unwrap().write_to(&mut bytes).unwrap();
        let ck = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        let (back, meta) = PolicyBundle::from_checkpoint(&ck).unwrap();
        assert_eq!(meta.extra["note"], 1);
        let o = obs(3, &mut rng);
        let draw = |b: &PolicyBundle| {
            let mut rngs: Vec<Rng> = (0..3).map(rng_from_seed).collect();
            b.model.sample(&b.params, &o, &b.schedule, &mut rngs).unwrap()
        };
        assert_eq!(draw(&bundle), draw(&back));
    }

    #[test]
    fn loss_fills_every_gradient() {
        let mut rng = rng_from_seed(1);
        let mut params = ParamStore::<f32>::new();
        let model = PolicyModel::new(&mut params, &cfg(), shape(), &mut rng).unwrap();
        let sched = cfg().schedule.build().unwrap();
        params.zero_grad();
        let a = NdArray::randn([4, 8, 2], &mut rng).map(|v: f32| v.clamp(-1.0, 1.0));
        let loss = model.loss(&mut params, &obs(4, &mut rng), a, &sched, &mut rng).unwrap();
        assert!(loss.is_finite());
        // Only the zero-initialized head receives gradient at initialization.
        let out = params.get("denoiser.out.kernel").unwrap();
        assert!(out.grad.as_ref().unwrap().max_abs() > 0.0);
    }

    #[test]
    fn invalid_config_lists_every_violation() {
        let mut c = cfg();
        c.horizons.action = 9;
        c.denoiser.hidden = vec![8, 16, 16, 16, 16];
        let mut p = ParamStore::<f32>::new();
        let err = PolicyModel::new(&mut p, &c, shape(), &mut rng_from_seed(0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("action horizon") && msg.contains("divisible by 16"), "{msg}");
    }
}
