use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Normalizer, PolicyBundle};
use crate::data::{augment, sample_window, AugmentConfig, DemoStore};
use crate::nncore::{adamw_step, ema_update, Checkpoint, EmaState, NdArray, OptimConfig};
use crate::rng::{rng_from_seed, Rng, RngState};
use crate::{Error, Result};

const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";
const EMA: &str = "ema/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    #[serde(default)]
    pub optim: OptimConfig,
    pub ema_decay: f64,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.optim.violations();
        if self.batch_size == 0 {
            v.push("batch_size must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            v.push(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        v.extend(self.augment.violations());
        v
    }
}

/// Action normalizer for a store. Mirrored actions are included for every
/// enabled reflection so augmented windows stay in range.
pub fn fit_action_normalizer(store: &DemoStore, augment: &AugmentConfig) -> Result<Normalizer> {
    let kind = store.env_config.kind;
    let a = store.actions.row_len();
    let mut rows = store.actions.data().to_vec();
    if augment.flip_prob > 0.0 {
        let mut mirrored = rows.clone();
        mirrored.chunks_exact_mut(a).for_each(|r| kind.flip_action(r));
        rows.extend(mirrored);
    }
    if augment.vflip_prob > 0.0 {
        let mut mirrored = rows.clone();
        mirrored.chunks_exact_mut(a).for_each(|r| kind.vflip_action(r));
        rows.extend(mirrored);
    }
    if augment.transpose_prob > 0.0 {
        let mut mirrored = rows.clone();
        mirrored.chunks_exact_mut(a).for_each(|r| kind.transpose_action(r));
        rows.extend(mirrored);
    }
    Normalizer::fit(&NdArray::new([rows.len() / a, a], rows)?)
}

/// Resumable optimization state: raw weights with AdamW moments, the EMA
/// shadow and the window-sampling generator.
pub struct Trainer {
    pub bundle: PolicyBundle,
    pub ema: EmaState<f32>,
    pub cfg: TrainConfig,
    rng: Rng,
}

impl Trainer {
    pub fn new(bundle: PolicyBundle, cfg: TrainConfig, seed: u64) -> Result<Self> {
        let v = cfg.violations();
        if !v.is_empty() {
            return Err(Error::Config(v.join("; ")));
        }
        let ema = EmaState::new(&bundle.params, cfg.ema_decay)?;
        Ok(Trainer {
            bundle,
            ema,
            cfg,
            rng: rng_from_seed(seed),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.bundle.params.step_count()
    }

    /// Fails before training when the store cannot feed the model.
    pub fn check_store(&self, store: &DemoStore) -> Result<()> {
        let shape = self.bundle.model.shape();
        let mismatch = |what: &str, data: usize, model: usize| {
            Error::dim(
                "train",
                format!("the data has {what} dimension {data} but the model expects {model}"),
            )
        };
        if store.actions.row_len() != shape.action_dim {
            return Err(mismatch("action", store.actions.row_len(), shape.action_dim));
        }
        if store.states.row_len() != shape.state_dim {
            return Err(mismatch("state", store.states.row_len(), shape.state_dim));
        }
        if self.bundle.model.config().encoder.mode.uses_images() {
            let img = store
                .images
                .as_ref()
                .ok_or_else(|| Error::Config("the encoder needs images but the data has none".into()))?;
            let hw = [img.shape()[1], img.shape()[2]];
            if Some(hw) != shape.image_hw {
                return Err(Error::dim(
                    "train",
                    format!("the data has {hw:?} images but the model expects {:?}", shape.image_hw),
                ));
            }
        }
        if store.is_empty() {
            return Err(Error::EmptyDataset("the demonstration store holds no steps".into()));
        }
        Ok(())
    }

    /// One optimizer step on a batch of uniformly drawn windows; returns the
    /// batch loss.
    pub fn step(&mut self, store: &DemoStore) -> Result<f64> {
        let h = self.bundle.model.horizons();
        let kind = store.env_config.kind;
        let windows = (0..self.cfg.batch_size)
            .map(|_| {
                let anchor = self.rng.random_range(0..store.len());
                augment(sample_window(store, anchor, &h)?, &mut self.rng, &self.cfg.augment, kind)
            })
            .collect::<Result<Vec<_>>>()?;
        let b = &mut self.bundle;
        let (obs, actions) = b.model.collate(&windows, &b.normalizer)?;
        b.params.zero_grad();
        let loss = b.model.loss(&mut b.params, &obs, actions, &b.schedule, &mut self.rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", b.params.step_count() + 1)));
        }
        adamw_step(&mut b.params, &self.cfg.optim)?;
        b.step = b.params.step_count();
        ema_update(&mut self.ema, &b.params)?;
        Ok(loss as f64)
    }

    /// The policy with EMA weights substituted.
    pub fn ema_bundle(&self) -> Result<PolicyBundle> {
        let mut out = self.bundle.clone();
        out.params = self.ema.apply_to(&self.bundle.params)?;
        Ok(out)
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.bundle.normalizer
    }

    /// Everything needed by [`Trainer::resume`].
    pub fn checkpoint(&self, extra: serde_json::Value) -> Result<Checkpoint> {
        let state = serde_json::json!({
            "train": self.cfg,
            "rng": RngState::capture(&self.rng),
            "user": extra,
        });
        let mut ck = self.bundle.to_checkpoint(state)?;
        for (name, p) in self.bundle.params.iter() {
            ck.tensors.insert(format!("{ADAM_M}{name}"), p.adam_m.clone());
            ck.tensors.insert(format!("{ADAM_V}{name}"), p.adam_v.clone());
        }
        for (name, v) in &self.ema.shadow {
            ck.tensors.insert(format!("{EMA}{name}"), v.clone());
        }
        Ok(ck)
    }

    /// Continues from a [`Trainer::checkpoint`]. The stored normalizer is
    /// kept so that earlier weights stay meaningful; `cfg` may change the
    /// step budget and optimizer settings.
    pub fn resume(ck: &Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let (mut bundle, meta) = PolicyBundle::from_checkpoint(ck)?;
        let missing = |name: &str| Error::Format {
            what: "training checkpoint",
            detail: format!("missing `{name}`"),
        };
        let (m, v) = (ck.group(ADAM_M), ck.group(ADAM_V));
        for (name, p) in bundle.params.iter_mut() {
            p.adam_m = m.get(name).cloned().ok_or_else(|| missing(&format!("{ADAM_M}{name}")))?;
            p.adam_v = v.get(name).cloned().ok_or_else(|| missing(&format!("{ADAM_V}{name}")))?;
        }
        bundle.params.set_step_count(meta.step);
        let rng: RngState = serde_json::from_value(meta.extra["rng"].clone()).map_err(|_| missing("rng"))?;
        let mut trainer = Trainer::new(bundle, cfg, 0)?;
        trainer.rng = rng.restore()?;
        let shadow = ck.group(EMA);
        let mut ema = trainer.ema.clone();
        for (name, v) in ema.shadow.iter_mut() {
            *v = shadow.get(name).cloned().ok_or_else(|| missing(&format!("{EMA}{name}")))?;
        }
        trainer.ema = ema;
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect, PdGains};
    use crate::diffusion::{ScheduleDescriptor, ScheduleKind};
    use crate::envs::{EnvConfig, EnvKind};
    use crate::nncore::LrSchedule;
    use crate::policy::{DenoiserArch, DenoiserConfig, EncoderConfig, EncoderMode, HorizonConfig, ModelConfig, ModelShape};

    fn setup() -> (DemoStore, PolicyBundle, TrainConfig) {
        let mut env = EnvConfig::new(EnvKind::Point, 5, 60);
        env.resolution = Some(10);
        let (store, _) = collect(&env, 3, 7, &PdGains::default()).unwrap();
        let mut encoder = EncoderConfig::new(EncoderMode::Hybrid);
        encoder.conv_channels = vec![4];
        encoder.depth = 1;
        encoder.embed_dim = 8;
        encoder.visual_features = 4;
        encoder.state_hidden = 8;
        let model = ModelConfig {
            encoder,
            denoiser: DenoiserConfig::new(DenoiserArch::FilmMlp, vec![16, 16]),
            horizons: HorizonConfig::default(),
            schedule: ScheduleDescriptor {
                kind: ScheduleKind::Cosine,
                steps: 10,
                ..Default::default()
            },
        };
        let shape = ModelShape {
            state_dim: 6,
            action_dim: 2,
            image_hw: Some([10, 10]),
        };
        let cfg = TrainConfig {
            batch_size: 8,
            steps: 20,
            optim: OptimConfig {
                learning_rate: 1e-3,
                lr_schedule: LrSchedule::Constant,
                ..Default::default()
            },
            ema_decay: 0.9,
            augment: AugmentConfig {
                flip_prob: 0.5,
                shift_max: 1,
                vflip_prob: 0.0,
                transpose_prob: 0.0,
            },
        };
        let norm = fit_action_normalizer(&store, &cfg.augment).unwrap();
        let bundle = PolicyBundle::init(&model, shape, norm, &mut rng_from_seed(1)).unwrap();
        (store, bundle, cfg)
    }

    #[test]
    fn flip_aware_normalizer_is_symmetric_in_x() {
        let (store, bundle, _) = setup();
        let n = &bundle.normalizer;
        assert_eq!(n.min[0], -n.max[0]);
        assert_eq!(Normalizer::fit(&store.actions).unwrap().min[1], n.min[1]);
    }

    #[test]
    fn vflip_aware_normalizer_is_symmetric_in_both_axes() {
        let (store, _, mut cfg) = setup();
        cfg.augment.vflip_prob = 0.5;
        let n = fit_action_normalizer(&store, &cfg.augment).unwrap();
        assert_eq!(n.min[0], -n.max[0]);
        assert_eq!(n.min[1], -n.max[1]);
        cfg.augment.transpose_prob = 0.5;
        let n = fit_action_normalizer(&store, &cfg.augment).unwrap();
        assert_eq!((n.min[0], n.max[0]), (n.min[1], n.max[1]));
    }

    #[test]
    fn identical_runs_give_identical_losses() {
        let run = || {
            let (store, bundle, cfg) = setup();
            let mut t = Trainer::new(bundle, cfg, 5).unwrap();
            (0..10).map(|_| t.step(&store).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (store, bundle, cfg) = setup();
        let mut full = Trainer::new(bundle.clone(), cfg.clone(), 5).unwrap();
        let straight: Vec<f64> = (0..6).map(|_| full.step(&store).unwrap()).collect();

        let mut first = Trainer::new(bundle, cfg.clone(), 5).unwrap();
        let mut losses: Vec<f64> = (0..3).map(|_| first.step(&store).unwrap()).collect();
        let mut bytes = Vec::new();
        first.checkpoint(serde_json::Value::Null).unwrap().write_to(&mut bytes).unwrap();
        let ck = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        let mut second = Trainer::resume(&ck, cfg).unwrap();
        assert_eq!(second.step_count(), 3);
        losses.extend((0..3).map(|_| second.step(&store).unwrap()));
        assert_eq!(losses, straight);
        assert_eq!(second.ema.shadow, full.ema.shadow);
    }

    #[test]
    fn action_dimension_mismatch_reported_before_training() {
        let (mut store, bundle, cfg) = setup();
        let t = Trainer::new(bundle, cfg, 0).unwrap();
        let n = store.len();
        store.actions = NdArray::zeros([n, 4]);
        assert!(matches!(t.check_store(&store), Err(Error::Dimension { .. })));
    }
}
