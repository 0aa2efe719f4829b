use serde::{Deserialize, Serialize};

use super::film::{FilmMlp, FilmMlpCache};
use super::ops::{concat_cols, split_cols};
use super::unet::{Unet1d, UnetCache};
use crate::diffusion::NoisePredictor;
use crate::nncore::{
    activation, activation_backward, sinusoidal_embed_batch, Activation, Linear, NdArray,
    ParamStore, Scalar, DEFAULT_MAX_PERIOD,
};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserArch {
    FilmMlp,
    Unet1d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub arch: DenoiserArch,
    /// Hidden layer widths (FiLM-MLP) or channels per resolution level (U-Net).
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_dim")]
    pub time_embed_dim: usize,
    /// U-Net GroupNorm groups.
    #[serde(default = "default_groups")]
    pub groupnorm_groups: usize,
    /// U-Net temporal kernel size.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}
fn default_time_dim() -> usize {
    32
}
fn default_groups() -> usize {
    8
}
fn default_kernel() -> usize {
    3
}

impl DenoiserConfig {
    pub fn new(arch: DenoiserArch, hidden: Vec<usize>) -> Self {
        DenoiserConfig {
            arch,
            hidden,
            time_embed_dim: default_time_dim(),
            groupnorm_groups: default_groups(),
            kernel: default_kernel(),
        }
    }

    /// Number of stride-2 downsamplings in the U-Net.
    pub fn down_levels(&self) -> usize {
        match self.arch {
            DenoiserArch::FilmMlp => 0,
            DenoiserArch::Unet1d => self.hidden.len().saturating_sub(1),
        }
    }

    pub fn violations(&self, pred_horizon: usize) -> Vec<String> {
        let mut v = Vec::new();
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            v.push("denoiser hidden widths must be a non-empty list of positive integers".into());
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            v.push(format!(
                "denoiser time_embed_dim must be positive and even, got {}",
                self.time_embed_dim
            ));
        }
        if self.arch == DenoiserArch::Unet1d {
            if self.groupnorm_groups == 0 {
                v.push("denoiser groupnorm_groups must be ≥ 1".into());
            } else if let Some(c) = self.hidden.iter().find(|c| **c % self.groupnorm_groups != 0) {
                v.push(format!(
                    "U-Net channel count {c} is not divisible into {} groups",
                    self.groupnorm_groups
                ));
            }
            if self.kernel == 0 || self.kernel.is_multiple_of(2) {
                v.push(format!("U-Net kernel must be odd, got {}", self.kernel));
            }
            let factor = 1usize << self.down_levels().min(30);
            if !pred_horizon.is_multiple_of(factor) {
                v.push(format!(
                    "U-Net with {} down levels needs a prediction horizon divisible by {factor}, got {pred_horizon}",
                    self.down_levels()
                ));
            }
        }
        v
    }
}

/// Joint embedding of the diffusion step and the observation conditioning:
/// `silu([MLP(sinusoid(k)), cond])`.
#[derive(Clone, Debug)]
pub struct StepCondEmbedding {
    time_dim: usize,
    cond_dim: usize,
    time_in: Linear,
    time_out: Linear,
}

#[derive(Clone, Debug)]
pub struct StepCondCache<F> {
    sinus: NdArray<F>,
    time_pre: NdArray<F>,
    time_post: NdArray<F>,
    joint: NdArray<F>,
}

impl StepCondEmbedding {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        prefix: &str,
        time_dim: usize,
        cond_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(StepCondEmbedding {
            time_dim,
            cond_dim,
            time_in: Linear::new(params, &format!("{prefix}.time_in"), time_dim, 2 * time_dim, rng)?,
            time_out: Linear::new(params, &format!("{prefix}.time_out"), 2 * time_dim, time_dim, rng)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.time_dim + self.cond_dim
    }

    pub fn forward<F: Scalar>(
        &self,
        params: &ParamStore<F>,
        steps: &[usize],
        cond: &NdArray<F>,
    ) -> Result<(NdArray<F>, StepCondCache<F>)> {
        cond.expect_shape("denoiser conditioning", &[steps.len(), self.cond_dim])?;
        let sinus = sinusoidal_embed_batch::<F>(steps, self.time_dim, DEFAULT_MAX_PERIOD)?;
        let time_pre = self.time_in.forward(params, &sinus)?;
        let time_post = activation(&time_pre, Activation::Silu);
        let t = self.time_out.forward(params, &time_post)?;
        let joint = concat_cols(&[&t, cond])?;
        let out = activation(&joint, Activation::Silu);
        Ok((
            out,
            StepCondCache {
                sinus,
                time_pre,
                time_post,
                joint,
            },
        ))
    }

    /// Returns the gradient with respect to `cond`.
    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        cache: &StepCondCache<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let g = activation_backward(&cache.joint, grad_out, Activation::Silu)?;
        let mut parts = split_cols(&g, &[self.time_dim, self.cond_dim])?;
        let g_cond = parts.pop().expect("two parts");
        let g_t = parts.pop().expect("two parts");
        let g = self.time_out.backward(params, &cache.time_post, &g_t)?;
        let g = activation_backward(&cache.time_pre, &g, Activation::Silu)?;
        self.time_in.backward(params, &cache.sinus, &g)?;
        Ok(g_cond)
    }
}

/// Conditional ε-predictor over `[B, T_p, A]` action sequences.
#[derive(Clone, Debug)]
pub enum Denoiser {
    FilmMlp(FilmMlp),
    Unet1d(Unet1d),
}

#[derive(Clone, Debug)]
pub enum DenoiserCache<F> {
    FilmMlp(FilmMlpCache<F>),
    Unet1d(UnetCache<F>),
}

impl Denoiser {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        prefix: &str,
        cfg: &DenoiserConfig,
        pred_horizon: usize,
        action_dim: usize,
        cond_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let v = cfg.violations(pred_horizon);
        if !v.is_empty() {
            return Err(Error::Config(v.join("; ")));
        }
        Ok(match cfg.arch {
            DenoiserArch::FilmMlp => {
                Denoiser::FilmMlp(FilmMlp::new(params, prefix, cfg, pred_horizon, action_dim, cond_dim, rng)?)
            }
            DenoiserArch::Unet1d => {
                Denoiser::Unet1d(Unet1d::new(params, prefix, cfg, pred_horizon, action_dim, cond_dim, rng)?)
            }
        })
    }
}

impl<F: Scalar> NoisePredictor<F> for Denoiser {
    type Cache = DenoiserCache<F>;

    fn forward(
        &self,
        params: &ParamStore<F>,
        noisy: &NdArray<F>,
        steps: &[usize],
        cond: &NdArray<F>,
    ) -> Result<(NdArray<F>, Self::Cache)> {
        match self {
            Denoiser::FilmMlp(m) => {
                let (y, c) = m.forward(params, noisy, steps, cond)?;
                Ok((y, DenoiserCache::FilmMlp(c)))
            }
            Denoiser::Unet1d(m) => {
                let (y, c) = m.forward(params, noisy, steps, cond)?;
                Ok((y, DenoiserCache::Unet1d(c)))
            }
        }
    }

    fn backward(
        &self,
        params: &mut ParamStore<F>,
        cache: Self::Cache,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        match (self, cache) {
            (Denoiser::FilmMlp(m), DenoiserCache::FilmMlp(c)) => m.backward(params, c, grad_out),
            (Denoiser::Unet1d(m), DenoiserCache::Unet1d(c)) => m.backward(params, c, grad_out),
            _ => Err(Error::Internal("denoiser cache from a different architecture".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, training_loss, DiffusionBatch, ScheduleKind};
    use crate::nncore::gradcheck;
    use crate::rng::rng_from_seed;

    fn tiny(arch: DenoiserArch) -> DenoiserConfig {
        DenoiserConfig {
            arch,
            hidden: vec![4, 6],
            time_embed_dim: 4,
            groupnorm_groups: 2,
            kernel: 3,
        }
    }

    fn build<F: Scalar>(arch: DenoiserArch, seed: u64) -> (Denoiser, ParamStore<F>) {
        let mut rng = rng_from_seed(seed);
        let mut p = ParamStore::new();
        let d = Denoiser::new(&mut p, "den", &tiny(arch), 4, 2, 3, &mut rng).unwrap();
        (d, p)
    }

    const ARCHS: [DenoiserArch; 2] = [DenoiserArch::FilmMlp, DenoiserArch::Unet1d];

    #[test]
    fn zero_output_and_shape_at_init() {
        for arch in ARCHS {
            let (d, p) = build::<f32>(arch, 0);
            let mut rng = rng_from_seed(1);
            let x = NdArray::randn([3, 4, 2], &mut rng);
            let c = NdArray::randn([3, 3], &mut rng);
            let (y, _) = d.forward(&p, &x, &[0, 5, 99], &c).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| *v == 0.0), "{arch:?}");
        }
    }

    #[test]
    fn wrong_shape_is_dimension_error() {
        for arch in ARCHS {
            let (d, p) = build::<f32>(arch, 0);
            let x = NdArray::zeros([2, 3, 2]);
            let c = NdArray::zeros([2, 3]);
            assert!(matches!(d.forward(&p, &x, &[0, 1], &c), Err(Error::Dimension { .. })));
        }
    }

    #[test]
    fn unet_rejects_indivisible_horizon() {
        let mut rng = rng_from_seed(0);
        let mut p = ParamStore::<f32>::new();
        let cfg = DenoiserConfig::new(DenoiserArch::Unet1d, vec![8, 8, 8]);
        let err = Denoiser::new(&mut p, "den", &cfg, 6, 2, 3, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn full_denoiser_gradcheck() {
        for arch in ARCHS {
            for seed in 0..5 {
                let (d, mut p) = build::<f64>(arch, seed);
                let mut rng = rng_from_seed(100 + seed);
                // Push the zero-initialized head away from zero so every layer gets gradient.
                for (name, e) in p.iter_mut() {
                    if name.starts_with("den.out") {
                        e.value = NdArray::randn(e.value.shape().to_vec(), &mut rng);
                    }
                }
                let x = NdArray::<f64>::randn([2, 4, 2], &mut rng);
                let c = NdArray::<f64>::randn([2, 3], &mut rng);
                let proj = NdArray::<f64>::randn([2, 4, 2], &mut rng);
                let steps = [3, 17];
                let err = gradcheck(&mut p, 400, 1e-5, &mut rng, |p| {
                    let (y, cache) = d.forward(p, &x, &steps, &c)?;
                    let loss: f64 = y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
                    d.backward(p, cache, &proj)?;
                    Ok(loss)
                })
                .unwrap();
                assert!(err <= 1e-5, "{arch:?} seed {seed}: {err}");

                // Conditioning gradient against central differences.
                let (_, cache) = d.forward(&p, &x, &steps, &c).unwrap();
                let gc = d.backward(&mut p, cache, &proj).unwrap();
                let f = |c: &NdArray<f64>| -> f64 {
                    let (y, _) = d.forward(&p, &x, &steps, c).unwrap();
                    y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
                };
                for i in 0..c.len() {
                    let (mut hi, mut lo) = (c.clone(), c.clone());
                    hi.data_mut()[i] += 1e-5;
                    lo.data_mut()[i] -= 1e-5;
                    let numeric = (f(&hi) - f(&lo)) / 2e-5;
                    let rel = crate::nncore::relative_error(gc.data()[i], numeric);
                    assert!(rel <= 1e-5, "{arch:?} cond {i}: {rel}");
                }
            }
        }
    }

    #[test]
    fn initial_loss_is_noise_energy() {
        let sched = make_schedule(100, ScheduleKind::Cosine, 1e-4, 0.02).unwrap();
        for arch in ARCHS {
            let (d, mut p) = build::<f32>(arch, 3);
            let mut rng = rng_from_seed(4);
            let clean = NdArray::<f32>::zeros([256, 4, 2]);
            let cond = NdArray::randn([256, 3], &mut rng);
            let batch = DiffusionBatch::draw(clean, cond, &sched, &mut rng);
            let energy: f64 =
                batch.noise.data().iter().map(|e| (*e as f64).powi(2)).sum::<f64>() / batch.noise.len() as f64;
            let out = training_loss(&d, &mut p, &batch, &sched).unwrap();
            assert!((out.loss as f64 - energy).abs() < 1e-5);
            assert!((out.loss - 1.0).abs() < 0.05, "{arch:?}: {}", out.loss);
        }
    }
}
