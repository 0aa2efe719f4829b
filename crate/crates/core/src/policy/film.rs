use super::denoiser::{DenoiserConfig, StepCondCache, StepCondEmbedding};
use super::ops::{concat_cols, split_cols};
use crate::nncore::{
    activation, activation_backward, Activation, Init, Linear, NdArray, ParamStore, Scalar,
};
use crate::rng::Rng;
use crate::Result;

/// MLP over the flattened action sequence with FiLM modulation
/// `h ← silu((1 + γ) ⊙ (W h + b) + β)` per hidden layer, where `(γ, β)` are
/// linear in the joint step/conditioning embedding. The output layer starts
/// at zero.
#[derive(Clone, Debug)]
pub struct FilmMlp {
    embed: StepCondEmbedding,
    layers: Vec<Linear>,
    films: Vec<Linear>,
    out: Linear,
    pred_horizon: usize,
    action_dim: usize,
}

#[derive(Clone, Debug)]
pub struct FilmMlpCache<F> {
    embed: StepCondCache<F>,
    joint: NdArray<F>,
    inputs: Vec<NdArray<F>>,
    pre_film: Vec<NdArray<F>>,
    gamma: Vec<NdArray<F>>,
    modulated: Vec<NdArray<F>>,
    last: NdArray<F>,
}

impl FilmMlp {
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
        let mut width = pred_horizon * action_dim;
        let (mut layers, mut films) = (Vec::new(), Vec::new());
        for (i, &h) in cfg.hidden.iter().enumerate() {
            layers.push(Linear::new(params, &format!("{prefix}.layer{i}"), width, h, rng)?);
            films.push(Linear::new(params, &format!("{prefix}.film{i}"), embed.out_dim(), 2 * h, rng)?);
            width = h;
        }
        let out = Linear::with_init(params, &format!("{prefix}.out"), width, pred_horizon * action_dim, Init::Zeros, rng)?;
        Ok(FilmMlp {
            embed,
            layers,
            films,
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
    ) -> Result<(NdArray<F>, FilmMlpCache<F>)> {
        let batch = steps.len();
        noisy.expect_shape("film_mlp", &[batch, self.pred_horizon, self.action_dim])?;
        let (joint, embed) = self.embed.forward(params, steps, cond)?;
        let mut h = noisy.clone().reshape([batch, self.pred_horizon * self.action_dim])?;
        let (mut inputs, mut pre_film, mut gammas, mut modulated) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (layer, film) in self.layers.iter().zip(&self.films) {
            let z = layer.forward(params, &h)?;
            let width = z.row_len();
            let fb = film.forward(params, &joint)?;
            let mut parts = split_cols(&fb, &[width, width])?;
            let beta = parts.pop().expect("two parts");
            let gamma = parts.pop().expect("two parts");
            let mut u = z.clone();
            for ((u, g), b) in u.data_mut().iter_mut().zip(gamma.data()).zip(beta.data()) {
                *u = (F::one() + *g) * *u + *b;
            }
            inputs.push(std::mem::replace(&mut h, activation(&u, Activation::Silu)));
            pre_film.push(z);
            gammas.push(gamma);
            modulated.push(u);
        }
        let y = self.out.forward(params, &h)?;
        let y = y.reshape([batch, self.pred_horizon, self.action_dim])?;
        Ok((
            y,
            FilmMlpCache {
                embed,
                joint,
                inputs,
                pre_film,
                gamma: gammas,
                modulated,
                last: h,
            },
        ))
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        cache: FilmMlpCache<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let batch = cache.joint.shape()[0];
        let g = grad_out.clone().reshape([batch, self.pred_horizon * self.action_dim])?;
        let mut g_h = self.out.backward(params, &cache.last, &g)?;
        let mut g_joint = NdArray::zeros(cache.joint.shape().to_vec());
        for i in (0..self.layers.len()).rev() {
            let g_u = activation_backward(&cache.modulated[i], &g_h, Activation::Silu)?;
            let (z, gamma) = (&cache.pre_film[i], &cache.gamma[i]);
            let mut g_z = g_u.clone();
            let mut g_gamma = g_u.clone();
            for (((gz, gg), zv), gv) in g_z
                .data_mut()
                .iter_mut()
                .zip(g_gamma.data_mut())
                .zip(z.data())
                .zip(gamma.data())
            {
                *gz *= F::one() + *gv ;
                *gg *= *zv;
            }
            let g_fb = concat_cols(&[&g_gamma, &g_u])?;
            g_joint.add_assign(&self.films[i].backward(params, &cache.joint, &g_fb)?)?;
            g_h = self.layers[i].backward(params, &cache.inputs[i], &g_z)?;
        }
        self.embed.backward(params, &cache.embed, &g_joint)
    }
}
