use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::DemoStore;
use crate::envs::EnvKind;
use crate::nncore::NdArray;
use crate::policy::HorizonConfig;
use crate::rng::Rng;
use crate::{Error, Result};

/// Training example centred on one anchor step.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[T_o, H, W, 3]`.
    pub images: Option<NdArray<f32>>,
    /// `[T_o, S]`.
    pub states: NdArray<f32>,
    /// `[T_p, A]`.
    pub actions: NdArray<f32>,
    pub episode: usize,
    pub anchor: usize,
}

/// Observations `t−T_o+1 ..= t` and actions `t .. t+T_p`, clipped to the
/// anchor's episode and padded by replicating its first observation or its
/// last action.
pub fn sample_window(store: &DemoStore, anchor: usize, horizons: &HorizonConfig) -> Result<WindowSample> {
    let episode = store.episode_of(anchor)?;
    let range = store.episode_range(episode);
    let obs_rows: Vec<usize> = (0..horizons.obs)
        .map(|i| (anchor + i + 1).saturating_sub(horizons.obs).max(range.start))
        .collect();
    let act_rows: Vec<usize> = (0..horizons.pred)
        .map(|i| (anchor + i).min(range.end - 1))
        .collect();
    let gather = |a: &NdArray<f32>, rows: &[usize]| {
        let mut shape = a.shape().to_vec();
        shape[0] = rows.len();
        let data = rows.iter().flat_map(|&r| a.row(r).iter().copied()).collect();
        NdArray::new(shape, data)
    };
    Ok(WindowSample {
        images: store.images.as_ref().map(|i| gather(i, &obs_rows)).transpose()?,
        states: gather(&store.states, &obs_rows)?,
        actions: gather(&store.actions, &act_rows)?,
        episode,
        anchor,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Largest translation in pixels along each image axis.
    pub shift_max: usize,
    #[serde(default)]
    pub vflip_prob: f64,
    /// Reflection about the main diagonal; requires square frames.
    #[serde(default)]
    pub transpose_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            shift_max: 0,
            vflip_prob: 0.0,
            transpose_prob: 0.0,
        }
    }
}

impl AugmentConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.flip_prob) {
            v.push(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        if !(0.0..=1.0).contains(&self.vflip_prob) {
            v.push(format!("vflip_prob must lie in [0, 1], got {}", self.vflip_prob));
        }
        if !(0.0..=1.0).contains(&self.transpose_prob) {
            v.push(format!("transpose_prob must lie in [0, 1], got {}", self.transpose_prob));
        }
        v
    }
}

/// Mirrors every frame, state and action of a window horizontally.
pub fn flip_window(sample: &mut WindowSample, kind: EnvKind) {
    if let Some(img) = &mut sample.images {
        let w = img.shape()[2];
        for row in img.data_mut().chunks_exact_mut(w * 3) {
            for j in 0..w / 2 {
                for c in 0..3 {
                    row.swap(j * 3 + c, (w - 1 - j) * 3 + c);
                }
            }
        }
    }
    let s = sample.states.row_len();
    for row in sample.states.data_mut().chunks_exact_mut(s) {
        kind.flip_state(row);
    }
    let a = sample.actions.row_len();
    for row in sample.actions.data_mut().chunks_exact_mut(a) {
        kind.flip_action(row);
    }
}

/// Mirrors every frame, state and action of a window vertically.
pub fn vflip_window(sample: &mut WindowSample, kind: EnvKind) {
    if let Some(img) = &mut sample.images {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        for frame in img.data_mut().chunks_exact_mut(h * w * 3) {
            for i in 0..h / 2 {
                let (top, bottom) = frame.split_at_mut((h - 1 - i) * w * 3);
                top[i * w * 3..(i + 1) * w * 3].swap_with_slice(&mut bottom[..w * 3]);
            }
        }
    }
    let s = sample.states.row_len();
    for row in sample.states.data_mut().chunks_exact_mut(s) {
        kind.vflip_state(row);
    }
    let a = sample.actions.row_len();
    for row in sample.actions.data_mut().chunks_exact_mut(a) {
        kind.vflip_action(row);
    }
}

/// Reflects every frame, state and action of a window about the main
/// diagonal. Frames must be square.
pub fn transpose_window(sample: &mut WindowSample, kind: EnvKind) -> Result<()> {
    if let Some(img) = &mut sample.images {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if h != w {
            return Err(Error::Config(format!("transpose needs square frames, got {h}×{w}")));
        }
        for frame in img.data_mut().chunks_exact_mut(h * w * 3) {
            for i in 0..h {
                for j in i + 1..w {
                    for c in 0..3 {
                        frame.swap((i * w + j) * 3 + c, (j * w + i) * 3 + c);
                    }
                }
            }
        }
    }
    let s = sample.states.row_len();
    for row in sample.states.data_mut().chunks_exact_mut(s) {
        kind.transpose_state(row);
    }
    let a = sample.actions.row_len();
    for row in sample.actions.data_mut().chunks_exact_mut(a) {
        kind.transpose_action(row);
    }
    Ok(())
}

/// Translates every frame by the same `(dy, dx)`, replicating edge pixels.
pub fn shift_frames(images: &mut NdArray<f32>, dy: isize, dx: isize) {
    let (frames, h, w) = (images.shape()[0], images.shape()[1], images.shape()[2]);
    let src = images.data().to_vec();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let out = images.data_mut();
    for f in 0..frames {
        for i in 0..h {
            let si = clamp(i as isize - dy, h);
            for j in 0..w {
                let sj = clamp(j as isize - dx, w);
                let (o, s) = (((f * h + i) * w + j) * 3, ((f * h + si) * w + sj) * 3);
                out[o..o + 3].copy_from_slice(&src[s..s + 3]);
            }
        }
    }
}

/// Random horizontal flip, vertical flip and transpose (images, states and
/// actions together) and random translation (images only, identical across
/// the window). Always draws five values from `rng`, so the stream position
/// does not depend on the outcome.
pub fn augment(mut sample: WindowSample, rng: &mut Rng, cfg: &AugmentConfig, kind: EnvKind) -> Result<WindowSample> {
    if let Some(img) = &sample.images {
        if cfg.shift_max >= img.shape()[2] {
            return Err(Error::Config(format!(
                "shift_max {} must be below the image width {}",
                cfg.shift_max,
                img.shape()[2]
            )));
        }
    }
    let flip = rng.random::<f64>() < cfg.flip_prob;
    let s = cfg.shift_max as i64;
    let dy = rng.random_range(-s..=s) as isize;
    let dx = rng.random_range(-s..=s) as isize;
    let vflip = rng.random::<f64>() < cfg.vflip_prob;
    let transpose = rng.random::<f64>() < cfg.transpose_prob;
    if flip {
        flip_window(&mut sample, kind);
    }
    if vflip {
        vflip_window(&mut sample, kind);
    }
    if transpose {
        transpose_window(&mut sample, kind)?;
    }
    if let Some(img) = &mut sample.images {
        if dy != 0 || dx != 0 {
            shift_frames(img, dy, dx);
        }
    }
    Ok(sample)
}
