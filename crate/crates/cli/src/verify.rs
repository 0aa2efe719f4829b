//! The self-check suite behind `dpolicy verify`.

use std::fmt;
use std::path::Path;

use dpolicy_core::data::{collect, sample_window, AugmentConfig, PdGains};
use dpolicy_core::diffusion::{
    add_noise, make_schedule, training_loss, DiffusionBatch, NoisePredictor, NoiseSchedule, ScheduleDescriptor,
    ScheduleKind,
};
use dpolicy_core::envs::{bfs_path, generate_maze, EnvConfig, EnvKind};
use dpolicy_core::nncore::{
    activation, activation_backward, conv1d, conv1d_backward, conv2d, conv2d_backward, ema_update, gradcheck,
    group_norm, group_norm_backward, linear, linear_backward, upsample1d, upsample1d_backward, Activation,
    ConvSpec, EmaState, LrSchedule, NdArray, OptimConfig, ParamStore,
};
use dpolicy_core::policy::{
    Denoiser, DenoiserArch, DenoiserConfig, Encoder, EncoderConfig, EncoderMode, HorizonConfig, ModelConfig,
    ModelShape, Normalizer, ObsBatch, PolicyBundle, TrainConfig, Trainer,
};
use dpolicy_core::rng::{normal, rng_from_seed};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const MUTATION_FLOOR: f64 = 1e-2;
const H: f64 = 1e-5;
const SEEDS: u64 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub threshold: f64,
    pub bound: Bound,
}

impl Check {
    fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            threshold,
            bound: Bound::AtMost,
        }
    }

    fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            threshold,
            bound: Bound::AtLeast,
        }
    }

    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.measured <= self.threshold,
            Bound::AtLeast => self.measured > self.threshold,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">",
        };
        write!(
            f,
            "{:<4} {:<40} measured {:.3e} {op} {:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Negates the analytic conv1d input gradient inside its gradcheck.
    pub flip_conv_sign: bool,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

type Run<T> = dpolicy_core::Result<T>;

fn dot(a: &NdArray<f64>, b: &NdArray<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn worst_over_seeds(mut f: impl FnMut(u64) -> Run<f64>) -> Run<f64> {
    (0..SEEDS).try_fold(0.0f64, |w, s| Ok(w.max(f(s)?)))
}

fn linear_check(seed: u64) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut s = ParamStore::<f64>::new();
    let x = s.add("x", NdArray::randn([3, 4], &mut rng))?;
    let w = s.add("w", NdArray::randn([2, 4], &mut rng))?;
    let b = s.add("b", NdArray::randn([2], &mut rng))?;
    let proj = NdArray::randn([3, 2], &mut rng);
    gradcheck(&mut s, 64, H, &mut rng, |p| {
        let y = linear(p.value(x), p.value(w), p.value(b))?;
        let g = linear_backward(p.value(x), p.value(w), &proj)?;
        p.accumulate(x, &g.input)?;
        p.accumulate(w, &g.weight)?;
        p.accumulate(b, &g.bias)?;
        Ok(dot(&y, &proj))
    })
}

fn conv1d_check(seed: u64, stride: usize, flip: bool) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let spec = ConvSpec::new(stride, 1);
    let mut s = ParamStore::<f64>::new();
    let x = s.add("x", NdArray::randn([2, 3, 8], &mut rng))?;
    let k = s.add("k", NdArray::randn([4, 3, 3], &mut rng))?;
    let b = s.add("b", NdArray::randn([4], &mut rng))?;
    let proj = NdArray::randn([2, 4, spec.output_len(8, 3)?], &mut rng);
    gradcheck(&mut s, 200, H, &mut rng, |p| {
        let y = conv1d(p.value(x), p.value(k), p.value(b), spec)?;
        let g = conv1d_backward(p.value(x), p.value(k), spec, &proj)?;
        let input = if flip { g.input.map(|v| -v) } else { g.input };
        p.accumulate(x, &input)?;
        p.accumulate(k, &g.kernel)?;
        p.accumulate(b, &g.bias)?;
        Ok(dot(&y, &proj))
    })
}

fn conv2d_check(seed: u64) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let spec = ConvSpec::new(2, 1);
    let mut s = ParamStore::<f64>::new();
    let x = s.add("x", NdArray::randn([2, 2, 5, 6], &mut rng))?;
    let k = s.add("k", NdArray::randn([3, 2, 3, 3], &mut rng))?;
    let b = s.add("b", NdArray::randn([3], &mut rng))?;
    let proj = NdArray::randn([2, 3, 3, 3], &mut rng);
    gradcheck(&mut s, 200, H, &mut rng, |p| {
        let y = conv2d(p.value(x), p.value(k), p.value(b), spec)?;
        let g = conv2d_backward(p.value(x), p.value(k), spec, &proj)?;
        p.accumulate(x, &g.input)?;
        p.accumulate(k, &g.kernel)?;
        p.accumulate(b, &g.bias)?;
        Ok(dot(&y, &proj))
    })
}

fn group_norm_check(seed: u64) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut s = ParamStore::<f64>::new();
    let x = s.add("x", NdArray::randn([2, 4, 5], &mut rng))?;
    let gain = s.add("gain", NdArray::randn([4], &mut rng))?;
    let shift = s.add("shift", NdArray::randn([4], &mut rng))?;
    let proj = NdArray::randn([2, 4, 5], &mut rng);
    gradcheck(&mut s, 200, H, &mut rng, |p| {
        let (y, cache) = group_norm(p.value(x), 2, p.value(gain), p.value(shift), 1e-5)?;
        let g = group_norm_backward(&cache, p.value(gain), &proj)?;
        p.accumulate(x, &g.input)?;
        p.accumulate(gain, &g.gain)?;
        p.accumulate(shift, &g.shift)?;
        Ok(dot(&y, &proj))
    })
}

fn activation_check(seed: u64, kind: Activation) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut s = ParamStore::<f64>::new();
    // keep relu inputs off the kink
    let x0 = NdArray::<f64>::randn([3, 5], &mut rng).map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
    let x = s.add("x", x0)?;
    let proj = NdArray::randn([3, 5], &mut rng);
    gradcheck(&mut s, 100, H, &mut rng, |p| {
        let y = activation(p.value(x), kind);
        p.accumulate(x, &activation_backward(p.value(x), &proj, kind)?)?;
        Ok(dot(&y, &proj))
    })
}

fn upsample_check(seed: u64) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut s = ParamStore::<f64>::new();
    let x = s.add("x", NdArray::randn([2, 3, 4], &mut rng))?;
    let proj = NdArray::randn([2, 3, 8], &mut rng);
    gradcheck(&mut s, 100, H, &mut rng, |p| {
        let y = upsample1d(p.value(x))?;
        p.accumulate(x, &upsample1d_backward(&proj)?)?;
        Ok(dot(&y, &proj))
    })
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        conv_channels: vec![2, 4],
        depth: 2,
        groupnorm_groups: 2,
        embed_dim: 3,
        visual_features: 3,
        state_hidden: 4,
        ..EncoderConfig::new(EncoderMode::Hybrid)
    }
}

fn encoder_check(seed: u64) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut p = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut p, "enc", &tiny_encoder(), 2, 3, Some([5, 6]), &mut rng)?;
    let obs = ObsBatch {
        images: Some(NdArray::randn([2, 2, 5, 6, 3], &mut rng)),
        states: Some(NdArray::randn([2, 2, 3], &mut rng)),
    };
    let proj = NdArray::randn([2, 3], &mut rng);
    gradcheck(&mut p, 300, H, &mut rng, |p| {
        let (c, cache) = enc.forward(p, &obs)?;
        enc.backward(p, cache, &proj)?;
        Ok(dot(&c, &proj))
    })
}

fn denoiser_check(seed: u64, arch: DenoiserArch) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut p = ParamStore::<f64>::new();
    let cfg = DenoiserConfig {
        time_embed_dim: 4,
        groupnorm_groups: 2,
        ..DenoiserConfig::new(arch, vec![4, 6])
    };
    let d = Denoiser::new(&mut p, "den", &cfg, 4, 2, 3, &mut rng)?;
    // The output layer starts at zero; randomize it so every layer sees gradient.
    for (name, e) in p.iter_mut() {
        if name.starts_with("den.out") {
            e.value = NdArray::randn(e.value.shape().to_vec(), &mut rng);
        }
    }
    let x = NdArray::randn([2, 4, 2], &mut rng);
    let c = NdArray::randn([2, 3], &mut rng);
    let proj = NdArray::randn([2, 4, 2], &mut rng);
    gradcheck(&mut p, 400, H, &mut rng, |p| {
        let (y, cache) = d.forward(p, &x, &[3, 17], &c)?;
        d.backward(p, cache, &proj)?;
        Ok(dot(&y, &proj))
    })
}

fn loss_check(seed: u64) -> Run<f64> {
    let mut rng = rng_from_seed(seed);
    let mut p = ParamStore::<f64>::new();
    let cfg = DenoiserConfig {
        time_embed_dim: 4,
        ..DenoiserConfig::new(DenoiserArch::FilmMlp, vec![5])
    };
    let d = Denoiser::new(&mut p, "den", &cfg, 3, 2, 2, &mut rng)?;
    for (name, e) in p.iter_mut() {
        if name.starts_with("den.out") {
            e.value = NdArray::randn(e.value.shape().to_vec(), &mut rng);
        }
    }
    let sched = make_schedule(20, ScheduleKind::Cosine, 1e-4, 0.02)?;
    let clean = NdArray::<f64>::randn([4, 3, 2], &mut rng).map(f64::tanh);
    let batch = DiffusionBatch::draw(clean, NdArray::randn([4, 2], &mut rng), &sched, &mut rng);
    gradcheck(&mut p, 200, H, &mut rng, |p| Ok(training_loss(&d, p, &batch, &sched)?.loss))
}

fn gradient_checks(opts: VerifyOptions, out: &mut Vec<Check>) -> Run<()> {
    let tol = GRADCHECK_TOL;
    out.push(Check::at_most("gradcheck linear", worst_over_seeds(linear_check)?, tol));
    out.push(Check::at_most(
        "gradcheck conv1d",
        worst_over_seeds(|s| Ok(conv1d_check(s, 1, opts.flip_conv_sign)?.max(conv1d_check(s, 2, opts.flip_conv_sign)?)))?,
        tol,
    ));
    out.push(Check::at_most("gradcheck conv2d", worst_over_seeds(conv2d_check)?, tol));
    out.push(Check::at_most("gradcheck group_norm", worst_over_seeds(group_norm_check)?, tol));
    out.push(Check::at_most(
        "gradcheck activations",
        worst_over_seeds(|s| Ok(activation_check(s, Activation::Relu)?.max(activation_check(s, Activation::Silu)?)))?,
        tol,
    ));
    out.push(Check::at_most("gradcheck upsample1d", worst_over_seeds(upsample_check)?, tol));
    out.push(Check::at_most("gradcheck encoder (hybrid)", worst_over_seeds(encoder_check)?, tol));
    out.push(Check::at_most(
        "gradcheck denoiser film_mlp",
        worst_over_seeds(|s| denoiser_check(s, DenoiserArch::FilmMlp))?,
        tol,
    ));
    out.push(Check::at_most(
        "gradcheck denoiser unet1d",
        worst_over_seeds(|s| denoiser_check(s, DenoiserArch::Unet1d))?,
        tol,
    ));
    out.push(Check::at_most("gradcheck diffusion loss", worst_over_seeds(loss_check)?, tol));
    out.push(Check::at_least("gradcheck detects sign flip", conv1d_check(0, 1, true)?, MUTATION_FLOOR));
    Ok(())
}

/// Number of violated schedule properties over every step count and kind.
fn schedule_violations() -> Run<f64> {
    let mut bad = 0usize;
    for k in [1usize, 10, 100, 1000] {
        for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            let s = make_schedule(k, kind, 1e-4, 0.02)?;
            bad += s.betas().iter().filter(|b| !(**b > 0.0 && **b < 1.0)).count();
            bad += s.alpha_bars().windows(2).filter(|w| w[1] >= w[0]).count();
            if kind == ScheduleKind::Linear {
                bad += usize::from(s.betas()[0] != 1e-4);
                bad += usize::from(k > 1 && s.betas()[k - 1] != 0.02);
            }
        }
    }
    Ok(bad as f64)
}

/// Relative deviation of the noised variance from 0.75 at ᾱ = 0.25.
fn noise_variance_error() -> Run<f64> {
    let sched = NoiseSchedule::from_betas(vec![0.75])?;
    let mut rng = rng_from_seed(7);
    let n = 10_000;
    let eps = NdArray::new([n], (0..n).map(|_| normal(&mut rng)).collect())?;
    let x = add_noise(&NdArray::<f64>::zeros([n]), &eps, 0, &sched)?;
    let mean = x.data().iter().sum::<f64>() / n as f64;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((var / 0.75 - 1.0).abs())
}

/// Largest absolute round-trip error over random vectors, one constant dimension included.
fn normalizer_round_trip() -> Run<f64> {
    let mut rng = rng_from_seed(3);
    let (n, a) = (10_000, 4);
    let data: Vec<f64> = (0..n * a)
        .map(|i| if i % a == 2 { 0.37 } else { 5.0 * normal(&mut rng) })
        .collect();
    let x = NdArray::new([n, a], data)?;
    let norm = Normalizer::fit(&x)?;
    let back = norm.denormalize(&norm.normalize(&x)?)?;
    Ok(x.data().iter().zip(back.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
}

/// Unsolvable or non-reproducible mazes over the fuzz grid.
fn maze_failures() -> Run<f64> {
    let mut bad = 0usize;
    for size in [5usize, 9, 15] {
        for seed in 0..1000u64 {
            let m = generate_maze(seed, size, size)?;
            bad += usize::from(bfs_path(&m, m.start, m.goal).is_none());
            bad += usize::from(generate_maze(seed, size, size)? != m);
        }
    }
    Ok(bad as f64)
}

/// Windows whose rows leave the anchor's episode or miss the padding rule.
fn window_failures() -> Run<f64> {
    let (store, _) = collect(&EnvConfig::new(EnvKind::Grid, 5, 30), 6, 11, &PdGains::default())?;
    let h = HorizonConfig { obs: 3, pred: 6, action: 2 };
    let mut bad = 0usize;
    for anchor in 0..store.len() {
        let w = sample_window(&store, anchor, &h)?;
        let ends: Vec<usize> = store.episode_ends.iter().map(|e| *e as usize).collect();
        let e = ends.iter().position(|end| anchor < *end).expect("anchor inside the store");
        let start = if e == 0 { 0 } else { ends[e - 1] };
        let last = ends[e] - 1;
        for i in 0..h.obs {
            let row = (anchor + i).checked_sub(h.obs - 1).map_or(start, |r| r.max(start));
            bad += usize::from(w.states.row(i) != store.states.row(row));
        }
        for i in 0..h.pred {
            bad += usize::from(w.actions.row(i) != store.actions.row((anchor + i).min(last)));
        }
        bad += usize::from(w.episode != e);
    }
    Ok(bad as f64)
}

fn hash_dir(root: &Path) -> std::io::Result<Vec<u8>> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(root).expect("under root").to_string_lossy().as_bytes());
        h.update(std::fs::read(&f)?);
    }
    Ok(h.finalize().to_vec())
}

/// 1 when two collections to disk hash differently, else 0.
fn store_hash_mismatch() -> CliResult<f64> {
    let cfg = EnvConfig::new(EnvKind::Point, 5, 60);
    let tmp = tempfile::tempdir()?;
    let mut hashes = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let (store, _) = collect(&cfg, 3, 21, &PdGains::default())?;
        store.save(&dir, false)?;
        hashes.push(hash_dir(&dir)?);
    }
    Ok(f64::from(u8::from(hashes[0] != hashes[1])))
}

/// 1 when two identical short training runs disagree on any loss, else 0.
fn training_loss_mismatch() -> Run<f64> {
    let env = EnvConfig::new(EnvKind::Grid, 5, 30);
    let (store, _) = collect(&env, 4, 5, &PdGains::default())?;
    let model = ModelConfig {
        encoder: EncoderConfig {
            embed_dim: 8,
            state_hidden: 8,
            ..EncoderConfig::new(EncoderMode::State)
        },
        denoiser: DenoiserConfig::new(DenoiserArch::FilmMlp, vec![16]),
        horizons: HorizonConfig::default(),
        schedule: ScheduleDescriptor {
            steps: 10,
            ..Default::default()
        },
    };
    let shape = ModelShape {
        state_dim: env.state_dim(),
        action_dim: env.action_dim(),
        image_hw: None,
    };
    let cfg = TrainConfig {
        batch_size: 4,
        steps: 5,
        optim: OptimConfig {
            lr_schedule: LrSchedule::Constant,
            ..Default::default()
        },
        ema_decay: 0.9,
        augment: AugmentConfig::default(),
    };
    let run = || -> Run<Vec<f64>> {
        let norm = Normalizer::fit(&store.actions)?;
        let bundle = PolicyBundle::init(&model, shape, norm, &mut rng_from_seed(1))?;
        let mut t = Trainer::new(bundle, cfg.clone(), 2)?;
        (0..cfg.steps).map(|_| t.step(&store)).collect()
    };
    let (a, b) = (run()?, run()?);
    Ok(f64::from(u8::from(a.iter().map(|v| v.to_bits()).ne(b.iter().map(|v| v.to_bits())))))
}

/// Distance of the EMA shadow from its closed form after ten updates.
fn ema_closed_form_error() -> Run<f64> {
    let mut p = ParamStore::<f64>::new();
    p.add("w", NdArray::full([3], 1.0))?;
    let mut ema = EmaState::zeros_like(&p, 0.75)?;
    for _ in 0..10 {
        ema_update(&mut ema, &p)?;
    }
    let want = 1.0 - 0.75f64.powi(10);
    Ok(ema.shadow["w"].data().iter().map(|v| (v - want).abs()).fold(0.0, f64::max))
}

pub fn run_checks(opts: VerifyOptions) -> CliResult<VerifyReport> {
    let mut checks = Vec::new();
    gradient_checks(opts, &mut checks)?;
    checks.push(Check::at_most("schedule invariant violations", schedule_violations()?, 0.0));
    checks.push(Check::at_most("noise variance rel. error at 0.25", noise_variance_error()?, 0.03));
    checks.push(Check::at_most("normalizer round trip abs. error", normalizer_round_trip()?, 1e-6));
    checks.push(Check::at_most("ema closed form abs. error", ema_closed_form_error()?, 1e-9));
    checks.push(Check::at_most("maze fuzz failures (3000 mazes)", maze_failures()?, 0.0));
    checks.push(Check::at_most("window padding violations", window_failures()?, 0.0));
    checks.push(Check::at_most("store hash mismatches", store_hash_mismatch()?, 0.0));
    checks.push(Check::at_most("training loss mismatches", training_loss_mismatch()?, 0.0));
    Ok(VerifyReport { checks })
}

/// Prints one line per check; any failure becomes a verification error.
pub fn cmd_verify(opts: VerifyOptions) -> CliResult<VerifyReport> {
    let report = run_checks(opts)?;
    for c in &report.checks {
        println!("{c}");
    }
    let failed = report.failures();
    if failed.is_empty() {
        println!("all {} checks passed", report.checks.len());
        Ok(report)
    } else {
        let names: Vec<&str> = failed.iter().map(|c| c.name.as_str()).collect();
        Err(CliError::Verification(names.join(", ")))
    }
}
