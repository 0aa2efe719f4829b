use serde::{Deserialize, Serialize};

use super::{gemm, Init, NdArray, ParamId, ParamStore, Scalar};
use crate::rng::Rng;
use crate::{Error, Result};

/// Stride and symmetric zero padding, shared by every spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        ConvSpec { stride, padding }
    }

    /// Output extent along one axis; fails when it would be empty.
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Config("convolution stride must be ≥ 1".into()));
        }
        let span = len + 2 * self.padding;
        if kernel == 0 || span < kernel {
            return Err(Error::Config(format!(
                "convolution output would be empty: length {len}, padding {}, kernel {kernel}",
                self.padding
            )));
        }
        Ok((span - kernel) / self.stride + 1)
    }
}

#[derive(Clone, Debug)]
pub struct ConvGrads<F> {
    pub input: NdArray<F>,
    pub kernel: NdArray<F>,
    pub bias: NdArray<F>,
}

/// Output positions `o` in `0..out_len` whose input index
/// `o·stride + k − pad` lies in `0..in_len`, as a half-open range.
fn valid_range(out_len: usize, stride: usize, k: usize, pad: usize, in_len: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if in_len + pad <= k { 0 } else { ((in_len - 1 + pad - k) / stride + 1).min(out_len) };
    (lo.min(hi), hi)
}

/// Geometry of a 2D cross-correlation; 1D is the `h = kh = 1` special case.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    channels: usize,
    out_channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_area(&self) -> usize {
        self.oh * self.ow
    }

    fn in_area(&self) -> usize {
        self.h * self.w
    }

    fn im2col<F: Scalar>(&self, x: &[F], cols: &mut [F]) {
        let area = self.out_area();
        for c in 0..self.channels {
            let xc = &x[c * self.in_area()..(c + 1) * self.in_area()];
            for ki in 0..self.kh {
                let (ilo, ihi) = valid_range(self.oh, self.sh, ki, self.ph, self.h);
                for kj in 0..self.kw {
                    let (jlo, jhi) = valid_range(self.ow, self.sw, kj, self.pw, self.w);
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * area..(row + 1) * area];
                    dst.fill(F::zero());
                    for oi in ilo..ihi {
                        let src = &xc[(oi * self.sh + ki - self.ph) * self.w..];
                        let out = &mut dst[oi * self.ow..(oi + 1) * self.ow];
                        let j0 = jlo * self.sw + kj - self.pw;
                        if self.sw == 1 {
                            out[jlo..jhi].copy_from_slice(&src[j0..j0 + jhi - jlo]);
                        } else {
                            for (k, v) in out[jlo..jhi].iter_mut().enumerate() {
                                *v = src[j0 + k * self.sw];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<F: Scalar>(&self, cols: &[F], gx: &mut [F]) {
        let area = self.out_area();
        let in_area = self.in_area();
        for c in 0..self.channels {
            let gc = &mut gx[c * in_area..(c + 1) * in_area];
            for ki in 0..self.kh {
                let (ilo, ihi) = valid_range(self.oh, self.sh, ki, self.ph, self.h);
                for kj in 0..self.kw {
                    let (jlo, jhi) = valid_range(self.ow, self.sw, kj, self.pw, self.w);
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * area..(row + 1) * area];
                    for oi in ilo..ihi {
                        let dst = &mut gc[(oi * self.sh + ki - self.ph) * self.w..];
                        let j0 = jlo * self.sw + kj - self.pw;
                        for (k, v) in src[oi * self.ow + jlo..oi * self.ow + jhi].iter().enumerate() {
                            dst[j0 + k * self.sw] += *v;
                        }
                    }
                }
            }
        }
    }

    fn forward<F: Scalar>(&self, x: &[F], kernel: &[F], bias: &[F]) -> Vec<F> {
        let area = self.out_area();
        let mut out = vec![F::zero(); self.batch * self.out_channels * area];
        let mut cols = vec![F::zero(); self.patch() * area];
        for b in 0..self.batch {
            let xb = &x[b * self.channels * self.in_area()..(b + 1) * self.channels * self.in_area()];
            self.im2col(xb, &mut cols);
            let ob = &mut out[b * self.out_channels * area..(b + 1) * self.out_channels * area];
            for (o, row) in ob.chunks_exact_mut(area).enumerate() {
                row.fill(bias[o]);
            }
            gemm(
                self.out_channels,
                self.patch(),
                area,
                kernel,
                false,
                &cols,
                false,
                F::one(),
                ob,
            );
        }
        out
    }

    fn backward<F: Scalar>(&self, x: &[F], kernel: &[F], gy: &[F]) -> (Vec<F>, Vec<F>, Vec<F>) {
        let area = self.out_area();
        let in_len = self.channels * self.in_area();
        let mut gx = vec![F::zero(); self.batch * in_len];
        let mut gk = vec![F::zero(); self.out_channels * self.patch()];
        let mut gb = vec![F::zero(); self.out_channels];
        let mut cols = vec![F::zero(); self.patch() * area];
        let mut gcols = vec![F::zero(); self.patch() * area];
        for b in 0..self.batch {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let gyb = &gy[b * self.out_channels * area..(b + 1) * self.out_channels * area];
            for (o, row) in gyb.chunks_exact(area).enumerate() {
                gb[o] += row.iter().copied().sum::<F>();
            }
            self.im2col(xb, &mut cols);
            gemm(
                self.out_channels,
                area,
                self.patch(),
                gyb,
                false,
                &cols,
                true,
                F::one(),
                &mut gk,
            );
            gemm(
                self.patch(),
                self.out_channels,
                area,
                kernel,
                true,
                gyb,
                false,
                F::zero(),
                &mut gcols,
            );
            self.col2im(&gcols, &mut gx[b * in_len..(b + 1) * in_len]);
        }
        (gx, gk, gb)
    }
}

fn geometry_1d<F: Scalar>(
    op: &'static str,
    input: &NdArray<F>,
    kernel: &NdArray<F>,
    spec: ConvSpec,
) -> Result<Geometry> {
    let [batch, channels, len] = input.dims(op, "input")?;
    let [out_channels, kc, k] = kernel.dims(op, "kernel")?;
    if kc != channels {
        return Err(Error::dim(
            op,
            format!("input axis 1 has {channels} channels but kernel axis 1 expects {kc}"),
        ));
    }
    let ow = spec.output_len(len, k)?;
    Ok(Geometry {
        batch,
        channels,
        out_channels,
        h: 1,
        w: len,
        kh: 1,
        kw: k,
        sh: 1,
        sw: spec.stride,
        ph: 0,
        pw: spec.padding,
        oh: 1,
        ow,
    })
}

fn geometry_2d<F: Scalar>(
    op: &'static str,
    input: &NdArray<F>,
    kernel: &NdArray<F>,
    spec: ConvSpec,
) -> Result<Geometry> {
    let [batch, channels, h, w] = input.dims(op, "input")?;
    let [out_channels, kc, kh, kw] = kernel.dims(op, "kernel")?;
    if kc != channels {
        return Err(Error::dim(
            op,
            format!("input axis 1 has {channels} channels but kernel axis 1 expects {kc}"),
        ));
    }
    let oh = spec.output_len(h, kh)?;
    let ow = spec.output_len(w, kw)?;
    Ok(Geometry {
        batch,
        channels,
        out_channels,
        h,
        w,
        kh,
        kw,
        sh: spec.stride,
        sw: spec.stride,
        ph: spec.padding,
        pw: spec.padding,
        oh,
        ow,
    })
}

fn check_bias<F: Scalar>(op: &'static str, bias: &NdArray<F>, out_channels: usize) -> Result<()> {
    let [n] = bias.dims(op, "bias")?;
    if n != out_channels {
        return Err(Error::dim(
            op,
            format!("bias axis 0 has {n} entries but kernel axis 0 has {out_channels}"),
        ));
    }
    Ok(())
}

/// 1D cross-correlation over `[B, C, T]`, producing `[B, O, T']`.
pub fn conv1d<F: Scalar>(
    input: &NdArray<F>,
    kernel: &NdArray<F>,
    bias: &NdArray<F>,
    spec: ConvSpec,
) -> Result<NdArray<F>> {
    let g = geometry_1d("conv1d", input, kernel, spec)?;
    check_bias("conv1d", bias, g.out_channels)?;
    let out = g.forward(input.data(), kernel.data(), bias.data());
    NdArray::new([g.batch, g.out_channels, g.ow], out)
}

pub fn conv1d_backward<F: Scalar>(
    input: &NdArray<F>,
    kernel: &NdArray<F>,
    spec: ConvSpec,
    grad_out: &NdArray<F>,
) -> Result<ConvGrads<F>> {
    let g = geometry_1d("conv1d_backward", input, kernel, spec)?;
    grad_out.expect_shape("conv1d_backward", &[g.batch, g.out_channels, g.ow])?;
    let (gx, gk, gb) = g.backward(input.data(), kernel.data(), grad_out.data());
    Ok(ConvGrads {
        input: NdArray::new(input.shape().to_vec(), gx)?,
        kernel: NdArray::new(kernel.shape().to_vec(), gk)?,
        bias: NdArray::new([g.out_channels], gb)?,
    })
}

/// 2D cross-correlation over `[B, C, H, W]`, producing `[B, O, H', W']`.
pub fn conv2d<F: Scalar>(
    input: &NdArray<F>,
    kernel: &NdArray<F>,
    bias: &NdArray<F>,
    spec: ConvSpec,
) -> Result<NdArray<F>> {
    let g = geometry_2d("conv2d", input, kernel, spec)?;
    check_bias("conv2d", bias, g.out_channels)?;
    let out = g.forward(input.data(), kernel.data(), bias.data());
    NdArray::new([g.batch, g.out_channels, g.oh, g.ow], out)
}

pub fn conv2d_backward<F: Scalar>(
    input: &NdArray<F>,
    kernel: &NdArray<F>,
    spec: ConvSpec,
    grad_out: &NdArray<F>,
) -> Result<ConvGrads<F>> {
    let g = geometry_2d("conv2d_backward", input, kernel, spec)?;
    grad_out.expect_shape("conv2d_backward", &[g.batch, g.out_channels, g.oh, g.ow])?;
    let (gx, gk, gb) = g.backward(input.data(), kernel.data(), grad_out.data());
    Ok(ConvGrads {
        input: NdArray::new(input.shape().to_vec(), gx)?,
        kernel: NdArray::new(kernel.shape().to_vec(), gk)?,
        bias: NdArray::new([g.out_channels], gb)?,
    })
}

/// Nearest-neighbour ×2 upsampling along the last axis of `[B, C, T]`.
pub fn upsample1d<F: Scalar>(input: &NdArray<F>) -> Result<NdArray<F>> {
    let [b, c, t] = input.dims("upsample1d", "input")?;
    let mut out = Vec::with_capacity(b * c * t * 2);
    for &v in input.data() {
        out.push(v);
        out.push(v);
    }
    NdArray::new([b, c, 2 * t], out)
}

pub fn upsample1d_backward<F: Scalar>(grad_out: &NdArray<F>) -> Result<NdArray<F>> {
    let [b, c, t2] = grad_out.dims("upsample1d_backward", "grad")?;
    if t2 % 2 != 0 {
        return Err(Error::dim("upsample1d_backward", "odd temporal length"));
    }
    let out = grad_out.data().chunks_exact(2).map(|p| p[0] + p[1]).collect();
    NdArray::new([b, c, t2 / 2], out)
}

/// 1D convolution layer with parameters in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: ConvSpec,
        init: Init,
        rng: &mut Rng,
    ) -> Result<Self> {
        let k = init.build(&[out_ch, in_ch, kernel], rng);
        let kernel = params.add(format!("{name}.kernel"), k)?;
        let bias = params.add(format!("{name}.bias"), NdArray::zeros([out_ch]))?;
        Ok(Conv1d { kernel, bias, spec })
    }

    pub fn forward<F: Scalar>(&self, params: &ParamStore<F>, x: &NdArray<F>) -> Result<NdArray<F>> {
        conv1d(x, params.value(self.kernel), params.value(self.bias), self.spec)
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        x: &NdArray<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let g = conv1d_backward(x, params.value(self.kernel), self.spec, grad_out)?;
        params.accumulate(self.kernel, &g.kernel)?;
        params.accumulate(self.bias, &g.bias)?;
        Ok(g.input)
    }
}

/// 2D convolution layer with parameters in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv2d {
    pub fn new<F: Scalar>(
        params: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        spec: ConvSpec,
        rng: &mut Rng,
    ) -> Result<Self> {
        let init = Init::KaimingUniform {
            fan_in: in_ch * kernel * kernel,
        };
        let k = init.build(&[out_ch, in_ch, kernel, kernel], rng);
        let kernel = params.add(format!("{name}.kernel"), k)?;
        let bias = params.add(format!("{name}.bias"), NdArray::zeros([out_ch]))?;
        Ok(Conv2d { kernel, bias, spec })
    }

    pub fn forward<F: Scalar>(&self, params: &ParamStore<F>, x: &NdArray<F>) -> Result<NdArray<F>> {
        conv2d(x, params.value(self.kernel), params.value(self.bias), self.spec)
    }

    pub fn backward<F: Scalar>(
        &self,
        params: &mut ParamStore<F>,
        x: &NdArray<F>,
        grad_out: &NdArray<F>,
    ) -> Result<NdArray<F>> {
        let g = conv2d_backward(x, params.value(self.kernel), self.spec, grad_out)?;
        params.accumulate(self.kernel, &g.kernel)?;
        params.accumulate(self.bias, &g.bias)?;
        Ok(g.input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::gradcheck;
    use crate::rng::rng_from_seed;

    fn arr(shape: &[usize], v: &[f64]) -> NdArray<f64> {
        NdArray::from_f64(shape.to_vec(), v).unwrap()
    }

    fn geometry(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Geometry> {
        let spec = ConvSpec::new(stride, pad);
        let (oh, ow) = (spec.output_len(h, k).ok()?, spec.output_len(w, k).ok()?);
        Some(Geometry { batch: 1, channels: 2, out_channels: 1, h, w, kh: k, kw: k, sh: stride, sw: stride, ph: pad, pw: pad, oh, ow })
    }

    #[test]
    fn im2col_and_col2im_match_direct_indexing() {
        for (h, w, k, stride, pad) in (1..6).flat_map(|h| {
            (1..5).flat_map(move |k| (1..4).flat_map(move |s| (0..3).map(move |p| (h, h + 1, k, s, p))))
        }) {
            let Some(g) = geometry(h, w, k, stride, pad) else { continue };
            let x: Vec<f64> = (0..g.channels * h * w).map(|v| v as f64 + 1.0).collect();
            let mut cols = vec![f64::NAN; g.patch() * g.out_area()];
            g.im2col(&x, &mut cols);
            let mut gx = vec![0.0; x.len()];
            g.col2im(&cols, &mut gx);
            let mut want_gx = vec![0.0; x.len()];
            for c in 0..g.channels {
                for ki in 0..k {
                    for kj in 0..k {
                        for oi in 0..g.oh {
                            for oj in 0..g.ow {
                                let (ii, jj) = ((oi * stride + ki) as isize - pad as isize, (oj * stride + kj) as isize - pad as isize);
                                let inside = ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w;
                                let idx = (c * h + ii.max(0) as usize) * w + jj.max(0) as usize;
                                let v = if inside { x[idx] } else { 0.0 };
                                let row = (c * k + ki) * k + kj;
                                assert_eq!(cols[row * g.out_area() + oi * g.ow + oj], v, "{:?}", (h, w, k, stride, pad));
                                if inside {
                                    want_gx[idx] += v;
                                }
                            }
                        }
                    }
                }
            }
            assert_eq!(gx, want_gx, "{:?}", (h, w, k, stride, pad));
        }
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = arr(&[1, 1, 4], &[1.0, -2.0, 3.0, 0.5]);
        let out = conv1d(&x, &arr(&[1, 1, 1], &[1.0]), &arr(&[1], &[0.0]), ConvSpec::new(1, 0)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv1d_sliding_sum() {
        let x = arr(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let out = conv1d(&x, &arr(&[1, 1, 2], &[1.0, 1.0]), &arr(&[1], &[0.0]), ConvSpec::new(1, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2]);
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv1d_padding_and_stride() {
        let x = arr(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let out = conv1d(&x, &arr(&[1, 1, 3], &[1.0, 1.0, 1.0]), &arr(&[1], &[0.0]), ConvSpec::new(2, 1)).unwrap();
        // windows [0,1,2], [2,3,4]
        assert_eq!(out.data(), &[3.0, 9.0]);
    }

    #[test]
    fn empty_output_is_config_error() {
        let x = arr(&[1, 1, 2], &[1.0, 2.0]);
        let err = conv1d(&x, &arr(&[1, 1, 3], &[1.0; 3]), &arr(&[1], &[0.0]), ConvSpec::new(1, 0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn conv2d_identity_and_sum() {
        let x = arr(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let id = conv2d(&x, &arr(&[1, 1, 1, 1], &[1.0]), &arr(&[1], &[0.0]), ConvSpec::new(1, 0)).unwrap();
        assert_eq!(id, x);
        let sum = conv2d(&x, &arr(&[1, 1, 2, 2], &[1.0; 4]), &arr(&[1], &[0.0]), ConvSpec::new(1, 0)).unwrap();
        assert_eq!(sum.shape(), &[1, 1, 1, 1]);
        assert_eq!(sum.data(), &[10.0]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = arr(&[1, 2, 3], &[0.0; 6]);
        let err = conv1d(&x, &arr(&[1, 1, 1], &[1.0]), &arr(&[1], &[0.0]), ConvSpec::new(1, 0)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    fn check_conv1d(seed: u64, spec: ConvSpec) -> f64 {
        let mut rng = rng_from_seed(seed);
        let mut s = ParamStore::<f64>::new();
        let x = s.add("x", NdArray::randn([2, 3, 7], &mut rng)).unwrap();
        let k = s.add("k", NdArray::randn([4, 3, 3], &mut rng)).unwrap();
        let b = s.add("b", NdArray::randn([4], &mut rng)).unwrap();
        let t_out = spec.output_len(7, 3).unwrap();
        let proj = NdArray::<f64>::randn([2, 4, t_out], &mut rng);
        gradcheck(&mut s, 200, 1e-5, &mut rng, |p| {
            let y = conv1d(p.value(x), p.value(k), p.value(b), spec)?;
            let loss = y.data().iter().zip(proj.data()).map(|(a, r)| a * r).sum();
            let g = conv1d_backward(p.value(x), p.value(k), spec, &proj)?;
            p.accumulate(x, &g.input)?;
            p.accumulate(k, &g.kernel)?;
            p.accumulate(b, &g.bias)?;
            Ok(loss)
        })
        .unwrap()
    }

    #[test]
    fn conv1d_gradcheck() {
        for seed in 0..5 {
            for spec in [ConvSpec::new(1, 1), ConvSpec::new(2, 1), ConvSpec::new(1, 0)] {
                let err = check_conv1d(seed, spec);
                assert!(err <= 1e-6, "seed {seed} {spec:?}: {err}");
            }
        }
    }

    #[test]
    fn conv2d_gradcheck() {
        for seed in 0..5 {
            let mut rng = rng_from_seed(100 + seed);
            let spec = ConvSpec::new(2, 1);
            let mut s = ParamStore::<f64>::new();
            let x = s.add("x", NdArray::randn([2, 2, 5, 6], &mut rng)).unwrap();
            let k = s.add("k", NdArray::randn([3, 2, 3, 3], &mut rng)).unwrap();
            let b = s.add("b", NdArray::randn([3], &mut rng)).unwrap();
            let proj = NdArray::<f64>::randn([2, 3, 3, 3], &mut rng);
            let err = gradcheck(&mut s, 200, 1e-5, &mut rng, |p| {
                let y = conv2d(p.value(x), p.value(k), p.value(b), spec)?;
                let loss = y.data().iter().zip(proj.data()).map(|(a, r)| a * r).sum();
                let g = conv2d_backward(p.value(x), p.value(k), spec, &proj)?;
                p.accumulate(x, &g.input)?;
                p.accumulate(k, &g.kernel)?;
                p.accumulate(b, &g.bias)?;
                Ok(loss)
            })
            .unwrap();
            assert!(err <= 1e-6, "seed {seed}: {err}");
        }
    }

    #[test]
    fn upsample_backward_sums_pairs() {
        let x = arr(&[1, 1, 2], &[1.0, 2.0]);
        let up = upsample1d(&x).unwrap();
        assert_eq!(up.data(), &[1.0, 1.0, 2.0, 2.0]);
        let g = upsample1d_backward(&arr(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(g.data(), &[3.0, 7.0]);
    }
}
