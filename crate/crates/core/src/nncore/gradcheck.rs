use rand::seq::index::sample;

use super::{DType, NdArray, ParamStore, Scalar};
use crate::rng::Rng;
use crate::{Error, Result};

/// Denominator floor of [`relative_error`]. Below this magnitude the
/// comparison degrades gracefully to an absolute error scaled by the floor.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADCHECK_ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic gradient produced by `loss` against central finite
/// differences `(f(θ+h) − f(θ−h)) / 2h` on up to `probes` randomly chosen
/// scalar coordinates of `params`, returning the largest relative error.
///
/// `loss` must evaluate the scalar objective and accumulate its gradient
/// into `params`; gradients are zeroed before every call. Only `f64` stores
/// are accepted. On return the store holds the analytic gradient.
pub fn gradcheck<F, L>(
    params: &mut ParamStore<F>,
    probes: usize,
    h: f64,
    rng: &mut Rng,
    mut loss: L,
) -> Result<f64>
where
    F: Scalar,
    L: FnMut(&mut ParamStore<F>) -> Result<F>,
{
    if F::DTYPE != DType::F64 {
        return Err(Error::Precision(
            "finite-difference checks require f64 parameters".into(),
        ));
    }
    params.zero_grad();
    loss(params)?;
    let analytic: Vec<NdArray<F>> = params
        .iter()
        .map(|(_, p)| p.grad.clone().expect("zeroed above"))
        .collect();

    let sizes: Vec<usize> = params.iter().map(|(_, p)| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let coords: Vec<usize> = if probes >= total {
        (0..total).collect()
    } else {
        let mut c = sample(rng, total, probes).into_vec();
        c.sort_unstable();
        c
    };

    let ids: Vec<_> = params.iter().map(|(n, _)| n.to_string()).collect();
    let mut worst = 0.0f64;
    for flat in coords {
        let (mut entry, mut offset) = (0, flat);
        while offset >= sizes[entry] {
            offset -= sizes[entry];
            entry += 1;
        }
        let id = params.id(&ids[entry]).expect("name from this store");
        let original = params.value(id).data()[offset];

        params.value_mut(id).data_mut()[offset] = original + F::of(h);
        params.zero_grad();
        let plus = loss(params)?.as_f64();
        params.value_mut(id).data_mut()[offset] = original - F::of(h);
        params.zero_grad();
        let minus = loss(params)?.as_f64();
        params.value_mut(id).data_mut()[offset] = original;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[entry].data()[offset].as_f64();
        worst = worst.max(relative_error(a, numeric));
    }

    for ((_, p), g) in params.iter_mut().zip(analytic) {
        p.grad = Some(g);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{linear, linear_backward};
    use crate::rng::rng_from_seed;

    #[test]
    fn rejects_f32() {
        let mut s = ParamStore::<f32>::new();
        s.add("x", NdArray::zeros([1])).unwrap();
        let mut rng = rng_from_seed(0);
        let err = gradcheck(&mut s, 1, 1e-5, &mut rng, |_| Ok(0.0)).unwrap_err();
        assert!(matches!(err, Error::Precision(_)));
    }

    #[test]
    fn empty_store_is_zero() {
        let mut s = ParamStore::<f64>::new();
        let mut rng = rng_from_seed(0);
        assert_eq!(gradcheck(&mut s, 10, 1e-5, &mut rng, |_| Ok(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn detects_flipped_sign() {
        let mut rng = rng_from_seed(3);
        let mut s = ParamStore::<f64>::new();
        let x = s.add("x", NdArray::randn([3, 4], &mut rng)).unwrap();
        let w = s.add("w", NdArray::randn([2, 4], &mut rng)).unwrap();
        let b = s.add("b", NdArray::randn([2], &mut rng)).unwrap();
        let proj = NdArray::<f64>::randn([3, 2], &mut rng);
        let err = gradcheck(&mut s, 1000, 1e-5, &mut rng, |p| {
            let out = linear(p.value(x), p.value(w), p.value(b))?;
            let loss = out.data().iter().zip(proj.data()).map(|(a, r)| a * r).sum();
            let g = linear_backward(p.value(x), p.value(w), &proj)?;
            p.accumulate(x, &g.input)?;
            p.accumulate(w, &g.weight.map(|v| -v))?;
            p.accumulate(b, &g.bias)?;
            Ok(loss)
        })
        .unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn leaves_analytic_gradient_in_store() {
        let mut s = ParamStore::<f64>::new();
        let x = s.add("x", NdArray::full([2], 3.0)).unwrap();
        let mut rng = rng_from_seed(0);
        // loss = Σ x²
        let err = gradcheck(&mut s, 2, 1e-5, &mut rng, |p| {
            let g = p.value(x).map(|v| 2.0 * v);
            p.accumulate(x, &g)?;
            Ok(p.value(x).data().iter().map(|v| v * v).sum())
        })
        .unwrap();
        assert!(err < 1e-8);
        assert_eq!(s.grad(x).unwrap().data(), &[6.0, 6.0]);
    }
}
