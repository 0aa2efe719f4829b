use indexmap::IndexMap;

use super::{NdArray, ParamStore, Scalar};
use crate::{Error, Result};

/// Exponential moving average of a [`ParamStore`]'s values.
#[derive(Clone, Debug)]
pub struct EmaState<F> {
    pub shadow: IndexMap<String, NdArray<F>>,
    pub decay: f64,
}

impl<F: Scalar> EmaState<F> {
    /// Shadow initialized as a copy of the current values.
    pub fn new(params: &ParamStore<F>, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        Ok(EmaState {
            shadow: params.values(),
            decay,
        })
    }

    /// Shadow initialized to zeros with the parameters' shapes.
    pub fn zeros_like(params: &ParamStore<F>, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        let shadow = params
            .iter()
            .map(|(n, p)| (n.to_string(), NdArray::zeros(p.value.shape().to_vec())))
            .collect();
        Ok(EmaState { shadow, decay })
    }

    /// A copy of `params` whose values are replaced by the shadow.
    pub fn apply_to(&self, params: &ParamStore<F>) -> Result<ParamStore<F>> {
        let mut out = params.clone();
        out.load_values(&self.shadow)?;
        Ok(out)
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::Config(format!("EMA decay must lie in [0, 1), got {decay}")));
    }
    Ok(())
}

/// `shadow ← λ·shadow + (1 − λ)·value`, elementwise.
pub fn ema_update<F: Scalar>(ema: &mut EmaState<F>, params: &ParamStore<F>) -> Result<()> {
    if ema.shadow.len() != params.len() {
        return Err(Error::State(format!(
            "EMA tracks {} tensors but the store has {}",
            ema.shadow.len(),
            params.len()
        )));
    }
    let lambda = F::of(ema.decay);
    let rest = F::one() - lambda;
    for ((sname, shadow), (pname, p)) in ema.shadow.iter_mut().zip(params.iter()) {
        if sname != pname || shadow.shape() != p.value.shape() {
            return Err(Error::State(format!(
                "EMA entry `{sname}` {:?} does not mirror parameter `{pname}` {:?}",
                shadow.shape(),
                p.value.shape()
            )));
        }
        for (s, &v) in shadow.data_mut().iter_mut().zip(p.value.data()) {
            *s = lambda * *s + rest * v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("a", NdArray::full([2], 1.0)).unwrap();
        s
    }

    #[test]
    fn single_update_from_zero() {
        let p = ones();
        let mut ema = EmaState::zeros_like(&p, 0.9).unwrap();
        ema_update(&mut ema, &p).unwrap();
        assert!((ema.shadow["a"].data()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn fixed_point() {
        let p = ones();
        let mut ema = EmaState::new(&p, 0.9).unwrap();
        ema_update(&mut ema, &p).unwrap();
        assert_eq!(ema.shadow["a"].data(), &[1.0, 1.0]);
    }

    #[test]
    fn geometric_closed_form() {
        let p = ones();
        let mut ema = EmaState::zeros_like(&p, 0.75).unwrap();
        for _ in 0..10 {
            ema_update(&mut ema, &p).unwrap();
        }
        let want = 1.0 - 0.75f64.powi(10);
        assert!((ema.shadow["a"].data()[0] - want).abs() < 1e-15);
        assert!((want - 0.9436865).abs() < 1e-7);
    }

    #[test]
    fn mismatched_store_rejected() {
        let p = ones();
        let mut ema = EmaState::new(&p, 0.5).unwrap();
        let mut other = ParamStore::<f64>::new();
        other.add("a", NdArray::zeros([3])).unwrap();
        assert!(ema_update(&mut ema, &other).is_err());
    }
}
