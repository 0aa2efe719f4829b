use serde::{Deserialize, Serialize};

use crate::nncore::{NdArray, Scalar};
use crate::{Error, Result};

/// Ranges narrower than this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-8;

/// Per-dimension min/max map of actions onto [−1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Min and max of every column of `[N, A]` actions.
    pub fn fit<F: Scalar>(actions: &NdArray<F>) -> Result<Self> {
        let [n, dims] = actions.dims("fit_normalizer", "actions")?;
        if n == 0 {
            return Err(Error::EmptyDataset("cannot fit a normalizer to zero actions".into()));
        }
        let mut min = vec![f64::INFINITY; dims];
        let mut max = vec![f64::NEG_INFINITY; dims];
        for row in actions.data().chunks_exact(dims) {
            for (i, v) in row.iter().enumerate() {
                let v = v.as_f64();
                if !v.is_finite() {
                    return Err(Error::NonFinite("normalizer input".into()));
                }
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Ok(Normalizer { min, max })
    }

    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.iter().zip(&max).any(|(a, b)| !(a <= b)) {
            return Err(Error::Config("normalizer needs min ≤ max in every dimension".into()));
        }
        Ok(Normalizer { min, max })
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn is_degenerate(&self, i: usize) -> bool {
        self.max[i] - self.min[i] < DEGENERATE_RANGE
    }

    fn check<F: Scalar>(&self, a: &NdArray<F>) -> Result<usize> {
        let last = a.shape().last().copied().unwrap_or(0);
        if last != self.dims() {
            return Err(Error::dim(
                "normalize",
                format!("last axis has {last} entries but the normalizer has {}", self.dims()),
            ));
        }
        Ok(last)
    }

    /// `2·(a − min)/(max − min) − 1`; constant dimensions map to 0.
    pub fn normalize<F: Scalar>(&self, a: &NdArray<F>) -> Result<NdArray<F>> {
        let dims = self.check(a)?;
        let mut out = a.clone();
        for row in out.data_mut().chunks_exact_mut(dims) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = if self.is_degenerate(i) {
                    F::zero()
                } else {
                    F::of(2.0 * (v.as_f64() - self.min[i]) / (self.max[i] - self.min[i]) - 1.0)
                };
            }
        }
        Ok(out)
    }

    /// Inverse of [`Normalizer::normalize`]; constant dimensions map to min.
    pub fn denormalize<F: Scalar>(&self, a: &NdArray<F>) -> Result<NdArray<F>> {
        let dims = self.check(a)?;
        let mut out = a.clone();
        for row in out.data_mut().chunks_exact_mut(dims) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = if self.is_degenerate(i) {
                    F::of(self.min[i])
                } else {
                    F::of((v.as_f64() + 1.0) / 2.0 * (self.max[i] - self.min[i]) + self.min[i])
                };
            }
        }
        Ok(out)
    }

    /// True when every row of `[N, A]` lies inside the fitted box.
    pub fn covers<F: Scalar>(&self, a: &NdArray<F>) -> Result<bool> {
        let dims = self.check(a)?;
        Ok(a.data().chunks_exact(dims).all(|row| {
            row.iter()
                .enumerate()
                .all(|(i, v)| (self.min[i]..=self.max[i]).contains(&v.as_f64()))
        }))
    }
}
