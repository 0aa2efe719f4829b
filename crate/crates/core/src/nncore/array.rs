use super::Scalar;
use crate::rng::{normal, Rng};
use crate::{Error, Result};

/// Shape-tagged, row-major array of floats.
///
/// The product of the shape always equals the data length. Construction via
/// [`NdArray::checked`] additionally rejects NaN and infinities.
#[derive(Clone, Debug, PartialEq)]
pub struct NdArray<F = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> NdArray<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "NdArray::new",
                format!(
                    "shape {shape:?} holds {expected} elements but {} were given",
                    data.len()
                ),
            ));
        }
        Ok(NdArray { shape, data })
    }

    /// Like [`NdArray::new`] but also rejects non-finite values.
    pub fn checked(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let arr = Self::new(shape, data)?;
        if !arr.is_finite() {
            return Err(Error::NonFinite("NdArray::checked".into()));
        }
        Ok(arr)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        NdArray {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: F) -> Self {
        NdArray {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::of(v)).collect())
    }

    /// I.i.d. standard normal entries.
    pub fn randn(shape: impl Into<Vec<usize>>, rng: &mut Rng) -> Self {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| F::of(normal(rng))).collect();
        NdArray { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn cast<G: Scalar>(&self) -> NdArray<G> {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        NdArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise in-place `self += other`.
    pub fn add_assign(&mut self, other: &NdArray<F>) -> Result<()> {
        self.expect_shape("add_assign", &other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: F) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Fails with a dimension error unless the shape equals `shape`.
    pub fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(
                op,
                format!("expected shape {shape:?}, got {:?}", self.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn dims<const N: usize>(&self, op: &'static str, what: &str) -> Result<[usize; N]> {
        if self.shape.len() != N {
            return Err(Error::dim(
                op,
                format!("{what} must have rank {N}, got shape {:?}", self.shape),
            ));
        }
        let mut out = [0; N];
        out.copy_from_slice(&self.shape);
        Ok(out)
    }

    /// Row `i` along the leading axis as a flat slice.
    pub fn row(&self, i: usize) -> &[F] {
        let stride = self.row_len();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let stride = self.row_len();
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Number of elements per index of the leading axis.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Concatenates arrays along the leading axis.
    pub fn stack_rows(parts: &[&NdArray<F>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("stack_rows", "nothing to stack"))?;
        let tail = &first.shape[1.min(first.shape.len())..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.is_empty() || &p.shape[1..] != tail {
                return Err(Error::dim(
                    "stack_rows",
                    format!("incompatible shapes {:?} and {:?}", first.shape, p.shape),
                ));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(NdArray { shape, data })
    }
}
