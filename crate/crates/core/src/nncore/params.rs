use indexmap::IndexMap;

use super::{NdArray, Scalar};
use crate::{Error, Result};

/// Handle to an entry of a [`ParamStore`]. Only valid for the store (or a
/// structural clone of it) that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient and AdamW moments.
#[derive(Clone, Debug)]
pub struct Param<F> {
    pub value: NdArray<F>,
    /// `None` until a backward pass or [`ParamStore::zero_grad`] populates it.
    pub grad: Option<NdArray<F>>,
    pub adam_m: NdArray<F>,
    pub adam_v: NdArray<F>,
}

/// Ordered collection of named parameters. Iteration follows insertion order.
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    entries: IndexMap<String, Param<F>>,
    step_count: u64,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: IndexMap::new(),
            step_count: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: NdArray<F>) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let shape = value.shape().to_vec();
        let (idx, _) = self.entries.insert_full(
            name,
            Param {
                value,
                grad: None,
                adam_m: NdArray::zeros(shape.clone()),
                adam_v: NdArray::zeros(shape),
            },
        );
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries.get_index(id.0).expect("valid id").0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn set_step_count(&mut self, step: u64) {
        self.step_count = step;
    }

    pub fn entry(&self, id: ParamId) -> &Param<F> {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &NdArray<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut NdArray<F> {
        &mut self.entries[id.0].value
    }

    pub fn get(&self, name: &str) -> Option<&Param<F>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<F>> {
        self.entries.get_mut(name)
    }

    pub fn grad(&self, id: ParamId) -> Option<&NdArray<F>> {
        self.entries[id.0].grad.as_ref()
    }

    /// Gradient buffer for `id`, allocated as zeros on first use.
    pub fn grad_buffer(&mut self, id: ParamId) -> &mut NdArray<F> {
        let p = &mut self.entries[id.0];
        p.grad
            .get_or_insert_with(|| NdArray::zeros(p.value.shape().to_vec()))
    }

    /// Adds `g` into the gradient of `id`.
    pub fn accumulate(&mut self, id: ParamId, g: &NdArray<F>) -> Result<()> {
        let shape = self.entries[id.0].value.shape().to_vec();
        if g.shape() != shape.as_slice() {
            return Err(Error::dim(
                "accumulate",
                format!(
                    "gradient for `{}` has shape {:?}, parameter has {:?}",
                    self.name(id),
                    g.shape(),
                    shape
                ),
            ));
        }
        self.grad_buffer(id).add_assign(g)
    }

    /// Sets every gradient to zero, allocating missing ones.
    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            match &mut p.grad {
                Some(g) => g.fill(F::zero()),
                None => p.grad = Some(NdArray::zeros(p.value.shape().to_vec())),
            }
        }
    }

    /// Drops all gradient buffers.
    pub fn clear_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<F>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<F>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Converts values, moments and gradients to another precision.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    Param {
                        value: p.value.cast(),
                        grad: p.grad.as_ref().map(|g| g.cast()),
                        adam_m: p.adam_m.cast(),
                        adam_v: p.adam_v.cast(),
                    },
                )
            })
            .collect();
        ParamStore {
            entries,
            step_count: self.step_count,
        }
    }

    /// Overwrites values by name; every entry must be present with a
    /// matching shape.
    pub fn load_values(&mut self, values: &IndexMap<String, NdArray<F>>) -> Result<()> {
        for (name, p) in self.entries.iter_mut() {
            let v = values.get(name).ok_or_else(|| Error::Format {
                what: "parameter set",
                detail: format!("missing tensor `{name}`"),
            })?;
            if v.shape() != p.value.shape() {
                return Err(Error::dim(
                    "load_values",
                    format!(
                        "`{name}` stored as {:?}, model expects {:?}",
                        v.shape(),
                        p.value.shape()
                    ),
                ));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn values(&self) -> IndexMap<String, NdArray<F>> {
        self.entries
            .iter()
            .map(|(k, p)| (k.clone(), p.value.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_insertion_order() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add("b", NdArray::zeros([2])).unwrap();
        let b = s.add("a", NdArray::zeros([3])).unwrap();
        assert_eq!(a.index(), 0);
        assert_eq!(b.index(), 1);
        let names: Vec<_> = s.iter().map(|(n, _)| n.to_string()).collect();
        assert_eq!(names, ["b", "a"]);
        assert!(s.add("a", NdArray::zeros([1])).is_err());
    }

    #[test]
    fn accumulate_checks_shape() {
        let mut s = ParamStore::<f32>::new();
        let a = s.add("w", NdArray::zeros([2])).unwrap();
        s.accumulate(a, &NdArray::full([2], 1.0)).unwrap();
        s.accumulate(a, &NdArray::full([2], 2.0)).unwrap();
        assert_eq!(s.grad(a).unwrap().data(), &[3.0, 3.0]);
        assert!(s.accumulate(a, &NdArray::zeros([3])).is_err());
    }
}
