use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::ops::weight_norm;
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry<R> {
    name: String,
    value: Arc<Tensor<R>>,
}

/// Named trainable tensors. Values are shared with tapes through `Arc`, so
/// binding a parameter never copies it; updates copy-on-write.
#[derive(Clone, Debug)]
pub struct ParamStore<R> {
    entries: Vec<Entry<R>>,
    by_name: HashMap<String, ParamId>,
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<R>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Entry {
            name,
            value: Arc::new(value),
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor<R>> {
        self.entries[id.0].value.clone()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<R>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ParamId(i), e.name.as_str(), &*e.value))
    }

    /// Replace a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<R>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {} has shape {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    /// Mutable access to the values of `id` (copies if a tape still holds it).
    pub fn data_mut(&mut self, id: ParamId) -> &mut [R] {
        Arc::make_mut(&mut self.entries[id.0].value).data_mut()
    }

    /// Number of scalars across `ids`.
    pub fn scalar_count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.value(id).len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    value: Arc::new(e.value.cast()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Parameters viewed through one tape. A frozen binding yields constants,
/// so no gradient reaches its parameters.
pub struct Binding<'t, 's, R: Real> {
    pub tape: &'t Tape<R>,
    pub store: &'s ParamStore<R>,
    pub trainable: bool,
}

impl<R: Real> Clone for Binding<'_, '_, R> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<R: Real> Copy for Binding<'_, '_, R> {}

impl<'t, 's, R: Real> Binding<'t, 's, R> {
    pub fn new(tape: &'t Tape<R>, store: &'s ParamStore<R>, trainable: bool) -> Self {
        Binding {
            tape,
            store,
            trainable,
        }
    }

    pub fn frozen(self) -> Self {
        Binding {
            trainable: false,
            ..self
        }
    }

    pub fn param(&self, id: ParamId) -> Var<'t, R> {
        self.tape.param(self.store, id, self.trainable)
    }
}

/// Weight-normalized weight `W = g * v / ||v||` (norm per output channel,
/// the leading axis of `v`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WeightNormParam {
    pub v: ParamId,
    pub g: ParamId,
}

impl WeightNormParam {
    /// `v ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, `g = ||v||`, with `fan_in`
    /// the product of all but the leading dimension. `zero_scale` sets `g = 0`
    /// instead, making the effective weight zero while `v` stays well defined.
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        shape: &[usize],
        zero_scale: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = shape.iter().skip(1).product();
        Self::init_with_fan_in(store, name, shape, fan_in, zero_scale, rng)
    }

    /// As [`WeightNormParam::init`] with an explicit fan-in.
    pub fn init_with_fan_in<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        zero_scale: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || fan_in == 0 {
            return Err(Error::Shape(format!("bad weight shape {shape:?} for {name}")));
        }
        let bound = 1.0 / (fan_in as f64).sqrt();
        let v = Tensor::from_fn(shape.to_vec(), |_| R::of(rng.random_range(-bound..bound)));
        let g = if zero_scale {
            vec![R::zero(); shape[0]]
        } else {
            crate::autodiff::ops::row_norms(&v)
        };
        let g = Tensor::from_parts(vec![shape[0]], g);
        Ok(WeightNormParam {
            v: store.add(format!("{name}.v"), v)?,
            g: store.add(format!("{name}.g"), g)?,
        })
    }

    pub fn weight<'t, R: Real>(&self, bind: &Binding<'t, '_, R>) -> Result<Var<'t, R>> {
        weight_norm(&bind.param(self.v), &bind.param(self.g))
    }

    pub fn shape<'a, R: Real>(&self, store: &'a ParamStore<R>) -> &'a [usize] {
        store.value(self.v).shape()
    }
}

/// Bias vector drawn from the same fan-in bound as its weight.
pub fn init_bias<R: Real>(
    store: &mut ParamStore<R>,
    name: &str,
    len: usize,
    fan_in: usize,
    zero: bool,
    rng: &mut impl Rng,
) -> Result<ParamId> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let b = Tensor::from_fn(vec![len], |_| {
        if zero {
            R::zero()
        } else {
            R::of(rng.random_range(-bound..bound))
        }
    });
    store.add(format!("{name}.b"), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Tensor::zeros(vec![1])).unwrap();
        assert!(s.add("a", Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn initial_effective_weight_equals_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f64>::new();
        let p = WeightNormParam::init(&mut s, "w", &[4, 3, 5], false, &mut rng).unwrap();
        let tape = Tape::new();
        let bind = Binding::new(&tape, &s, true);
        let w = p.weight(&bind).unwrap();
        for (a, b) in w.value().data().iter().zip(s.value(p.v).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let bound = 1.0 / 15f64.sqrt();
        assert!(s.value(p.v).data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_scale_gives_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::<f32>::new();
        let p = WeightNormParam::init(&mut s, "w", &[2, 2, 1], true, &mut rng).unwrap();
        let tape = Tape::new();
        let w = p.weight(&Binding::new(&tape, &s, true)).unwrap();
        assert!(w.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_binding_gives_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("x", Tensor::full(vec![2], 1.0)).unwrap();
        let tape = Tape::new();
        let bind = Binding::new(&tape, &s, true).frozen();
        let loss = bind.param(id).square().sum();
        let grads = tape.backward(&loss).unwrap();
        assert!(grads.param(id).is_none());
    }

    #[test]
    fn set_checks_shape() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("x", Tensor::zeros(vec![2])).unwrap();
        assert!(s.set(id, Tensor::zeros(vec![3])).is_err());
        s.data_mut(id)[1] = 4.0;
        assert_eq!(s.value(id).data(), &[0.0, 4.0]);
        let c: ParamStore<f32> = s.cast();
        assert_eq!(c.value(c.id("x").unwrap()).data(), &[0.0f32, 4.0]);
    }
}
