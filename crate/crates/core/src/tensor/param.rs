//! Named parameter storage for a model instance: learned tensors, batchnorm
//! running statistics and per-parameter trainable flags.

use super::{Elem, Tensor};
use crate::rng::CounterRng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Learned parameters take optimizer updates; running stats do not.
    pub fn is_learned(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Debug)]
pub struct Slot<E: Elem> {
    pub name: String,
    pub value: Tensor<E>,
    pub kind: ParamKind,
    pub trainable: bool,
    /// True for slots belonging to the classifier head (after the
    /// feature/classifier boundary).
    pub head: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Elem = f32> {
    slots: Vec<Slot<E>>,
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { slots: Vec::new() }
    }

    pub fn add(&mut self, name: String, value: Tensor<E>, kind: ParamKind, head: bool) -> usize {
        debug_assert!(
            !self.slots.iter().any(|s| s.name == name),
            "duplicate parameter name {name}"
        );
        self.slots.push(Slot { name, value, kind, trainable: kind.is_learned(), head });
        self.slots.len() - 1
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, idx: usize) -> &Slot<E> {
        &self.slots[idx]
    }

    pub fn slot_mut(&mut self, idx: usize) -> &mut Slot<E> {
        &mut self.slots[idx]
    }

    pub fn slots(&self) -> &[Slot<E>] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [Slot<E>] {
        &mut self.slots
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn by_name(&self, name: &str) -> Result<&Slot<E>> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::State(format!("unknown parameter {name}")))
    }

    /// Disjoint mutable access to two slots.
    pub fn two_mut(&mut self, i: usize, j: usize) -> (&mut Slot<E>, &mut Slot<E>) {
        assert_ne!(i, j);
        if i < j {
            let (a, b) = self.slots.split_at_mut(j);
            (&mut a[i], &mut b[0])
        } else {
            let (a, b) = self.slots.split_at_mut(i);
            (&mut b[0], &mut a[j])
        }
    }

    /// Total scalar count across learned parameters.
    pub fn learned_scalars(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.kind.is_learned())
            .map(|s| s.value.len())
            .sum()
    }

    pub fn cast<F: Elem>(&self) -> ParamStore<F> {
        ParamStore {
            slots: self
                .slots
                .iter()
                .map(|s| Slot {
                    name: s.name.clone(),
                    value: s.value.cast(),
                    kind: s.kind,
                    trainable: s.trainable,
                    head: s.head,
                })
                .collect(),
        }
    }
}

/// Kaiming-uniform fan-in initialization for a conv/linear weight:
/// U(−√(6/fan_in), +√(6/fan_in)).
pub fn kaiming_uniform<E: Elem>(shape: &[usize], fan_in: usize, rng: &mut CounterRng) -> Tensor<E> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| E::from_f64(rng.uniform(-bound, bound)))
}

/// Conv/linear bias init: U(−1/√fan_in, +1/√fan_in).
pub fn bias_uniform<E: Elem>(len: usize, fan_in: usize, rng: &mut CounterRng) -> Tensor<E> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(&[len], |_| E::from_f64(rng.uniform(-bound, bound)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = CounterRng::new(5, &["init", "w"]);
        let mut b = CounterRng::new(5, &["init", "w"]);
        let ta: Tensor<f32> = kaiming_uniform(&[8, 4, 3, 3], 36, &mut a);
        let tb: Tensor<f32> = kaiming_uniform(&[8, 4, 3, 3], 36, &mut b);
        assert_eq!(ta.data(), tb.data());
        let bound = (6.0f32 / 36.0).sqrt();
        assert!(ta.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn two_mut_is_disjoint() {
        let mut store: ParamStore<f32> = ParamStore::new();
        store.add("a".into(), Tensor::zeros(&[2]), ParamKind::RunningMean, false);
        store.add("b".into(), Tensor::zeros(&[2]), ParamKind::RunningVar, false);
        let (a, b) = store.two_mut(1, 0);
        a.value.data_mut()[0] = 1.0;
        b.value.data_mut()[0] = 2.0;
        assert_eq!(store.slot(1).value.data()[0], 1.0);
        assert_eq!(store.slot(0).value.data()[0], 2.0);
    }
}
