use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Window,
    Packet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: Group,
    pub weight_decay: f64,
}

/// Named parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
    #[serde(skip)]
    index: BTreeMap<String, ParamId>,
}

/// Per-group learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub window: f64,
    pub packet: f64,
}

impl LearningRates {
    pub fn of(&self, g: Group) -> f64 {
        match g {
            Group::Window => self.window,
            Group::Packet => self.packet,
        }
    }
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { window: 0.001, packet: 0.01 }
    }
}

/// Gradients aligned with a store's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn zeros(store: &ParamStore) -> Grads {
        Grads(store.params.iter().map(|p| Tensor::zeros(p.value.rows, p.value.cols)).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.0 {
            for v in &mut t.data {
                *v *= k;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flat_map(|t| t.data.iter()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: Group, weight_decay: f64) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, value, group, weight_decay });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).copied().ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    /// Mutable access to the values; shapes must not change.
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value.data
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total scalar count, optionally restricted to one group.
    pub fn n_scalars(&self, group: Option<Group>) -> usize {
        self.params.iter().filter(|p| group.is_none_or(|g| p.group == g)).map(|p| p.value.len()).sum()
    }

    /// Θ ← Θ − η_g (∇ + wd·Θ).
    pub fn sgd_step(&mut self, grads: &Grads, lr: &LearningRates) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            let eta = lr.of(p.group);
            for (v, gv) in p.value.data.iter_mut().zip(&g.data) {
                *v -= eta * (gv + p.weight_decay * *v);
            }
        }
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for (i, p) in self.params.iter().enumerate() {
            if self.index.insert(p.name.clone(), ParamId(i)).is_some() {
                return Err(Error::DuplicateParam(p.name.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(1.0), Group::Packet, 0.0).unwrap();
        assert_eq!(s.add("w", Tensor::scalar(1.0), Group::Packet, 0.0), Err(Error::DuplicateParam("w".into())));
    }

    #[test]
    fn two_group_step() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::scalar(1.0), Group::Window, 0.0).unwrap();
        let p = s.add("p", Tensor::scalar(1.0), Group::Packet, 0.5).unwrap();
        let g = Grads(vec![Tensor::scalar(1.0), Tensor::scalar(1.0)]);
        s.sgd_step(&g, &LearningRates::default());
        assert!((s.value(w).data[0] - 0.999).abs() < 1e-15);
        assert!((s.value(p).data[0] - (1.0 - 0.01 * 1.5)).abs() < 1e-15);
    }
}
