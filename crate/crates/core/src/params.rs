//! Named parameter storage.

use std::collections::BTreeMap;

use crate::error::{CoreError, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

/// Parameters keyed by hierarchical name (`"fusion.cgru.W1"`). Iteration is
/// in lexicographic name order, so flattening and checkpoints are stable
/// regardless of construction order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
    seed: u64,
}

impl ParameterStore {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(CoreError::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, Parameter { value, grad: None });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count, optionally restricted to names starting with `prefix`.
    pub fn num_scalars(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, p)| p.value.numel())
            .sum()
    }

    /// Records every parameter on `g` as a differentiable leaf.
    pub fn bind(&self, g: &Graph) -> Bound {
        self.bind_where(g, |_| true)
    }

    /// Like [`bind`](Self::bind), but parameters rejected by `trainable` are
    /// recorded as constants.
    pub fn bind_where(&self, g: &Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| {
                let v = if trainable(k) {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// All values concatenated in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .values()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params.values().map(|p| p.value.numel()).sum();
        if flat.len() != total {
            return Err(CoreError::Config(format!(
                "flat parameter vector has {} values, store holds {total}",
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params.values_mut() {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Adds `scale * grads[name]` into each parameter's accumulator.
    pub fn accumulate(&mut self, grads: &BTreeMap<String, Tensor>, scale: f64) {
        for (name, p) in self.params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let slot = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
    }

    /// Differences in names or shapes versus `other`, one line each.
    pub fn layout_diff(&self, other: &ParameterStore) -> Vec<String> {
        let mut out = Vec::new();
        for (k, p) in &self.params {
            match other.params.get(k) {
                None => out.push(format!("- {k} {:?}", p.value.shape())),
                Some(q) if q.value.shape() != p.value.shape() => out.push(format!(
                    "~ {k} {:?} -> {:?}",
                    p.value.shape(),
                    q.value.shape()
                )),
                _ => {}
            }
        }
        for (k, q) in &other.params {
            if !self.params.contains_key(k) {
                out.push(format!("+ {k} {:?}", q.value.shape()));
            }
        }
        out
    }
}

/// Graph handles for a bound [`ParameterStore`].
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::UnknownParameter(name.to_string()))
    }

    /// Gradients per parameter name; parameters the loss does not reach get zeros.
    pub fn collect(&self, g: &Graph, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let t = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&g.shape(v)));
                (k.clone(), t)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParameterStore::new(0);
        s.insert("b", Tensor::zeros(&[1])).unwrap();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2])).is_err());
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(s.num_scalars(""), 3);
        assert_eq!(s.num_scalars("a"), 2);
    }

    #[test]
    fn flatten_round_trips() {
        let mut s = ParameterStore::new(0);
        s.insert("x", Tensor::new(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
        s.insert("y", Tensor::new(&[1], vec![3.0]).unwrap()).unwrap();
        let flat = s.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
        s.assign_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(s.get("y").unwrap().data(), &[6.0]);
        assert!(s.assign_flat(&[1.0]).is_err());
    }

    #[test]
    fn layout_diff_reports_changes() {
        let mut a = ParameterStore::new(0);
        a.insert("w", Tensor::zeros(&[2])).unwrap();
        a.insert("gone", Tensor::zeros(&[1])).unwrap();
        let mut b = ParameterStore::new(0);
        b.insert("w", Tensor::zeros(&[3])).unwrap();
        b.insert("new", Tensor::zeros(&[1])).unwrap();
        let d = a.layout_diff(&b);
        assert_eq!(d.len(), 3, "{d:?}");
    }
}
