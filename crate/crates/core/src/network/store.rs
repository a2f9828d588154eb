use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Graph, Scalar, Tensor, Var};

/// Named, insertion-ordered learnable tensors. Names are dotted paths such
/// as `enc1.lgfi.sa.q.pw.w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    /// Records every parameter as a differentiable leaf of `graph`.
    pub fn bind(&self, graph: &Graph<T>) -> Bound {
        self.bind_with(graph, true)
    }

    /// Records every parameter as a constant: no gradient flows into them.
    pub fn bind_frozen(&self, graph: &Graph<T>) -> Bound {
        self.bind_with(graph, false)
    }

    fn bind_with(&self, graph: &Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    graph.leaf(t.clone())
                } else {
                    graph.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters of a [`ParamStore`] recorded on one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Wraps externally created variables, e.g. leaves made by a gradient
    /// checker.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Bound {
            vars: vars.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients in store order.
    pub fn collect_grads<T: Scalar>(&self, grads: &mut Gradients<T>) -> Result<ParamGrads<T>> {
        let mut out = IndexMap::with_capacity(self.vars.len());
        for (name, var) in &self.vars {
            let g = grads
                .take(*var)
                .ok_or_else(|| Error::MissingGradient(name.clone()))?;
            out.insert(name.clone(), g);
        }
        Ok(ParamGrads { grads: out })
    }
}

/// Gradient slots aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T: Scalar> {
    grads: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor<T>) {
        self.grads.insert(name.into(), g);
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Tensor<T>)>) -> Self {
        ParamGrads {
            grads: pairs.into_iter().collect(),
        }
    }

    /// Global L2 norm.
    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        let c = T::of(c);
        for t in self.grads.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v * c);
        }
    }
}
