use std::collections::HashMap;

use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Gradient buffers keyed by parameter.
pub type Grads<F> = Vec<(ParamId, Vec<F>)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<(String, Tensor<F>)>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, mut t: Tensor<F>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        t.requires_grad = true;
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), t));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.entries.iter().enumerate().map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Register a parameter on a graph.
    pub fn var<'p>(&'p self, g: &mut Graph<'p, F>, id: ParamId) -> Var {
        g.param(id.0, self.get(id))
    }

    pub fn zero_grads(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }

    /// Collect gradients of every parameter leaf reached by `g.backward`.
    pub fn collect_grads(g: &Graph<'_, F>) -> Grads<F> {
        g.param_grads()
            .into_iter()
            .filter_map(|(k, gr)| gr.map(|gr| (ParamId(k), gr.to_vec())))
            .collect()
    }

    pub fn accumulate_grads(&mut self, grads: Grads<F>) {
        for (id, gr) in grads {
            self.get_mut(id).accumulate_grad(&gr);
        }
    }

    /// Convert every tensor to another precision (names and order kept).
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        let mut out = ParamStore::new();
        for (name, t) in &self.entries {
            let data = t.data().iter().map(|x| G::from_f64_lossy(x.as_f64())).collect();
            let mut nt = Tensor::new(t.shape(), data).expect("same shape");
            nt.requires_grad = t.requires_grad;
            out.by_name.insert(name.clone(), out.entries.len());
            out.entries.push((name.clone(), nt));
        }
        out
    }
}
