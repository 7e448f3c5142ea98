//! Named parameter tensors and their gradient buffers.
//!
//! Every learnable tensor in the model lives in a [`ParamSet`] under a
//! stable dotted name (for example `encoder.text_attn.h3.wq`). Graphs from
//! [`crate::autograd`] reference tensors by [`ParamId`] and write gradients
//! into a [`GradStore`] with identical layout, which is what the optimizer
//! and the checkpoint container consume.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

/// Index of one tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// An ordered, name-addressable collection of `f64` matrices.
///
/// Registration order is stable, so two models built from the same
/// configuration assign identical ids and names.
#[derive(Debug, Clone)]
pub struct ParamSet {
    tensors: Vec<Array2<f64>>,
    names: Vec<String>,
    by_name: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            names: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Register a tensor under `name`. Panics on duplicate names: parameter
    /// layout is fixed at model construction and never grows afterwards.
    pub fn register(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name: {name}"
        );
        let id = ParamId(self.tensors.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        id
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total number of scalar entries across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers mirroring a [`ParamSet`], one matrix per parameter.
#[derive(Debug, Clone)]
pub struct GradStore {
    grads: Vec<Array2<f64>>,
}

impl GradStore {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            grads: params
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn add(&mut self, id: ParamId, delta: ArrayView2<f64>) {
        self.grads[id.0] += &delta;
    }

    /// Scatter-add `delta` rows into the given rows of the tensor's gradient.
    pub fn add_rows(&mut self, id: ParamId, rows: &[usize], delta: ArrayView2<f64>) {
        debug_assert_eq!(rows.len(), delta.nrows());
        for (i, &r) in rows.iter().enumerate() {
            let mut dst = self.grads[id.0].row_mut(r);
            dst += &delta.row(i);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|v| v * c);
        }
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// L2 norm over every scalar gradient entry.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<f64>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn register_and_lookup() {
        let mut ps = ParamSet::new();
        let a = ps.register("a", array![[1.0, 2.0]]);
        let b = ps.register("b.c", Array2::zeros((2, 2)));
        assert_eq!(ps.lookup("a"), Some(a));
        assert_eq!(ps.lookup("b.c"), Some(b));
        assert_eq!(ps.lookup("missing"), None);
        assert_eq!(ps.name(b), "b.c");
        assert_eq!(ps.scalar_count(), 6);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_name_panics() {
        let mut ps = ParamSet::new();
        ps.register("x", Array2::zeros((1, 1)));
        ps.register("x", Array2::zeros((1, 1)));
    }

    #[test]
    fn grad_scatter_and_norm() {
        let mut ps = ParamSet::new();
        let id = ps.register("emb", Array2::zeros((4, 2)));
        let mut gs = GradStore::zeros_like(&ps);
        gs.add_rows(id, &[1, 3, 1], array![[1.0, 0.0], [0.0, 2.0], [1.0, 0.0]].view());
        assert_eq!(gs.get(id)[[1, 0]], 2.0);
        assert_eq!(gs.get(id)[[3, 1]], 2.0);
        assert_eq!(gs.get(id)[[0, 0]], 0.0);
        let norm = gs.global_norm();
        assert!((norm - (4.0_f64 + 4.0).sqrt()).abs() < 1e-12);
        gs.reset();
        assert_eq!(gs.global_norm(), 0.0);
    }
}
