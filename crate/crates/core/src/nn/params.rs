use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Ordered name → tensor map. Insertion order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    index: HashMap<String, usize>,
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t.with_requires_grad(true));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every parameter on `g` as a gradient-tracking leaf.
    pub fn bind(&self, g: &mut Graph<F>) -> Bound<'_, F> {
        self.bind_with(g, true)
    }

    /// Records every parameter as a constant (no gradients flow back).
    pub fn bind_frozen(&self, g: &mut Graph<F>) -> Bound<'_, F> {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph<F>, track: bool) -> Bound<'_, F> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                let t = Tensor::from_parts(t.shape().to_vec(), t.data().to_vec());
                if track {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Bound { store: self, vars }
    }

    /// Copies gradients from a backward pass into the parameter grad slots,
    /// accumulating onto any existing gradient.
    pub fn accumulate_grads(&mut self, g: &Graph<F>, vars: &[Var]) {
        for (t, &v) in self.tensors.iter_mut().zip(vars) {
            if let Some(grad) = g.grad(v) {
                t.accumulate_grad(grad);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Hash over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (name, t) in self.iter() {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_f64().unwrap_or(f64::NAN).to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Bitwise equality of all values (gradients ignored).
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.shape() == b.shape()
                    && a.data()
                        .iter()
                        .zip(b.data())
                        .all(|(x, y)| x.to_f64().map(f64::to_bits) == y.to_f64().map(f64::to_bits))
            })
    }
}

/// Parameters recorded on a graph, addressable by name.
pub struct Bound<'a, F: Element> {
    store: &'a ParamStore<F>,
    vars: Vec<Var>,
}

impl<F: Element> Bound<'_, F> {
    pub fn var(&self, name: &str) -> Var {
        match self.store.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("network has no parameter `{name}`"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn into_vars(self) -> Vec<Var> {
        self.vars
    }
}

/// He-normal initialisation, sampled in f64 so both precisions agree.
pub(crate) fn he_normal<F: Element>(rng: &mut impl Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<F> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| F::from_f64_lossy(normal.sample(rng)))
}
