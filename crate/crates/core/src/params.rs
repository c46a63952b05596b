//! Named parameter storage and per-forward binding onto a [`Graph`].

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{DType, Graph, Tensor, Var};

/// Ordered map of named parameter tensors. Insertion order is the
/// serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    entries: IndexMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// Uniform in `[-bound, bound]`.
    pub fn init_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> Result<()> {
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        self.insert(name, t)
    }

    /// Fan-in scaled uniform init, `bound = gain * sqrt(3 / fan_in)`.
    pub fn init_fan_in<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<()> {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        self.init_uniform(name, shape, bound, rng)
    }

    pub fn init_const(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: f64,
    ) -> Result<()> {
        self.insert(name, Tensor::full(shape, value))
    }
}

/// One forward pass: a fresh graph plus the parameters bound into it so far.
///
/// Each parameter is recorded at most once per pass, so a parameter used in
/// several places accumulates a single summed gradient.
pub struct Forward<'p> {
    pub g: Graph,
    params: &'p Params,
    bound: IndexMap<String, Var>,
    frozen: Vec<String>,
}

impl<'p> Forward<'p> {
    pub fn new(params: &'p Params, dtype: DType) -> Self {
        Forward {
            g: Graph::new(dtype),
            params,
            bound: IndexMap::new(),
            frozen: Vec::new(),
        }
    }

    /// Continue building on an existing graph.
    pub fn with_graph(g: Graph, params: &'p Params) -> Self {
        Forward {
            g,
            params,
            bound: IndexMap::new(),
            frozen: Vec::new(),
        }
    }

    pub fn into_graph(self) -> Graph {
        self.g
    }

    /// Use `var` wherever parameter `name` is requested in this pass.
    pub fn bind(&mut self, name: impl Into<String>, var: Var) {
        self.bound.insert(name.into(), var);
    }

    /// Parameters whose name starts with `prefix` are bound as constants.
    pub fn freeze_prefix(&mut self, prefix: impl Into<String>) {
        self.frozen.push(prefix.into());
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self.params.get(name)?.clone();
        let trainable = !self.frozen.iter().any(|f| name.starts_with(f.as_str()));
        let v = if trainable {
            self.g.param(t)?
        } else {
            self.g.constant(t)?
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.bound.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Gradients for every bound trainable parameter after `backward`.
    pub fn grads(&self) -> IndexMap<String, Vec<f64>> {
        self.bound
            .iter()
            .filter_map(|(k, &v)| self.g.grad(v).map(|g| (k.clone(), g.to_vec())))
            .collect()
    }

    /// `x: [M, K]` times `{name}.w: [K, N]` plus `{name}.b: [N]`.
    pub fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add_row(y, b)
    }

    /// Position-wise projection of an `[H, W, C]` map with `{name}.w: [1, 1, C, C']`.
    pub fn conv1x1(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.w"))?;
        let b = self.p(&format!("{name}.b"))?;
        self.g.conv2d(x, w, Some(b), 1)
    }
}
