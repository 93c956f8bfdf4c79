//! Named parameter sets and their binding onto a [`Graph`].

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Which sub-network a parameter belongs to. The optimizer uses a separate
/// learning rate for [`ParamGroup::Encoder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    ViewBlocks,
    RayBlocks,
    RgbHead,
    VolumetricHead,
    ArDecoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Encoder,
        ParamGroup::ViewBlocks,
        ParamGroup::RayBlocks,
        ParamGroup::RgbHead,
        ParamGroup::VolumetricHead,
        ParamGroup::ArDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::ViewBlocks => "view_blocks",
            ParamGroup::RayBlocks => "ray_blocks",
            ParamGroup::RgbHead => "rgb_head",
            ParamGroup::VolumetricHead => "volumetric_head",
            ParamGroup::ArDecoder => "ar_decoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
}

/// Ordered, named parameter set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, group, value });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Places every parameter on `g` as a leaf.
    pub fn bind(&self, g: &mut Graph<T>, requires_grad: bool) -> Binding<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), requires_grad))
            .collect();
        Binding {
            vars,
            index: &self.index,
        }
    }

    /// Names existing graph nodes, one per parameter in store order.
    pub fn bind_vars(&self, vars: &[Var]) -> Result<Binding<'_>> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} nodes for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        Ok(Binding {
            vars: vars.to_vec(),
            index: &self.index,
        })
    }

    /// `(name, value)` pairs in store order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Reads accumulated leaf gradients back in parameter order; unused
    /// parameters get zeros.
    pub fn collect_grads(&self, g: &Graph<T>, binding: &Binding<'_>) -> Vec<Vec<T>> {
        self.params
            .iter()
            .zip(&binding.vars)
            .map(|(p, v)| {
                g.grad(*v)
                    .map_or_else(|| vec![T::zero(); p.value.numel()], <[T]>::to_vec)
            })
            .collect()
    }
}

/// Parameter name → graph leaf, valid for one graph.
pub struct Binding<'a> {
    vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl Binding<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Xavier-uniform `[fan_in, fan_out]` weight.
pub fn xavier<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    xavier_shaped(&[fan_in, fan_out], fan_in, fan_out, rng)
}

pub fn xavier_shaped<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect();
    Tensor::new(shape.to_vec(), data).expect("xavier shape")
}

/// Registers `{prefix}.w` (Xavier) and `{prefix}.b` (zeros).
pub fn add_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    group: ParamGroup,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert(format!("{prefix}.w"), group, xavier(fan_in, fan_out, rng))?;
    store.insert(format!("{prefix}.b"), group, Tensor::zeros(&[fan_out]))
}

/// Registers `{prefix}.gamma` (ones) and `{prefix}.beta` (zeros).
pub fn add_layernorm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, group: ParamGroup, dim: usize) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), group, Tensor::full(&[dim], T::one()))?;
    store.insert(format!("{prefix}.beta"), group, Tensor::zeros(&[dim]))
}

pub fn linear<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, prefix: &str, x: Var) -> Result<Var> {
    let w = b.get(&format!("{prefix}.w"))?;
    let bias = b.get(&format!("{prefix}.b"))?;
    Ok(g.linear(x, w, bias)?)
}

pub const LAYERNORM_EPS: f64 = 1e-5;

pub fn layernorm<T: Scalar>(g: &mut Graph<T>, b: &Binding<'_>, prefix: &str, x: Var) -> Result<Var> {
    let gamma = b.get(&format!("{prefix}.gamma"))?;
    let beta = b.get(&format!("{prefix}.beta"))?;
    Ok(g.layernorm(x, gamma, beta, T::of(LAYERNORM_EPS))?)
}
