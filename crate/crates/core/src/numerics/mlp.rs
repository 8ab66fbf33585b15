//! Multilayer perceptrons with named output heads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::autodiff::{Graph, Var};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Named, ordered collection of learnable matrices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::validation(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.values().map(Matrix::len).sum()
    }

    /// Register every tensor on `g` as a differentiable leaf.
    pub fn register(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }

    /// Register every tensor on `g` as a constant.
    pub fn register_constant(&self, g: &mut Graph) -> ParamVars {
        ParamVars {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), g.constant(v.clone())))
                .collect(),
        }
    }
}

/// Graph handles for a registered [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not registered"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Softplus,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "softplus" => Ok(Self::Softplus),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Softplus => "softplus",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadTransform {
    Identity,
    Softplus,
    Softmax,
    LogSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub width: usize,
    pub transform: HeadTransform,
}

impl HeadSpec {
    pub fn new(name: &str, width: usize, transform: HeadTransform) -> Self {
        Self {
            name: name.to_string(),
            width,
            transform,
        }
    }
}

/// Architecture of a perceptron: a trunk of hidden layers followed by one
/// linear layer per named head. With no heads the trunk output is returned
/// under [`MlpSpec::TRUNK`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub heads: Vec<HeadSpec>,
}

impl MlpSpec {
    pub const TRUNK: &'static str = "trunk";

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        for h in &self.heads {
            if h.width == 0 {
                return Err(Error::Config(format!("head '{}' has zero width", h.name)));
            }
            if matches!(h.transform, HeadTransform::Softmax | HeadTransform::LogSoftmax)
                && h.width < 2
            {
                return Err(Error::Config(format!(
                    "softmax head '{}' needs width >= 2",
                    h.name
                )));
            }
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.input)
    }

    /// Allocate parameters under `prefix` with fan-in scaled uniform weights
    /// and zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, prefix: &str, rng: &mut R, store: &mut ParamStore) {
        let mut layer = |name: String, fan_in: usize, fan_out: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
            store.insert(format!("{name}.weight"), w);
            store.insert(format!("{name}.bias"), Matrix::zeros(1, fan_out));
        };
        let mut fan_in = self.input;
        for (k, &w) in self.hidden.iter().enumerate() {
            layer(format!("{prefix}.hidden{k}"), fan_in, w, rng);
            fan_in = w;
        }
        for h in &self.heads {
            layer(format!("{prefix}.{}", h.name), fan_in, h.width, rng);
        }
    }

    /// Forward pass on a graph; returns head outputs in declaration order.
    pub fn forward(&self, g: &mut Graph, prefix: &str, params: &ParamVars, input: Var) -> Vec<Var> {
        assert_eq!(
            g.value(input).cols(),
            self.input,
            "{prefix}: input width {} does not match spec {}",
            g.value(input).cols(),
            self.input
        );
        let linear = |g: &mut Graph, name: String, x: Var| {
            let w = params.get(&format!("{name}.weight"));
            let b = params.get(&format!("{name}.bias"));
            let xw = g.matmul(x, w);
            g.add(xw, b)
        };
        let mut h = input;
        for k in 0..self.hidden.len() {
            let pre = linear(g, format!("{prefix}.hidden{k}"), h);
            h = match self.activation {
                Activation::Relu => g.relu(pre),
                Activation::Softplus => g.softplus(pre),
            };
        }
        if self.heads.is_empty() {
            return vec![h];
        }
        self.heads
            .iter()
            .map(|head| {
                let out = linear(g, format!("{prefix}.{}", head.name), h);
                match head.transform {
                    HeadTransform::Identity => out,
                    HeadTransform::Softplus => g.softplus(out),
                    HeadTransform::Softmax => g.softmax_rows(out),
                    HeadTransform::LogSoftmax => g.log_softmax_rows(out),
                }
            })
            .collect()
    }

    pub fn head_names(&self) -> Vec<String> {
        if self.heads.is_empty() {
            vec![Self::TRUNK.to_string()]
        } else {
            self.heads.iter().map(|h| h.name.clone()).collect()
        }
    }

    pub fn output_width(&self, head: usize) -> usize {
        self.heads.get(head).map_or(self.trunk_width(), |h| h.width)
    }
}

/// Graph-free forward pass with input and parameter validation.
pub fn mlp_forward(
    spec: &MlpSpec,
    prefix: &str,
    params: &ParamStore,
    input: &Matrix,
) -> Result<BTreeMap<String, Matrix>> {
    spec.validate()?;
    if input.cols() != spec.input {
        return Err(Error::shape(format!(
            "input has {} columns, network expects {}",
            input.cols(),
            spec.input
        )));
    }
    let mut fan_in = spec.input;
    let check = |name: String, fan_in: usize, out: usize| -> Result<()> {
        let w = params.require(&format!("{name}.weight"))?;
        let b = params.require(&format!("{name}.bias"))?;
        if w.shape() != (fan_in, out) || b.shape() != (1, out) {
            return Err(Error::shape(format!("parameter '{name}' has the wrong shape")));
        }
        Ok(())
    };
    for (k, &w) in spec.hidden.iter().enumerate() {
        check(format!("{prefix}.hidden{k}"), fan_in, w)?;
        fan_in = w;
    }
    for h in &spec.heads {
        check(format!("{prefix}.{}", h.name), fan_in, h.width)?;
    }
    let mut g = Graph::new();
    let vars = params.register_constant(&mut g);
    let x = g.constant(input.clone());
    let outs = spec.forward(&mut g, prefix, &vars, x);
    Ok(spec
        .head_names()
        .into_iter()
        .zip(outs)
        .map(|(name, v)| (name, g.value(v).clone()))
        .collect())
}
