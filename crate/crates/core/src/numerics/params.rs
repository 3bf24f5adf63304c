use std::collections::HashMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor. Names are slash-separated module paths such as
/// `teacher/prompt/rgb/3/g_s2/weight`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of parameters with unique names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::validation(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor: tensor.with_grad(),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].tensor)
            .ok_or_else(|| Error::validation(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i].tensor),
            None => Err(Error::validation(format!("unknown parameter {name}"))),
        }
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Adds the parameter-leaf gradients recorded on `g` into this set.
    pub fn accumulate_from(&mut self, g: &Graph) {
        for (name, grad) in g.param_grads() {
            if let Some(&i) = self.index.get(name) {
                self.params[i].tensor.accumulate_grad(grad);
            }
        }
    }

    /// Gradient buffers for this set in parameter order, zero where absent.
    pub fn gradients_from(&self, g: &Graph) -> Vec<Vec<f32>> {
        let mut out: Vec<Vec<f32>> = self
            .params
            .iter()
            .map(|p| vec![0.0; p.tensor.numel()])
            .collect();
        for (name, grad) in g.param_grads() {
            if let Some(&i) = self.index.get(name) {
                out[i].copy_from_slice(grad);
            }
        }
        out
    }

    /// Copies every value from `other` where names match; shapes must agree.
    pub fn load_values(&mut self, other: &ParamSet) -> Result<()> {
        for p in &other.params {
            let dst = self.get_mut(&p.name)?;
            if dst.shape() != p.tensor.shape() {
                return Err(Error::dim(format!(
                    "parameter {} is {:?} here but {:?} in source",
                    p.name,
                    dst.shape(),
                    p.tensor.shape()
                )));
            }
            dst.data_mut().copy_from_slice(p.tensor.data());
        }
        if other.len() != self.len() {
            return Err(Error::validation(format!(
                "source has {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Binds parameters of one [`ParamSet`] onto a graph under a name prefix.
pub struct Binder<'a> {
    pub params: &'a ParamSet,
    pub trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(params: &'a ParamSet, trainable: bool) -> Self {
        Self { params, trainable }
    }

    pub fn get(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let t = self.params.get(name)?;
        Ok(g.bind_param(name, t, self.trainable))
    }
}

/// Truncated normal (cut at two standard deviations), the default weight init.
pub fn trunc_normal(rng: &mut Rng, shape: &[usize], std: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0f32, std).expect("std must be positive");
    let data = (0..n)
        .map(|_| loop {
            let v = dist.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("trunc_normal shape")
}

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("uniform shape")
}
