use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Gradients, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

#[derive(Clone, Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Option<Vec<f64>>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameter tensors with their Adam moment buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    step: u64,
}

/// Graph leaves for every parameter of a store, in registration order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let n = value.len();
        self.params.push(Param {
            name: name.clone(),
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        let id = self.params.len() - 1;
        self.index.insert(name, id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replace a parameter's value, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, checkpoint holds {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Register every parameter as a leaf on `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound(self.params.iter().map(|p| g.leaf(p.value.clone())).collect())
    }

    /// Add the gradients of a backward pass into each parameter's buffer.
    pub fn accumulate(&mut self, grads: &Gradients, bound: &Bound) {
        for (p, &var) in self.params.iter_mut().zip(&bound.0) {
            let g = grads.tensor(var);
            match &mut p.grad {
                Some(buf) => buf.iter_mut().zip(g.data()).for_each(|(b, x)| *b += x),
                None => p.grad = Some(g.into_data()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update over every parameter; clears gradients.
    pub fn adam_step(&mut self, opt: &Adam) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.grad.is_none()) {
            return Err(Error::MissingGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        for p in &mut self.params {
            let g = p.grad.take().expect("checked above");
            for (i, gi) in g.iter().enumerate() {
                p.m[i] = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * gi;
                p.v[i] = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * gi * gi;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.value.data_mut()[i] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
        Ok(())
    }
}
