use std::collections::HashMap;

use crate::error::{NumericsError, Result};
use crate::graph::{Gradients, Graph};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its AdamW moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
}

impl<T: Real> Parameter<T> {
    fn new(name: String, tensor: Tensor<T>) -> Self {
        let n = tensor.numel();
        Parameter {
            name,
            tensor: tensor.with_requires_grad(true),
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
            step: 0,
        }
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::DuplicateName(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, tensor));
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Copies gradients of every parameter bound on `graph` into the store.
    /// Parameters the loss never reached receive explicit zeros.
    pub fn accumulate_grads(&mut self, graph: &Graph<T>, grads: &Gradients<T>) -> Result<()> {
        for (var, id) in graph.param_nodes() {
            self.params[id.0].tensor.accumulate_grad(&grads.of(var))?;
        }
        Ok(())
    }

    /// L2 norm over all parameter gradients present.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.tensor.grad())
            .flat_map(|g| g.iter().map(|v| v.to_f64_lossy().powi(2)))
            .sum::<f64>()
            .sqrt()
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    /// One update of every parameter. Each parameter must carry a gradient.
    ///
    /// The decay `θ ← θ(1 − lr·λ)` is applied before the moment update, and
    /// the moments are bias-corrected with the parameter's own step count.
    pub fn step<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.tensor.grad().is_none()) {
            return Err(NumericsError::MissingGrad(p.name.clone()));
        }
        let lr = T::from_f64_lossy(self.lr);
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let eps = T::from_f64_lossy(self.eps);
        let decay = T::one() - T::from_f64_lossy(self.lr * self.weight_decay);
        for p in store.iter_mut() {
            p.step += 1;
            let t = p.step as i32;
            let c1 = T::one() - b1.powi(t);
            let c2 = T::one() - b2.powi(t);
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let theta = p.tensor.data_mut();
            for i in 0..theta.len() {
                let g = grad[i];
                theta[i] = theta[i] * decay;
                p.first_moment[i] = b1 * p.first_moment[i] + (T::one() - b1) * g;
                p.second_moment[i] = b2 * p.second_moment[i] + (T::one() - b2) * g * g;
                let m_hat = p.first_moment[i] / c1;
                let v_hat = p.second_moment[i] / c2;
                theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
