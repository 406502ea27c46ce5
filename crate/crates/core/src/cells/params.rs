use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Gradients, ParamId, Tape, Tensor, Var};

/// Range of the uniform initializer used for every weight.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Debug)]
pub struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl ParamEntry {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Named trainable tensors of one model, with gradient and Adam slots.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        let id = ParamId(self.entries.len());
        let n = value.numel();
        self.by_name.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        Ok(id)
    }

    /// Registers a tensor drawn from `uniform(-INIT_RANGE, INIT_RANGE)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    /// Redraws every value from `uniform(-range, range)`.
    pub fn reinit_uniform(&mut self, range: f64, rng: &mut impl Rng) {
        for e in &mut self.entries {
            e.value.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-range..range));
        }
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: e.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        e.value = value;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Records the parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(id, self.entries[id.0].value.clone())
    }

    /// Sets every gradient slot to zeros.
    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = Some(Tensor::zeros(e.value.shape()));
        }
    }

    /// Adds `scale ×` the parameter gradients of a reverse sweep.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (id, g) in grads.params() {
            let e = self
                .entries
                .get_mut(id.0)
                .ok_or_else(|| Error::UnknownParam(format!("#{}", id.0)))?;
            if g.len() != e.value.numel() {
                return Err(Error::DimMismatch {
                    what: "gradient",
                    expected: e.value.numel(),
                    got: g.len(),
                });
            }
            let slot = e.grad.get_or_insert_with(|| Tensor::zeros(e.value.shape()));
            for (s, &x) in slot.data_mut().iter_mut().zip(g) {
                *s += scale * x;
            }
        }
        Ok(())
    }

    /// Euclidean norm over all populated gradient slots.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their joint norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let n = self.grad_norm();
        if n > max_norm && n > 0.0 {
            let s = max_norm / n;
            for g in self.entries.iter_mut().filter_map(|e| e.grad.as_mut()) {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
    }

    /// One bias-corrected Adam step on every entry, then clears gradients.
    pub fn adam_update(&mut self, adam: &Adam) -> Result<()> {
        if let Some(e) = self.entries.iter().find(|e| e.grad.is_none()) {
            return Err(Error::MissingGradient(e.name.clone()));
        }
        for e in &mut self.entries {
            let grad = e.grad.take().expect("checked above");
            e.step += 1;
            let bc1 = 1.0 - adam.beta1.powi(e.step as i32);
            let bc2 = 1.0 - adam.beta2.powi(e.step as i32);
            let values = e.value.data_mut();
            for (((p, &g), m), v) in values
                .iter_mut()
                .zip(grad.data())
                .zip(e.m.iter_mut())
                .zip(e.v.iter_mut())
            {
                *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
                *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
            }
        }
        Ok(())
    }
}
