use rand::Rng;

use super::lstm::check_dim;
use super::params::ParamStore;
use crate::error::Result;
use crate::numcore::{matvec, ParamId, Tape, Var};

/// Affine map `W·x (+ b)`.
#[derive(Clone, Debug)]
pub struct Linear {
    in_dim: usize,
    out_dim: usize,
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add_uniform(format!("{prefix}.w"), &[out_dim, in_dim], rng)?;
        let b = if bias {
            Some(store.add_uniform(format!("{prefix}.b"), &[out_dim], rng)?)
        } else {
            None
        };
        Ok(Self {
            in_dim,
            out_dim,
            w,
            b,
        })
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store.id(&format!("{prefix}.w"))?;
        let shape = store.value(w).shape();
        Ok(Self {
            in_dim: shape[1],
            out_dim: shape[0],
            w,
            b: store.id(&format!("{prefix}.b")).ok(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    pub fn bias_id(&self) -> Option<ParamId> {
        self.b
    }

    pub fn forward_values(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("linear input", self.in_dim, x.len())?;
        let mut y = matvec(store.value(self.w).data(), self.out_dim, self.in_dim, x);
        if let Some(b) = self.b {
            for (y, &b) in y.iter_mut().zip(store.value(b).data()) {
                *y += b;
            }
        }
        Ok(y)
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundLinear {
        BoundLinear {
            w: store.bind(tape, self.w),
            b: self.b.map(|b| store.bind(tape, b)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Option<Var>,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(self.w, x)?;
        match self.b {
            Some(b) => tape.add(y, b),
            None => Ok(y),
        }
    }
}

/// Multilayer perceptron with `tanh` hidden layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` lists every layer width, input first.
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.{i}"), w[0], w[1], true, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn from_store(store: &ParamStore, prefix: &str, depth: usize) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| Linear::from_store(store, &format!("{prefix}.{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].in_dim];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward_values(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let first = self.layers[0].forward_values(store, x)?;
        self.forward_after_first(store, first)
    }

    /// Finishes a forward pass given the first layer's affine output.
    pub fn forward_after_first(&self, store: &ParamStore, first: Vec<f64>) -> Result<Vec<f64>> {
        let mut a = first;
        for layer in &self.layers[1..] {
            a.iter_mut().for_each(|v| *v = v.tanh());
            a = layer.forward_values(store, &a)?;
        }
        Ok(a)
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, store)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<BoundLinear>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut a = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = layer.forward(tape, a)?;
            if i < last {
                a = tape.tanh(a)?;
            }
        }
        Ok(a)
    }
}
