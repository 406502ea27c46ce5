use rand::Rng;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::numcore::{matvec, sigmoid, ParamId, Tape, Var};

/// Single-layer LSTM with gate order (input, forget, cell, output).
///
/// Pre-activations are `(W_x·x + b) + W_h·h`; the tape and the plain-value
/// paths evaluate them in the same order so their results agree bitwise.
#[derive(Clone, Debug)]
pub struct LstmCell {
    input_dim: usize,
    hidden_dim: usize,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(m: usize) -> Self {
        Self {
            h: vec![0.0; m],
            c: vec![0.0; m],
        }
    }
}

impl LstmCell {
    /// Registers `{prefix}.w_x`, `{prefix}.w_h`, `{prefix}.b`. Forget-gate
    /// biases start at +1.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let m = hidden_dim;
        let w_x = store.add_uniform(format!("{prefix}.w_x"), &[4 * m, input_dim], rng)?;
        let w_h = store.add_uniform(format!("{prefix}.w_h"), &[4 * m, m], rng)?;
        let b = store.add_uniform(format!("{prefix}.b"), &[4 * m], rng)?;
        for v in &mut store.value_mut(b).data_mut()[m..2 * m] {
            *v = 1.0;
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            b,
        })
    }

    /// Looks up an existing cell registered under `prefix`.
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_x = store.id(&format!("{prefix}.w_x"))?;
        let w_h = store.id(&format!("{prefix}.w_h"))?;
        let b = store.id(&format!("{prefix}.b"))?;
        let shape = store.value(w_x).shape();
        Ok(Self {
            input_dim: shape[1],
            hidden_dim: shape[0] / 4,
            w_x,
            w_h,
            b,
        })
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize) -> usize {
        4 * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundLstm {
        BoundLstm {
            w_x: store.bind(tape, self.w_x),
            w_h: store.bind(tape, self.w_h),
            b: store.bind(tape, self.b),
            m: self.hidden_dim,
        }
    }

    /// `W_x·x + b`.
    pub fn input_projection(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("lstm input", self.input_dim, x.len())?;
        let mut z = matvec(store.value(self.w_x).data(), 4 * self.hidden_dim, self.input_dim, x);
        for (z, &b) in z.iter_mut().zip(store.value(self.b).data()) {
            *z += b;
        }
        Ok(z)
    }

    /// `W_h·h`.
    pub fn hidden_projection(&self, store: &ParamStore, h: &[f64]) -> Result<Vec<f64>> {
        check_dim("lstm hidden", self.hidden_dim, h.len())?;
        let m = self.hidden_dim;
        Ok(matvec(store.value(self.w_h).data(), 4 * m, m, h))
    }

    /// Finishes a step from the two projections.
    pub fn combine(&self, input_proj: &[f64], hidden_proj: &[f64], c: &[f64]) -> LstmState {
        let m = self.hidden_dim;
        let mut h_new = Vec::with_capacity(m);
        let mut c_new = Vec::with_capacity(m);
        for j in 0..m {
            let z = |k: usize| input_proj[k * m + j] + hidden_proj[k * m + j];
            let i = sigmoid(z(0));
            let f = sigmoid(z(1));
            let g = z(2).tanh();
            let o = sigmoid(z(3));
            let cj = f * c[j] + i * g;
            c_new.push(cj);
            h_new.push(o * cj.tanh());
        }
        LstmState { h: h_new, c: c_new }
    }

    pub fn step_values(&self, store: &ParamStore, state: &LstmState, x: &[f64]) -> Result<LstmState> {
        check_dim("lstm cell state", self.hidden_dim, state.c.len())?;
        let zx = self.input_projection(store, x)?;
        let zh = self.hidden_projection(store, &state.h)?;
        Ok(self.combine(&zx, &zh, &state.c))
    }
}

/// An [`LstmCell`] whose parameters live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm {
    w_x: Var,
    w_h: Var,
    b: Var,
    m: usize,
}

impl BoundLstm {
    pub fn step(&self, tape: &mut Tape, h: Var, c: Var, x: Var) -> Result<(Var, Var)> {
        let m = self.m;
        let zx = tape.matmul(self.w_x, x)?;
        let zx = tape.add(zx, self.b)?;
        let zh = tape.matmul(self.w_h, h)?;
        let z = tape.add(zx, zh)?;
        let i = tape.slice(z, 0, m)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(z, m, m)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(z, 2 * m, m)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(z, 3 * m, m)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new)?;
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { what, expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(n: usize, m: usize, seed: u64) -> (ParamStore, LstmCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = LstmCell::new(&mut store, "lstm", n, m, &mut rng).unwrap();
        (store, cell)
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let (mut store, cell) = cell(3, 4, 1);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let s = cell
            .step_values(&store, &LstmState::zeros(4), &[0.3, -1.0, 2.0])
            .unwrap();
        assert!(s.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count_formula() {
        for (n, m) in [(1, 1), (3, 5), (64, 64), (512, 512)] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            if n * m > 5000 {
                continue;
            }
            LstmCell::new(&mut store, "c", n, m, &mut rng).unwrap();
            assert_eq!(store.num_params(), LstmCell::num_params(n, m));
            assert_eq!(LstmCell::num_params(n, m), 4 * (m * n + m * m + m));
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (store, cell) = cell(2, 3, 0);
        let b = store.value(cell.b).data();
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let (store, cell) = cell(3, 4, 1);
        assert!(matches!(
            cell.step_values(&store, &LstmState::zeros(4), &[1.0]),
            Err(Error::DimMismatch { expected: 3, got: 1, .. })
        ));
    }

    #[test]
    fn tape_matches_values_and_is_deterministic() {
        let (store, cell) = cell(3, 4, 7);
        let x = [0.5, -0.2, 0.9];
        let mut s = LstmState::zeros(4);
        let mut tape = Tape::new();
        let bound = cell.bind(&mut tape, &store);
        let xv = tape.constant(Tensor::vector(x.to_vec()));
        let mut h = tape.constant(Tensor::vector(vec![0.0; 4]));
        let mut c = tape.constant(Tensor::vector(vec![0.0; 4]));
        for _ in 0..3 {
            s = cell.step_values(&store, &s, &x).unwrap();
            (h, c) = bound.step(&mut tape, h, c, xv).unwrap();
        }
        assert_eq!(tape.value(h).data(), s.h.as_slice());
        assert_eq!(tape.value(c).data(), s.c.as_slice());
        assert!(s.h.iter().all(|v| v.abs() < 1.0));
    }
}
