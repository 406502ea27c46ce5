use rand::Rng;

use super::lstm::check_dim;
use super::params::ParamStore;
use crate::error::Result;
use crate::numcore::{matvec, sigmoid, ParamId, Tape, Var};

/// Single-layer GRU, gate order (update, reset, candidate).
///
/// `h' = n + z ⊙ (h − n)`, i.e. `(1 − z) ⊙ n + z ⊙ h`, with
/// `n = tanh(W_n·x + b_n + U_n·(r ⊙ h))`.
#[derive(Clone, Debug)]
pub struct GruCell {
    input_dim: usize,
    hidden_dim: usize,
    w: ParamId,
    u_zr: ParamId,
    u_n: ParamId,
    b: ParamId,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let m = hidden_dim;
        Ok(Self {
            input_dim,
            hidden_dim,
            w: store.add_uniform(format!("{prefix}.w"), &[3 * m, input_dim], rng)?,
            u_zr: store.add_uniform(format!("{prefix}.u_zr"), &[2 * m, m], rng)?,
            u_n: store.add_uniform(format!("{prefix}.u_n"), &[m, m], rng)?,
            b: store.add_uniform(format!("{prefix}.b"), &[3 * m], rng)?,
        })
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store.id(&format!("{prefix}.w"))?;
        let shape = store.value(w).shape();
        Ok(Self {
            input_dim: shape[1],
            hidden_dim: shape[0] / 3,
            w,
            u_zr: store.id(&format!("{prefix}.u_zr"))?,
            u_n: store.id(&format!("{prefix}.u_n"))?,
            b: store.id(&format!("{prefix}.b"))?,
        })
    }

    pub fn num_params(input_dim: usize, hidden_dim: usize) -> usize {
        3 * (hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Id of the bias vector, laid out as `[b_z, b_r, b_n]`.
    pub fn bias_id(&self) -> ParamId {
        self.b
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundGru {
        BoundGru {
            w: store.bind(tape, self.w),
            u_zr: store.bind(tape, self.u_zr),
            u_n: store.bind(tape, self.u_n),
            b: store.bind(tape, self.b),
            m: self.hidden_dim,
        }
    }

    pub fn step_values(&self, store: &ParamStore, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let m = self.hidden_dim;
        check_dim("gru input", self.input_dim, x.len())?;
        check_dim("gru hidden", m, h.len())?;
        let mut wx = matvec(store.value(self.w).data(), 3 * m, self.input_dim, x);
        for (z, &b) in wx.iter_mut().zip(store.value(self.b).data()) {
            *z += b;
        }
        let uh = matvec(store.value(self.u_zr).data(), 2 * m, m, h);
        let z: Vec<f64> = (0..m).map(|j| sigmoid(wx[j] + uh[j])).collect();
        let r: Vec<f64> = (0..m).map(|j| sigmoid(wx[m + j] + uh[m + j])).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let un = matvec(store.value(self.u_n).data(), m, m, &rh);
        Ok((0..m)
            .map(|j| {
                let n = (wx[2 * m + j] + un[j]).tanh();
                n + z[j] * (h[j] - n)
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    w: Var,
    u_zr: Var,
    u_n: Var,
    b: Var,
    m: usize,
}

impl BoundGru {
    pub fn step(&self, tape: &mut Tape, h: Var, x: Var) -> Result<Var> {
        let m = self.m;
        let wx = tape.matmul(self.w, x)?;
        let wx = tape.add(wx, self.b)?;
        let uh = tape.matmul(self.u_zr, h)?;
        let zx = tape.slice(wx, 0, m)?;
        let zh = tape.slice(uh, 0, m)?;
        let z = tape.add(zx, zh)?;
        let z = tape.sigmoid(z)?;
        let rx = tape.slice(wx, m, m)?;
        let rh = tape.slice(uh, m, m)?;
        let r = tape.add(rx, rh)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let un = tape.matmul(self.u_n, rh)?;
        let nx = tape.slice(wx, 2 * m, m)?;
        let n = tape.add(nx, un)?;
        let n = tape.tanh(n)?;
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        tape.add(n, zd)
    }
}
