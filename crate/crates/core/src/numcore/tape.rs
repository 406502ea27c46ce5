use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Identifier of a trainable tensor inside a [`crate::cells::ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable primitive operations.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `[p,q] × [q,r] → [p,r]`, or `[p,q] × [q] → [p]`.
    MatMul,
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    /// Concatenation of scalars and rank-1 tensors into a rank-1 tensor.
    Concat,
    /// Contiguous range of a rank-1 tensor.
    Slice { start: usize, len: usize },
    /// One row of a rank-2 tensor (embedding lookup).
    Row(usize),
    Sum,
    Scale(f64),
    /// `max(0, x)` elementwise, subgradient 0 at the kink.
    Hinge,
    Dot,
    /// Euclidean norm, producing a scalar.
    L2Norm,
    /// `x / ‖x‖`.
    Normalize,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Row(_) => "row",
            OpKind::Sum => "sum",
            OpKind::Scale(_) => "scale",
            OpKind::Hinge => "relu-hinge",
            OpKind::Dot => "dot",
            OpKind::L2Norm => "l2norm",
            OpKind::Normalize => "normalize",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Dot => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn rank1(op: &'static str, t: &Tensor) -> Result<()> {
    if t.rank() != 1 {
        return Err(Error::BadShape {
            op,
            expected: "a rank-1 tensor",
            got: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Evaluates one primitive on plain tensors.
///
/// Shape errors name the offending shapes; a non-finite result is rejected.
pub fn forward_op(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let op = kind.name();
    if let Some(n) = kind.arity() {
        if inputs.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{op} takes {n} inputs, got {}",
                inputs.len()
            )));
        }
    }
    let out = match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() == 0 || b.rank() > 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (p, q) = (a.shape()[0], a.shape()[1]);
            if b.rank() == 1 {
                Tensor::vector(tensor::matvec(a.data(), p, q, b.data()))
            } else {
                let r = b.shape()[1];
                let mut out = vec![0.0; p * r];
                for i in 0..p {
                    let orow = &mut out[i * r..(i + 1) * r];
                    for k in 0..q {
                        let aik = a.data()[i * q + k];
                        let brow = &b.data()[k * r..(k + 1) * r];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
                Tensor::new(vec![p, r], out)?
            }
        }
        OpKind::Add => {
            same_shape(op, inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |x, y| x + y)
        }
        OpKind::Sub => {
            same_shape(op, inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |x, y| x - y)
        }
        OpKind::Mul => {
            same_shape(op, inputs[0], inputs[1])?;
            zip_map(inputs[0], inputs[1], |x, y| x * y)
        }
        OpKind::Tanh => map(inputs[0], f64::tanh),
        OpKind::Sigmoid => map(inputs[0], tensor::sigmoid),
        OpKind::Hinge => map(inputs[0], |x| x.max(0.0)),
        OpKind::Scale(c) => map(inputs[0], |x| c * x),
        OpKind::Concat => {
            if inputs.is_empty() {
                return Err(Error::InvalidArgument("concat of nothing".into()));
            }
            let mut data = Vec::new();
            for t in inputs {
                if t.rank() > 1 {
                    rank1(op, t)?;
                }
                data.extend_from_slice(t.data());
            }
            Tensor::vector(data)
        }
        OpKind::Slice { start, len } => {
            let t = inputs[0];
            rank1(op, t)?;
            if *len == 0 || start + len > t.numel() {
                return Err(Error::BadShape {
                    op,
                    expected: "a range inside the input",
                    got: t.shape().to_vec(),
                });
            }
            Tensor::vector(t.data()[*start..start + len].to_vec())
        }
        OpKind::Row(r) => {
            let t = inputs[0];
            if t.rank() != 2 || *r >= t.shape()[0] {
                return Err(Error::BadShape {
                    op,
                    expected: "a rank-2 tensor with the requested row",
                    got: t.shape().to_vec(),
                });
            }
            Tensor::vector(t.row(*r).to_vec())
        }
        OpKind::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        OpKind::Dot => {
            rank1(op, inputs[0])?;
            same_shape(op, inputs[0], inputs[1])?;
            Tensor::scalar(tensor::dot(inputs[0].data(), inputs[1].data()))
        }
        OpKind::L2Norm => Tensor::scalar(tensor::norm(inputs[0].data())),
        OpKind::Normalize => {
            rank1(op, inputs[0])?;
            let n = tensor::norm(inputs[0].data());
            if n == 0.0 {
                return Err(Error::DegenerateEmbedding);
            }
            map(inputs[0], |x| x / n)
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite(op));
    }
    Ok(out)
}

enum Record {
    Leaf(Option<ParamId>),
    Op(OpKind, Vec<Var>),
    Xent {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    record: Record,
}

/// Define-by-run record of a computation, rebuilt for every training step.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them and a reverse sweep is a valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, record: Record) -> Var {
        self.nodes.push(Node { value, record });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no parameter gradient bookkeeping.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Record::Leaf(None))
    }

    /// A leaf standing for a trainable parameter.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Record::Leaf(Some(id)))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward_op(&kind, &values)?;
        Ok(self.push(out, Record::Op(kind, inputs.to_vec())))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { start, len }, &[a])
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.apply(OpKind::Row(r), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn hinge(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Hinge, &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Dot, &[a, b])
    }

    pub fn l2norm(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::L2Norm, &[a])
    }

    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Normalize, &[a])
    }

    /// Sum of scalar nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        let mut acc: Option<Var> = None;
        for &t in terms {
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t)?,
            });
        }
        Ok(acc)
    }

    /// Cross-entropy of a softmax over `logits` against `target`.
    ///
    /// Returns the loss node (`-log p[target]`) and the probability vector.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<(Var, Vec<f64>)> {
        self.softmax_xent_masked(logits, target, |_| true)
    }

    /// As [`Tape::softmax_xent`], with the softmax restricted to entries for
    /// which `allowed` holds. Disallowed entries get probability zero.
    pub fn softmax_xent_masked(
        &mut self,
        logits: Var,
        target: usize,
        allowed: impl Fn(usize) -> bool,
    ) -> Result<(Var, Vec<f64>)> {
        let x = &self.nodes[logits.0].value;
        rank1("softmax_xent", x)?;
        if target >= x.numel() {
            return Err(Error::TokenOutOfRange {
                id: target,
                len: x.numel(),
            });
        }
        if !allowed(target) {
            return Err(Error::IllegalAction(target));
        }
        let logp = tensor::masked_log_softmax(x.data(), &allowed);
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let loss = -logp[target];
        if !loss.is_finite() {
            return Err(Error::NonFinite("softmax_xent"));
        }
        let v = self.push(
            Tensor::scalar(loss),
            Record::Xent {
                logits,
                target,
                probs: probs.clone(),
            },
        );
        Ok((v, probs))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.record {
                Record::Leaf(_) => {}
                Record::Xent {
                    logits,
                    target,
                    probs,
                } => {
                    let gl = accum(&mut grads, *logits, probs.len());
                    for (j, (o, &p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *target { 1.0 } else { 0.0 };
                        *o += g[0] * (p - onehot);
                    }
                }
                Record::Op(kind, inputs) => self.backward_op(kind, inputs, &node.value, &g, &mut grads),
            }
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .take(root.0 + 1)
            .enumerate()
            .filter_map(|(i, n)| match n.record {
                Record::Leaf(Some(id)) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_op(
        &self,
        kind: &OpKind,
        inputs: &[Var],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let val = |v: Var| &self.nodes[v.0].value;
        match kind {
            OpKind::MatMul => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let (p, q) = (a.shape()[0], a.shape()[1]);
                let r = if b.rank() == 1 { 1 } else { b.shape()[1] };
                {
                    let ga = accum(grads, inputs[0], p * q);
                    for i in 0..p {
                        let gi = &g[i * r..(i + 1) * r];
                        let garow = &mut ga[i * q..(i + 1) * q];
                        if r == 1 {
                            let s = gi[0];
                            for (o, &bv) in garow.iter_mut().zip(b.data()) {
                                *o += s * bv;
                            }
                        } else {
                            for (k, o) in garow.iter_mut().enumerate() {
                                *o += tensor::dot(gi, &b.data()[k * r..(k + 1) * r]);
                            }
                        }
                    }
                }
                let gb = accum(grads, inputs[1], q * r);
                for i in 0..p {
                    let gi = &g[i * r..(i + 1) * r];
                    let arow = &a.data()[i * q..(i + 1) * q];
                    if r == 1 {
                        let s = gi[0];
                        for (o, &av) in gb.iter_mut().zip(arow) {
                            *o += av * s;
                        }
                    } else {
                        for (k, &aik) in arow.iter().enumerate() {
                            for (o, &gv) in gb[k * r..(k + 1) * r].iter_mut().zip(gi) {
                                *o += aik * gv;
                            }
                        }
                    }
                }
            }
            OpKind::Add | OpKind::Sub => {
                let sign = if matches!(kind, OpKind::Sub) { -1.0 } else { 1.0 };
                add_into(accum(grads, inputs[0], g.len()), g, 1.0);
                add_into(accum(grads, inputs[1], g.len()), g, sign);
            }
            OpKind::Mul | OpKind::Dot => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let scalar_out = matches!(kind, OpKind::Dot);
                let gat = |j: usize| if scalar_out { g[0] } else { g[j] };
                let ga = accum(grads, inputs[0], a.numel());
                for (j, (o, &bv)) in ga.iter_mut().zip(b.data()).enumerate() {
                    *o += gat(j) * bv;
                }
                let gb = accum(grads, inputs[1], b.numel());
                for (j, (o, &av)) in gb.iter_mut().zip(a.data()).enumerate() {
                    *o += gat(j) * av;
                }
            }
            OpKind::Tanh => {
                let ga = accum(grads, inputs[0], g.len());
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * (1.0 - y * y);
                }
            }
            OpKind::Sigmoid => {
                let ga = accum(grads, inputs[0], g.len());
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * y * (1.0 - y);
                }
            }
            OpKind::Hinge => {
                let x = val(inputs[0]);
                let ga = accum(grads, inputs[0], g.len());
                for ((o, &gv), &xv) in ga.iter_mut().zip(g).zip(x.data()) {
                    if xv > 0.0 {
                        *o += gv;
                    }
                }
            }
            OpKind::Scale(c) => add_into(accum(grads, inputs[0], g.len()), g, *c),
            OpKind::Concat => {
                let mut offset = 0;
                for &inp in inputs {
                    let n = val(inp).numel();
                    add_into(accum(grads, inp, n), &g[offset..offset + n], 1.0);
                    offset += n;
                }
            }
            OpKind::Slice { start, len } => {
                let n = val(inputs[0]).numel();
                let ga = accum(grads, inputs[0], n);
                add_into(&mut ga[*start..start + len], g, 1.0);
            }
            OpKind::Row(r) => {
                let x = val(inputs[0]);
                let cols = x.shape()[1];
                let ga = accum(grads, inputs[0], x.numel());
                add_into(&mut ga[r * cols..(r + 1) * cols], g, 1.0);
            }
            OpKind::Sum => {
                let n = val(inputs[0]).numel();
                for o in accum(grads, inputs[0], n).iter_mut() {
                    *o += g[0];
                }
            }
            OpKind::L2Norm => {
                let x = val(inputs[0]);
                let n = out.data()[0];
                let ga = accum(grads, inputs[0], x.numel());
                if n > 0.0 {
                    for (o, &xv) in ga.iter_mut().zip(x.data()) {
                        *o += g[0] * xv / n;
                    }
                }
            }
            OpKind::Normalize => {
                let x = val(inputs[0]);
                let n = tensor::norm(x.data());
                let yg = tensor::dot(out.data(), g);
                let ga = accum(grads, inputs[0], x.numel());
                for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                    *o += (gv - y * yg) / n;
                }
            }
        }
    }
}

fn accum(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` if `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter leaf that reached the root. A parameter
    /// bound more than once appears once per binding.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|&(id, i)| self.grads[i].as_deref().map(|g| (id, g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_origin() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0]));
        let y = t.tanh(x).unwrap();
        assert_eq!(t.value(y).data(), &[0.0]);
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let col = t.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let y = t.matmul(i2, col).unwrap();
        assert_eq!(t.value(y).shape(), &[2, 1]);
        assert_eq!(t.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn dot_product() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let d = t.dot(a, b).unwrap();
        assert_eq!(t.scalar(d), 11.0);
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn shape_errors_name_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2]));
        let err = t.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
        let c = t.constant(Tensor::zeros(&[3]));
        assert!(matches!(t.add(b, c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2]));
        assert!(matches!(t.backward(a), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn xent_examples() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let (loss, probs) = t.softmax_xent(l, 0).unwrap();
        assert!((t.scalar(loss) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(probs, vec![0.5, 0.5]);

        let l = t.constant(Tensor::vector(vec![1000.0, 0.0]));
        let (loss, _) = t.softmax_xent(l, 0).unwrap();
        assert!(t.scalar(loss).abs() < 1e-300 + 1e-15);

        let l = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let (loss, probs) = t.softmax_xent(l, 2).unwrap();
        // -ln(e^3 / (e + e^2 + e^3)) evaluated by hand
        assert!((t.scalar(loss) - 0.407_605_964_444_380).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            t.softmax_xent(l, 3),
            Err(Error::TokenOutOfRange { id: 3, len: 3 })
        ));
    }

    #[test]
    fn overflow_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1e300]));
        let y = t.mul(x, x);
        assert!(matches!(y, Err(Error::NonFinite("mul"))));
    }
}
