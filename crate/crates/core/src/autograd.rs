//! A small reverse-mode automatic differentiation tape over [`Tensor`]s.
//!
//! Every forward computation records its nodes on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar node accumulates gradients into every
//! node that (transitively) depends on a leaf created with [`Tape::param`].
//! Nodes that depend only on constants carry no gradient and are skipped.

use std::cell::RefCell;
use std::rc::Rc;

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    TransposeLast2(usize),
    Reshape(usize),
    ConcatLast(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Square(usize),
    Abs(usize),
    SoftmaxLast(usize),
    SumAll(usize),
    SumLast(usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    AbsCosine {
        a: usize,
        b: usize,
        eps: f64,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

/// Batch-normalization statistics source for [`Var::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a> {
    /// Normalize with the statistics of the current input.
    Batch { eps: f64 },
    /// Normalize with externally supplied per-feature mean and variance.
    Fixed { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of its shape when it received none.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable leaf: gradients flow into it.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf: no gradient is tracked.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn unary(&self, a: usize, value: Tensor, op: Op) -> Var<'_> {
        let ng = self.needs(a);
        self.push(value, op, ng)
    }

    fn binary(&self, a: usize, b: usize, value: Tensor, op: Op) -> Var<'_> {
        let ng = self.needs(a) || self.needs(b);
        self.push(value, op, ng)
    }

    /// Back-propagates from a single-element node.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::filled(nodes[root.id].value.shape(), 1.0));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let mut send = |i: usize, t: Tensor| {
                if !nodes[i].needs_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                &Op::Add(a, b) => {
                    send(a, g.sum_to_shape(val(a).shape()));
                    send(b, g.sum_to_shape(val(b).shape()));
                }
                &Op::Sub(a, b) => {
                    send(a, g.sum_to_shape(val(a).shape()));
                    send(b, g.scale(-1.0).sum_to_shape(val(b).shape()));
                }
                &Op::Mul(a, b) => {
                    if nodes[a].needs_grad {
                        let ga = g.zip_with(val(b), |x, y| x * y).unwrap();
                        send(a, ga.sum_to_shape(val(a).shape()));
                    }
                    if nodes[b].needs_grad {
                        let gb = g.zip_with(val(a), |x, y| x * y).unwrap();
                        send(b, gb.sum_to_shape(val(b).shape()));
                    }
                }
                &Op::Div(a, b) => {
                    if nodes[a].needs_grad {
                        let ga = g.zip_with(val(b), |x, y| x / y).unwrap();
                        send(a, ga.sum_to_shape(val(a).shape()));
                    }
                    if nodes[b].needs_grad {
                        // d(a/b)/db = -out/b
                        let q = node.value.zip_with(val(b), |o, y| -o / y).unwrap();
                        let gb = g.zip_with(&q, |x, y| x * y).unwrap();
                        send(b, gb.sum_to_shape(val(b).shape()));
                    }
                }
                &Op::Scale(a, s) => send(a, g.scale(s)),
                &Op::AddScalar(a) => send(a, g),
                &Op::MatMul(a, b) => {
                    if nodes[a].needs_grad {
                        let ga = g.matmul(&val(b).transpose_last2()).unwrap();
                        send(a, reduce_batch(ga, val(a).shape()));
                    }
                    if nodes[b].needs_grad {
                        let gb = val(a).transpose_last2().matmul(&g).unwrap();
                        send(b, reduce_batch(gb, val(b).shape()));
                    }
                }
                &Op::TransposeLast2(a) => send(a, g.transpose_last2()),
                &Op::Reshape(a) => send(a, g.reshape(val(a).shape()).unwrap()),
                &Op::ConcatLast(a, b) => {
                    let fa = *val(a).shape().last().unwrap();
                    let (ga, gb) = g.split_last(fa);
                    send(a, ga);
                    send(b, gb);
                }
                &Op::Sigmoid(a) => {
                    let d = g.zip_with(&node.value, |x, y| x * y * (1.0 - y)).unwrap();
                    send(a, d);
                }
                &Op::Tanh(a) => {
                    let d = g.zip_with(&node.value, |x, y| x * (1.0 - y * y)).unwrap();
                    send(a, d);
                }
                &Op::Relu(a) => {
                    let d = g.zip_with(val(a), |x, v| if v > 0.0 { x } else { 0.0 }).unwrap();
                    send(a, d);
                }
                &Op::LeakyRelu(a, slope) => {
                    let d = g.zip_with(val(a), |x, v| if v > 0.0 { x } else { slope * x }).unwrap();
                    send(a, d);
                }
                &Op::Square(a) => {
                    let d = g.zip_with(val(a), |x, v| 2.0 * x * v).unwrap();
                    send(a, d);
                }
                &Op::Abs(a) => {
                    let d = g
                        .zip_with(val(a), |x, v| {
                            if v > 0.0 {
                                x
                            } else if v < 0.0 {
                                -x
                            } else {
                                0.0
                            }
                        })
                        .unwrap();
                    send(a, d);
                }
                &Op::SoftmaxLast(a) => {
                    let y = &node.value;
                    let f = *y.shape().last().unwrap();
                    let mut d = g.clone();
                    for (drow, yrow) in d.data_mut().chunks_mut(f).zip(y.data().chunks(f)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for (dv, &yv) in drow.iter_mut().zip(yrow) {
                            *dv = yv * (*dv - dot);
                        }
                    }
                    send(a, d);
                }
                &Op::SumAll(a) => {
                    send(a, Tensor::filled(val(a).shape(), g.item()));
                }
                &Op::SumLast(a) => {
                    let src = val(a);
                    let f = *src.shape().last().unwrap();
                    let data = g.data().iter().flat_map(|&x| std::iter::repeat_n(x, f)).collect();
                    send(a, Tensor::from_vec(src.shape(), data).unwrap());
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let f = inv_std.len();
                    let rows = xhat.len() / f;
                    let gam = val(*gamma).data();
                    let mut dgamma = vec![0.0; f];
                    let mut dbeta = vec![0.0; f];
                    for (grow, xrow) in g.data().chunks(f).zip(xhat.data().chunks(f)) {
                        for j in 0..f {
                            dgamma[j] += grow[j] * xrow[j];
                            dbeta[j] += grow[j];
                        }
                    }
                    if nodes[*x].needs_grad {
                        let mut dx = vec![0.0; xhat.len()];
                        if *batch_stats {
                            // dxhat = dy * gamma; dx = inv_std/M (M dxhat - sum dxhat - xhat sum(dxhat xhat))
                            let m = rows as f64;
                            for j in 0..f {
                                let sum_dxhat = dbeta[j] * gam[j];
                                let sum_dxhat_xhat = dgamma[j] * gam[j];
                                for r in 0..rows {
                                    let k = r * f + j;
                                    let dxhat = g.data()[k] * gam[j];
                                    dx[k] = inv_std[j] / m * (m * dxhat - sum_dxhat - xhat.data()[k] * sum_dxhat_xhat);
                                }
                            }
                        } else {
                            for (k, v) in dx.iter_mut().enumerate() {
                                let j = k % f;
                                *v = g.data()[k] * gam[j] * inv_std[j];
                            }
                        }
                        send(*x, Tensor::from_vec(val(*x).shape(), dx).unwrap());
                    }
                    send(*gamma, Tensor::from_vec(&[f], dgamma).unwrap());
                    send(*beta, Tensor::from_vec(&[f], dbeta).unwrap());
                }
                &Op::AbsCosine { a, b, eps } => {
                    let (ta, tb) = (val(a), val(b));
                    let f = *ta.shape().last().unwrap();
                    let mut da = vec![0.0; ta.len()];
                    let mut db = vec![0.0; tb.len()];
                    for (r, &gr) in g.data().iter().enumerate() {
                        let ar = &ta.data()[r * f..(r + 1) * f];
                        let br = &tb.data()[r * f..(r + 1) * f];
                        let na2: f64 = ar.iter().map(|v| v * v).sum();
                        let nb2: f64 = br.iter().map(|v| v * v).sum();
                        let p = (na2 * nb2).sqrt();
                        if p < eps {
                            continue;
                        }
                        let dot: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                        let s = dot / p;
                        let sign = if s > 0.0 {
                            1.0
                        } else if s < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        for j in 0..f {
                            da[r * f + j] = gr * sign * (br[j] / p - s * ar[j] / na2);
                            db[r * f + j] = gr * sign * (ar[j] / p - s * br[j] / nb2);
                        }
                    }
                    send(a, Tensor::from_vec(ta.shape(), da).unwrap());
                    send(b, Tensor::from_vec(tb.shape(), db).unwrap());
                }
            }
        }
        Gradients { grads }
    }
}

/// Sums a batched matmul gradient down to an operand that was broadcast.
fn reduce_batch(g: Tensor, target: &[usize]) -> Tensor {
    if g.shape() == target {
        return g;
    }
    let (m, n) = (target[target.len() - 2], target[target.len() - 1]);
    let mut out = vec![0.0; m * n];
    for chunk in g.data().chunks(m * n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_vec(target, out).unwrap()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn zip(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'t> {
        let v = self
            .value()
            .zip_with(&other.value(), f)
            .unwrap_or_else(|e| panic!("{e}"));
        self.tape.binary(self.id, other.id, v, op)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.zip(other, |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.zip(other, |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.zip(other, |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.zip(other, |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value().scale(s);
        self.tape.unary(self.id, v, Op::Scale(self.id, s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let v = self.value().map(|x| x + s);
        self.tape.unary(self.id, v, Op::AddScalar(self.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&other.value()).unwrap_or_else(|e| panic!("{e}"));
        self.tape.binary(self.id, other.id, v, Op::MatMul(self.id, other.id))
    }

    pub fn transpose_last2(self) -> Var<'t> {
        let v = self.value().transpose_last2();
        self.tape.unary(self.id, v, Op::TransposeLast2(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.value().reshape(shape).unwrap_or_else(|e| panic!("{e}"));
        self.tape.unary(self.id, v, Op::Reshape(self.id))
    }

    /// Adds a per-feature vector `[F]` along the last axis.
    pub fn add_bias(self, bias: Var<'t>) -> Var<'t> {
        let rank = self.value().rank();
        let f = bias.value().len();
        let mut shape = vec![1; rank];
        shape[rank - 1] = f;
        self.add(bias.reshape(&shape))
    }

    pub fn concat_last(self, other: Var<'t>) -> Var<'t> {
        let v = self
            .value()
            .concat_last(&other.value())
            .unwrap_or_else(|e| panic!("{e}"));
        self.tape
            .binary(self.id, other.id, v, Op::ConcatLast(self.id, other.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().map(|x| 1.0 / (1.0 + (-x).exp()));
        self.tape.unary(self.id, v, Op::Sigmoid(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.tape.unary(self.id, v, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| x.max(0.0));
        self.tape.unary(self.id, v, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.tape.unary(self.id, v, Op::LeakyRelu(self.id, slope))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.tape.unary(self.id, v, Op::Square(self.id))
    }

    pub fn abs(self) -> Var<'t> {
        let v = self.value().map(f64::abs);
        self.tape.unary(self.id, v, Op::Abs(self.id))
    }

    pub fn softmax_last(self) -> Var<'t> {
        let v = self.value().softmax_last();
        self.tape.unary(self.id, v, Op::SoftmaxLast(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.tape.unary(self.id, v, Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_last(self) -> Var<'t> {
        let v = self.value().sum_last();
        self.tape.unary(self.id, v, Op::SumLast(self.id))
    }

    /// Per-feature normalization over all leading axes, followed by the
    /// affine map `gamma * xhat + beta`. Returns the output and, for
    /// [`NormStats::Batch`], the (mean, biased variance) that were used.
    pub fn batch_norm(self, gamma: Var<'t>, beta: Var<'t>, stats: NormStats<'_>) -> (Var<'t>, Vec<f64>, Vec<f64>) {
        let x = self.value();
        let f = *x.shape().last().expect("batch_norm of scalar");
        let rows = x.len() / f;
        let (mean, var, eps, batch_stats) = match stats {
            NormStats::Batch { eps } => {
                let mut mean = vec![0.0; f];
                for row in x.data().chunks(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; f];
                for row in x.data().chunks(f) {
                    for j in 0..f {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var, eps, true)
            }
            NormStats::Fixed { mean, var, eps } => (mean.to_vec(), var.to_vec(), eps, false),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        for (k, (o, &v)) in xhat.iter_mut().zip(x.data()).enumerate() {
            let j = k % f;
            *o = (v - mean[j]) * inv_std[j];
        }
        let g = gamma.value();
        let b = beta.value();
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(k, &xh)| g.data()[k % f] * xh + b.data()[k % f])
            .collect();
        let out = Tensor::from_vec(x.shape(), out).unwrap();
        let xhat = Tensor::from_vec(x.shape(), xhat).unwrap();
        let ng = self.tape.needs(self.id) || self.tape.needs(gamma.id) || self.tape.needs(beta.id);
        let var_node = self.tape.push(
            out,
            Op::BatchNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
                batch_stats,
            },
            ng,
        );
        (var_node, mean, var)
    }

    /// Row-wise `|cos(a_i, b_i)|` over the last axis, returning a trailing
    /// axis of extent 1. Rows whose norm product falls below `eps` yield 0.
    pub fn abs_cosine_rows(self, other: Var<'t>, eps: f64) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "abs_cosine_rows shape mismatch");
        let f = *a.shape().last().unwrap();
        let data: Vec<f64> = a
            .data()
            .chunks(f)
            .zip(b.data().chunks(f))
            .map(|(ar, br)| {
                let na2: f64 = ar.iter().map(|v| v * v).sum();
                let nb2: f64 = br.iter().map(|v| v * v).sum();
                let p = (na2 * nb2).sqrt();
                if p < eps {
                    0.0
                } else {
                    let dot: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
                    (dot / p).abs().min(1.0)
                }
            })
            .collect();
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        let v = Tensor::from_vec(&shape, data).unwrap();
        self.tape.binary(
            self.id,
            other.id,
            v,
            Op::AbsCosine {
                a: self.id,
                b: other.id,
                eps,
            },
        )
    }
}
