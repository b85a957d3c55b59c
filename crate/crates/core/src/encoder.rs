//! Recurrent graph convolutional unit: a GRU cell whose affine maps are
//! graph convolutions over the learned adjacency, unrolled over the input
//! window. Weights are shared by all nodes.

use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{uniform_fan_in, Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Gate weights `(1+o) × o` and biases `o` for the reset, update and
/// candidate gates.
#[derive(Debug, Clone)]
pub struct RgcuParams {
    pub w_reset: ParamId,
    pub w_update: ParamId,
    pub w_candidate: ParamId,
    pub b_reset: ParamId,
    pub b_update: ParamId,
    pub b_candidate: ParamId,
    pub hidden_dim: usize,
}

/// The six gate tensors bound to a tape.
#[derive(Clone, Copy)]
pub struct RgcuVars<'t> {
    pub w_reset: Var<'t>,
    pub w_update: Var<'t>,
    pub w_candidate: Var<'t>,
    pub b_reset: Var<'t>,
    pub b_update: Var<'t>,
    pub b_candidate: Var<'t>,
}

impl RgcuParams {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, hidden_dim: usize) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden dimension must be positive".into()));
        }
        let fan_in = 1 + hidden_dim;
        let mut add = |name: &str, shape: &[usize]| {
            store.add(
                format!("rgcu.{name}"),
                ParamGroup::Generator,
                uniform_fan_in(rng, shape, fan_in),
            )
        };
        Ok(RgcuParams {
            w_reset: add("w_reset", &[fan_in, hidden_dim]),
            w_update: add("w_update", &[fan_in, hidden_dim]),
            w_candidate: add("w_candidate", &[fan_in, hidden_dim]),
            b_reset: add("b_reset", &[hidden_dim]),
            b_update: add("b_update", &[hidden_dim]),
            b_candidate: add("b_candidate", &[hidden_dim]),
            hidden_dim,
        })
    }

    pub fn bind<'t>(&self, p: &Bound<'t>) -> RgcuVars<'t> {
        RgcuVars {
            w_reset: p.var(self.w_reset),
            w_update: p.var(self.w_update),
            w_candidate: p.var(self.w_candidate),
            b_reset: p.var(self.b_reset),
            b_update: p.var(self.b_update),
            b_candidate: p.var(self.b_candidate),
        }
    }

    pub fn all(&self) -> [ParamId; 6] {
        [
            self.w_reset,
            self.w_update,
            self.w_candidate,
            self.b_reset,
            self.b_update,
            self.b_candidate,
        ]
    }
}

/// `adj · features · W + b` for every batch entry.
///
/// `adj` is `[1, N, N]` (or `[N, N]`), `features` `[B, N, f]`, `W` `[f, o]`, `b` `[o]`.
pub fn graph_propagate<'t>(adj: Var<'t>, features: Var<'t>, w: Var<'t>, b: Var<'t>) -> Var<'t> {
    adj.matmul(features).matmul(w).add_bias(b)
}

/// Shape-checked [`graph_propagate`] on plain tensors.
pub fn graph_propagate_tensors(adj: &Tensor, features: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let fs = features.shape();
    if fs.len() != 3 {
        return Err(Error::Shape(format!("features must be [B, N, f], got {fs:?}")));
    }
    let n = fs[1];
    let adj_ok = matches!(adj.shape(), [a, c] | [1, a, c] if *a == n && *c == n);
    let w_ok = w.rank() == 2 && w.shape()[0] == fs[2];
    let b_ok = b.rank() == 1 && w_ok && b.shape()[0] == w.shape()[1];
    if !(adj_ok && w_ok && b_ok) {
        return Err(Error::Shape(format!(
            "graph_propagate: adj {:?}, features {fs:?}, W {:?}, b {:?}",
            adj.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let tape = Tape::new();
    let out = graph_propagate(
        tape.constant(adj.clone()),
        tape.constant(features.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let v = out.value();
    Ok((*v).clone())
}

/// One recurrent step. `x_t` is `[B, N, 1]`, `h_prev` `[B, N, o]`.
pub fn rgcu_step<'t>(x_t: Var<'t>, h_prev: Var<'t>, adj: Var<'t>, p: &RgcuVars<'t>) -> Var<'t> {
    // adj·[x‖h] is shared by the reset and update gates
    let mixed = adj.matmul(x_t.concat_last(h_prev));
    let reset = mixed.matmul(p.w_reset).add_bias(p.b_reset).sigmoid();
    let update = mixed.matmul(p.w_update).add_bias(p.b_update).sigmoid();
    let gated = x_t.concat_last(reset.mul(h_prev));
    let candidate = graph_propagate(adj, gated, p.w_candidate, p.b_candidate).tanh();
    // h = u ⊙ h_prev + (1 − u) ⊙ c  =  c + u ⊙ (h_prev − c)
    candidate.add(update.mul(h_prev.sub(candidate)))
}

/// Runs [`rgcu_step`] over every step of `[B, w, N]` inputs, returning the
/// final state `[B, N, o]`.
pub fn encode<'t>(inputs: &Tensor, adj: Var<'t>, p: &RgcuVars<'t>, h0: Var<'t>) -> Result<Var<'t>> {
    let shape = inputs.shape();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::Shape(format!(
            "encoder inputs must be [B, w, N] with w >= 1, got {shape:?}"
        )));
    }
    let h0_shape = h0.shape();
    if h0_shape.len() != 3 || h0_shape[0] != shape[0] || h0_shape[1] != shape[2] {
        return Err(Error::Shape(format!(
            "initial state {h0_shape:?} does not match inputs {shape:?}"
        )));
    }
    let tape = h0.tape();
    let mut h = h0;
    for t in 0..shape[1] {
        let x = tape.constant(inputs.time_slice(t));
        h = rgcu_step(x, h, adj, p);
    }
    Ok(h)
}
