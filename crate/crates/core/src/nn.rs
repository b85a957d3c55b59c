//! Parameter storage, basic layers and the Adam optimizer.
//!
//! Modules never own tensors directly. They register their parameters in a
//! [`ParamStore`] and keep [`ParamId`] handles; a forward pass binds the
//! whole store onto a [`Tape`] and looks variables up by id.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autograd::{Gradients, NormStats, Tape, Var};
use crate::tensor::Tensor;

/// LeakyReLU negative slope used wherever an activation is unspecified.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Everything except the discriminator.
    Generator,
    Discriminator,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

impl ParamGroup {
    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Generator => 0,
            ParamGroup::Discriminator => 1,
            ParamGroup::Buffer => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ParamGroup::Generator),
            1 => Some(ParamGroup::Discriminator),
            2 => Some(ParamGroup::Buffer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, group, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(
            value.shape(),
            self.entries[id.0].value.shape(),
            "shape change for {}",
            self.entries[id.0].name
        );
        self.entries[id.0].value = value;
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self, group: ParamGroup) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].group == group)
            .map(ParamId)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of scalar parameters in `group`.
    pub fn count(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.len())
            .sum()
    }

    /// FNV-1a over the exact bit patterns of every value in `group`.
    pub fn checksum(&self, group: ParamGroup) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for e in self.entries.iter().filter(|e| e.group == group) {
            for v in e.value.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Binds every entry onto `tape`. Entries whose group satisfies
    /// `trainable` become gradient-tracking leaves, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(ParamGroup) -> bool) -> Bound<'t> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if trainable(e.group) {
                    tape.param(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape variables for every entry of a [`ParamStore`].
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Collects the gradient of each listed parameter (zeros when unused).
    pub fn grads(&self, grads: &Gradients, ids: &[ParamId]) -> Vec<Tensor> {
        ids.iter().map(|&id| grads.get_or_zeros(self.vars[id.0])).collect()
    }
}

/// Uniform initialization in `±1/√fan_in`.
pub fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Affine layer `x W + b` applied along the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            uniform_fan_in(rng, &[in_dim, out_dim], in_dim),
        );
        let bias = store.add(format!("{name}.bias"), group, uniform_fan_in(rng, &[out_dim], in_dim));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.var(self.weight)).add_bias(p.var(self.bias))
    }

    /// Sets the weight to the identity (square layers only) and the bias to zero.
    pub fn set_identity(&self, store: &mut ParamStore) {
        assert_eq!(self.in_dim, self.out_dim);
        store.set(self.weight, Tensor::eye(self.in_dim));
        store.set(self.bias, Tensor::zeros(&[self.out_dim]));
    }

    pub fn set_constant_output(&self, store: &mut ParamStore, bias: &[f64]) {
        store.set(self.weight, Tensor::zeros(&[self.in_dim, self.out_dim]));
        store.set(self.bias, Tensor::from_vec(&[self.out_dim], bias.to_vec()).unwrap());
    }
}

/// Three stacked affine layers with an optional LeakyReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
    pub slope: Option<f64>,
}

impl Mlp3 {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        dims: [usize; 4],
        slope: Option<f64>,
    ) -> Self {
        let layers = [0, 1, 2].map(|i| Linear::new(store, rng, &format!("{name}.{i}"), group, dims[i], dims[i + 1]));
        Mlp3 { layers, slope }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(p, h);
            if i < 2 {
                if let Some(s) = self.slope {
                    h = h.leaky_relu(s);
                }
            }
        }
        h
    }

    pub fn set_identity(&self, store: &mut ParamStore) {
        for l in &self.layers {
            l.set_identity(store);
        }
    }

    /// Zeroes the last layer's weight so the output is `bias` everywhere.
    pub fn set_constant_output(&self, store: &mut ParamStore, bias: &[f64]) {
        self.layers[2].set_constant_output(store, bias);
    }
}

/// Batch normalization over the last (feature) axis.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Batch statistics, running statistics updated afterwards.
    Train,
    /// Batch statistics, running statistics left untouched.
    TrainFrozen,
    /// Running statistics.
    Eval,
}

/// Per-feature (mean, biased variance) of one batch.
pub type BatchStats = (Vec<f64>, Vec<f64>);

/// Statistics observed by a batch-norm layer during a training forward pass.
#[derive(Debug, Clone)]
pub struct NormUpdate {
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub rows: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), group, Tensor::ones(&[dim])),
            beta: store.add(format!("{name}.beta"), group, Tensor::zeros(&[dim])),
            running_mean: store.add(
                format!("{name}.running_mean"),
                ParamGroup::Buffer,
                Tensor::zeros(&[dim]),
            ),
            running_var: store.add(format!("{name}.running_var"), ParamGroup::Buffer, Tensor::ones(&[dim])),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Returns the output and, in batch-statistics modes, the observed
    /// (mean, biased variance).
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, mode: NormMode) -> (Var<'t>, Option<BatchStats>) {
        match mode {
            NormMode::Train | NormMode::TrainFrozen => {
                let (y, m, v) = x.batch_norm(p.var(self.gamma), p.var(self.beta), NormStats::Batch { eps: self.eps });
                (y, Some((m, v)))
            }
            NormMode::Eval => {
                let mean = p.var(self.running_mean).value();
                let var = p.var(self.running_var).value();
                let (y, _, _) = x.batch_norm(
                    p.var(self.gamma),
                    p.var(self.beta),
                    NormStats::Fixed {
                        mean: mean.data(),
                        var: var.data(),
                        eps: self.eps,
                    },
                );
                (y, None)
            }
        }
    }

    /// Exponential moving average update; the variance uses the unbiased estimate.
    pub fn update_running(&self, store: &mut ParamStore, mean: &[f64], var: &[f64], rows: usize) {
        let m = self.momentum;
        let correction = if rows > 1 {
            rows as f64 / (rows as f64 - 1.0)
        } else {
            1.0
        };
        let rm = store.get_mut(self.running_mean);
        for (r, &b) in rm.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        let rv = store.get_mut(self.running_var);
        for (r, &b) in rv.data_mut().iter_mut().zip(var) {
            *r = (1.0 - m) * *r + m * b * correction;
        }
    }

    /// Eval-mode pass-through: unit scale, zero shift, and running
    /// statistics that make the normalization an exact identity.
    pub fn set_pass_through(&self, store: &mut ParamStore) {
        let dim = store.get(self.gamma).len();
        store.set(self.gamma, Tensor::ones(&[dim]));
        store.set(self.beta, Tensor::zeros(&[dim]));
        store.set(self.running_mean, Tensor::zeros(&[dim]));
        store.set(self.running_var, Tensor::filled(&[dim], 1.0 - self.eps));
    }
}

/// Adaptive moment estimation over a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub params: Vec<ParamId>,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, params: Vec<ParamId>, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update. `grads` is aligned with `self.params`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) {
        assert_eq!(grads.len(), self.params.len());
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (k, &id) in self.params.iter().enumerate() {
            let g = grads[k].data();
            let m = self.first_moment[k].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.second_moment[k].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = self.first_moment[k].data();
            let v = self.second_moment[k].data();
            let w = store.get_mut(id).data_mut();
            for i in 0..w.len() {
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
