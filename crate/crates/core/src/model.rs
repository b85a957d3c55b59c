//! The full forecaster: adaptive graph, recurrent graph encoder, grouping
//! heads, filter bank, optional discriminator and prediction head, with
//! all parameters held in one [`ParamStore`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adversary::{fuse, Discriminator, FilterBank};
use crate::autograd::{Tape, Var};
use crate::config::TrainConfig;
use crate::encoder::{encode, RgcuParams};
use crate::error::{Error, Result};
use crate::graph::{default_top_n, AdaptiveGraph};
use crate::grouping::GroupingHeads;
use crate::nn::{Bound, NormMode, NormUpdate, ParamGroup, ParamStore};
use crate::predictor::{combine, Predictor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_vars: usize,
    pub window: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub clusters: usize,
    pub top_n: usize,
}

impl ModelDims {
    pub fn from_config(cfg: &TrainConfig, n_vars: usize) -> Result<Self> {
        let top_n = cfg.top_n.unwrap_or_else(|| default_top_n(n_vars));
        let dims = ModelDims {
            n_vars,
            window: cfg.window,
            horizon: cfg.horizon,
            hidden: cfg.hidden,
            embed_dim: cfg.embed_dim,
            clusters: cfg.clusters,
            top_n,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 || self.window == 0 || self.horizon == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        if self.clusters == 0 {
            return Err(Error::Config("cluster count must be positive".into()));
        }
        if self.top_n == 0 || self.top_n > self.n_vars {
            return Err(Error::Config(format!(
                "top_n must lie in 1..={}, got {}",
                self.n_vars, self.top_n
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ForecastModel {
    pub dims: ModelDims,
    pub store: ParamStore,
    pub graph: AdaptiveGraph,
    pub encoder: RgcuParams,
    pub heads: GroupingHeads,
    pub filters: FilterBank,
    pub discriminator: Option<Discriminator>,
    pub predictor: Predictor,
}

/// Every intermediate of one forward pass.
pub struct Forward<'t> {
    /// Final recurrent state `[B, N, o]`.
    pub hidden: Var<'t>,
    /// Projected state fed to the clustering loss.
    pub projected: Var<'t>,
    /// Soft group assignment `[B, N, K]`.
    pub assignment: Var<'t>,
    /// Group-irrelevant state Ĥ.
    pub filtered: Var<'t>,
    /// `H + Ĥ`.
    pub fused: Var<'t>,
    /// Forecast `[B, h, N]`.
    pub prediction: Var<'t>,
    pub norm_updates: Vec<NormUpdate>,
}

/// Plain-tensor snapshot of a forward pass.
#[derive(Debug, Clone)]
pub struct LatentBundle {
    pub hidden: Tensor,
    pub projected: Tensor,
    pub assignment: Tensor,
    pub filtered: Tensor,
    pub fused: Tensor,
    pub prediction: Tensor,
}

impl ForecastModel {
    /// Builds and randomly initializes a model. Parameters are created in a
    /// fixed order, so the same seed always yields the same store layout.
    pub fn new(dims: ModelDims, seed: u64, with_discriminator: bool) -> Result<Self> {
        dims.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = AdaptiveGraph::new(&mut store, dims.n_vars, dims.embed_dim, dims.top_n, seed)?;
        let encoder = RgcuParams::new(&mut store, &mut rng, dims.hidden)?;
        let heads = GroupingHeads::new(&mut store, &mut rng, dims.hidden, dims.clusters);
        let filters = FilterBank::new(&mut store, &mut rng, dims.hidden, dims.clusters);
        let predictor = Predictor::new(&mut store, &mut rng, dims.hidden, dims.horizon);
        let discriminator =
            with_discriminator.then(|| Discriminator::new(&mut store, &mut rng, dims.hidden, dims.clusters));
        Ok(ForecastModel {
            dims,
            store,
            graph,
            encoder,
            heads,
            filters,
            discriminator,
            predictor,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, inputs: &Tensor, mode: NormMode) -> Result<Forward<'t>> {
        let s = inputs.shape();
        if s.len() != 3 || s[2] != self.dims.n_vars || s[1] == 0 || s[0] == 0 {
            return Err(Error::Shape(format!(
                "inputs must be [B, w, {}], got {s:?}",
                self.dims.n_vars
            )));
        }
        let tape = p.var(self.graph.embedding).tape();
        let adj = self.graph.adjacency_with_self_loops(p);
        let h0 = tape.constant(Tensor::zeros(&[s[0], self.dims.n_vars, self.dims.hidden]));
        let hidden = encode(inputs, adj, &self.encoder.bind(p), h0)?;
        let projected = self.heads.project(p, hidden);
        let assignment = self.heads.cluster_assign(p, hidden);
        let (outs, norm_updates) = self.filters.filter_apply(p, hidden, mode);
        let filtered = fuse(&outs)?;
        let fused = combine(hidden, filtered)?;
        let prediction = self.predictor.predict(p, fused)?;
        Ok(Forward {
            hidden,
            projected,
            assignment,
            filtered,
            fused,
            prediction,
            norm_updates,
        })
    }

    /// Evaluation-mode forecast `[B, h, N]` (running normalization statistics).
    pub fn predict(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(self.latents(inputs, NormMode::Eval)?.prediction)
    }

    pub fn latents(&self, inputs: &Tensor, mode: NormMode) -> Result<LatentBundle> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, |_| false);
        let fw = self.forward(&p, inputs, mode)?;
        let v = |x: Var<'_>| (*x.value()).clone();
        Ok(LatentBundle {
            hidden: v(fw.hidden),
            projected: v(fw.projected),
            assignment: v(fw.assignment),
            filtered: v(fw.filtered),
            fused: v(fw.fused),
            prediction: v(fw.prediction),
        })
    }

    pub fn parameter_count(&self, group: ParamGroup) -> usize {
        self.store.count(group)
    }
}
