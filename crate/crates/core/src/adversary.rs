//! Filtering of group-relevant information, the group discriminator, and
//! the adversarial and orthogonality losses.

use rand::Rng;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Bound, Mlp3, NormMode, NormUpdate, ParamGroup, ParamStore, LEAKY_SLOPE};

/// Denominator floor for the row cosine; rows below it contribute 0.
pub const COSINE_EPS: f64 = 1e-12;

/// One filter: three affine layers followed by a batch-norm stage.
#[derive(Debug, Clone)]
pub struct Filter {
    pub layers: Mlp3,
    pub norm: BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Mean,
}

/// K filters whose outputs are fused into the group-irrelevant state.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub filters: Vec<Filter>,
    pub fusion: Fusion,
}

impl FilterBank {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, hidden: usize, k: usize) -> Self {
        let filters = (0..k)
            .map(|i| Filter {
                layers: Mlp3::new(
                    store,
                    rng,
                    &format!("filter.{i}"),
                    ParamGroup::Generator,
                    [hidden; 4],
                    None,
                ),
                norm: BatchNorm::new(store, &format!("filter.{i}.norm"), ParamGroup::Generator, hidden),
            })
            .collect();
        FilterBank {
            filters,
            fusion: Fusion::Mean,
        }
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Applies every filter to `h`. In batch-statistics modes the observed
    /// statistics are returned so the caller can update running estimates.
    pub fn filter_apply<'t>(&self, p: &Bound<'t>, h: Var<'t>, mode: NormMode) -> (Vec<Var<'t>>, Vec<NormUpdate>) {
        let rows = h.value().len() / h.shape().last().copied().unwrap_or(1).max(1);
        let mut outs = Vec::with_capacity(self.filters.len());
        let mut updates = Vec::new();
        for (i, f) in self.filters.iter().enumerate() {
            let z = f.layers.forward(p, h);
            let (y, stats) = f.norm.forward(p, z, mode);
            if let Some((mean, var)) = stats {
                updates.push(NormUpdate {
                    layer: i,
                    mean,
                    var,
                    rows,
                });
            }
            outs.push(y);
        }
        (outs, updates)
    }

    pub fn apply_norm_updates(&self, store: &mut ParamStore, updates: &[NormUpdate]) {
        for u in updates {
            self.filters[u.layer]
                .norm
                .update_running(store, &u.mean, &u.var, u.rows);
        }
    }
}

/// Element-wise mean of equally shaped tensors.
pub fn fuse<'t>(filtered: &[Var<'t>]) -> Result<Var<'t>> {
    let first = filtered
        .first()
        .ok_or_else(|| Error::InvalidArgument("fusion of zero filtered representations".into()))?;
    let shape = first.shape();
    let mut acc = *first;
    for v in &filtered[1..] {
        if v.shape() != shape {
            return Err(Error::Shape(format!("fusion of {shape:?} with {:?}", v.shape())));
        }
        acc = acc.add(*v);
    }
    if filtered.len() == 1 {
        return Ok(acc);
    }
    Ok(acc.scale(1.0 / filtered.len() as f64))
}

/// The two mappers that bring Ĥ (`o` features) and C (`K` features) into a
/// shared `o`-dimensional space.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub mapper_h: Mlp3,
    pub mapper_c: Mlp3,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, hidden: usize, k: usize) -> Self {
        Discriminator {
            mapper_h: Mlp3::new(
                store,
                rng,
                "disc.mapper_h",
                ParamGroup::Discriminator,
                [hidden; 4],
                Some(LEAKY_SLOPE),
            ),
            mapper_c: Mlp3::new(
                store,
                rng,
                "disc.mapper_c",
                ParamGroup::Discriminator,
                [k, hidden, hidden, hidden],
                Some(LEAKY_SLOPE),
            ),
        }
    }

    /// Mean over samples of `(1/N) Σ_i ‖M(Ĥ)_i − M(C)_i‖²`.
    pub fn adversarial_loss<'t>(&self, p: &Bound<'t>, h_hat: Var<'t>, c: Var<'t>) -> Result<Var<'t>> {
        let (hs, cs) = (h_hat.shape(), c.shape());
        if hs.len() != 3 || cs.len() != 3 || hs[..2] != cs[..2] {
            return Err(Error::Shape(format!("adversarial loss: H_hat {hs:?} vs C {cs:?}")));
        }
        let mh = self.mapper_h.forward(p, h_hat);
        let mc = self.mapper_c.forward(p, c);
        Ok(mapped_distance(mh, mc))
    }
}

/// Mean over the leading `B × N` rows of squared Euclidean row distances.
pub fn mapped_distance<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    let shape = a.shape();
    let rows: usize = shape[..shape.len() - 1].iter().product();
    a.sub(b).square().sum().scale(1.0 / rows as f64)
}

/// Mean over samples of `(1/N) Σ_i |cos(Ĥ_i, H_i)|`.
pub fn orthogonality_loss<'t>(h: Var<'t>, h_hat: Var<'t>) -> Result<Var<'t>> {
    if h.shape() != h_hat.shape() {
        return Err(Error::Shape(format!(
            "orthogonality loss: H {:?} vs H_hat {:?}",
            h.shape(),
            h_hat.shape()
        )));
    }
    Ok(h_hat.abs_cosine_rows(h, COSINE_EPS).mean())
}
