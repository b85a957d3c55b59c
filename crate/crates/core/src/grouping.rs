//! Variable grouping: soft cluster assignments from the hidden state and
//! the spectral relaxation of the K-means objective,
//! `Tr(H Hᵀ) − Tr(Fᵀ H Hᵀ F)` with `Fᵀ F = I`, whose minimizing `F` for a
//! fixed `H` is the top-K left singular subspace of `H`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Linear, Mlp3, ParamGroup, ParamStore, LEAKY_SLOPE};
use crate::tensor::Tensor;

/// Tolerance on `‖FᵀF − I‖_F` accepted by [`clustering_loss`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Column-orthonormal `N × K` cluster indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIndicator {
    f: Tensor,
}

impl ClusterIndicator {
    /// Wraps `f` after checking orthonormality.
    pub fn new(f: Tensor) -> Result<Self> {
        if f.rank() != 2 || f.shape()[1] == 0 || f.shape()[1] > f.shape()[0] {
            return Err(Error::Shape(format!(
                "indicator must be N x K with 1 <= K <= N, got {:?}",
                f.shape()
            )));
        }
        let err = orthonormality_error(&f);
        if err > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal(err));
        }
        Ok(ClusterIndicator { f })
    }

    /// Random orthonormal initialization (QR of a Gaussian matrix).
    pub fn orthogonal_init(n: usize, k: usize, seed: u64) -> Result<Self> {
        check_k(n, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
        let q = orthonormalize_columns(&DMatrix::from_row_slice(n, k, &data), k);
        Self::new(to_tensor(&q))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.f
    }

    pub fn n(&self) -> usize {
        self.f.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.f.shape()[1]
    }

    /// Projection `F Fᵀ` onto the indicator subspace (sign/rotation free).
    pub fn projector(&self) -> Tensor {
        self.f.matmul(&self.f.transpose_last2()).unwrap()
    }
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count must lie in 1..={n}, got {k}"
        )));
    }
    Ok(())
}

/// Frobenius norm of `FᵀF − I`.
pub fn orthonormality_error(f: &Tensor) -> f64 {
    let k = f.shape()[1];
    let gram = f.transpose_last2().matmul(f).unwrap();
    let eye = Tensor::eye(k);
    gram.zip_with(&eye, |a, b| (a - b) * (a - b)).unwrap().sum().sqrt()
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::from_vec(&[r, c], data).unwrap()
}

/// Modified Gram–Schmidt (two passes) over the first `k` columns of `m`,
/// completing with standard basis vectors when a column is dependent.
fn orthonormalize_columns(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(k);
    let candidates = (0..m.ncols().min(k))
        .map(|j| m.column(j).into_owned())
        .chain((0..n).map(|i| nalgebra::DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 })));
    for mut v in candidates {
        if basis.len() == k {
            break;
        }
        let scale = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-10 * scale.max(1.0) {
            basis.push(v / norm);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Top-K left singular vectors of the `N × o` reference matrix, completed
/// to K orthonormal columns when K exceeds the number available.
pub fn update_indicator(reference: &Tensor, k: usize) -> Result<ClusterIndicator> {
    if reference.rank() != 2 {
        return Err(Error::Shape(format!(
            "reference must be N x o, got {:?}",
            reference.shape()
        )));
    }
    let (n, o) = (reference.shape()[0], reference.shape()[1]);
    check_k(n, k)?;
    let h = DMatrix::from_row_slice(n, o, reference.data());
    let svd = h.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let take = k.min(order.len());
    let cols: Vec<_> = order[..take].iter().map(|&j| u.column(j).into_owned()).collect();
    let top = if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    ClusterIndicator::new(to_tensor(&orthonormalize_columns(&top, k)))
}

/// Spectral K-means loss, averaged over the batch:
/// `mean_b ‖H_b‖²_F − ‖Fᵀ H_b‖²_F`.
pub fn clustering_loss<'t>(h_proj: Var<'t>, indicator: &ClusterIndicator) -> Result<Var<'t>> {
    let shape = h_proj.shape();
    if shape.len() != 3 || shape[1] != indicator.n() {
        return Err(Error::Shape(format!(
            "clustering loss: H {shape:?} vs indicator {:?}",
            indicator.matrix().shape()
        )));
    }
    let err = orthonormality_error(indicator.matrix());
    if err > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal(err));
    }
    let tape = h_proj.tape();
    let (n, k) = (indicator.n(), indicator.k());
    let ft = tape.constant(indicator.matrix().transpose_last2().reshape(&[1, k, n]).unwrap());
    let total = h_proj.square().sum();
    let captured = ft.matmul(h_proj).square().sum();
    Ok(total.sub(captured).scale(1.0 / shape[0] as f64))
}

/// [`clustering_loss`] on a plain tensor (`[N, o]` or `[B, N, o]`).
pub fn clustering_loss_value(h_proj: &Tensor, indicator: &ClusterIndicator) -> Result<f64> {
    let h = match h_proj.rank() {
        2 => h_proj.reshape(&[1, h_proj.shape()[0], h_proj.shape()[1]])?,
        3 => h_proj.clone(),
        _ => return Err(Error::Shape(format!("bad H shape {:?}", h_proj.shape()))),
    };
    let tape = Tape::new();
    Ok(clustering_loss(tape.constant(h), indicator)?.value().item())
}

/// The projection layer applied before the clustering loss and the
/// three-layer cluster head producing K logits per variable.
#[derive(Debug, Clone)]
pub struct GroupingHeads {
    pub proj: Linear,
    pub cluster_head: Mlp3,
    pub n_clusters: usize,
}

impl GroupingHeads {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, hidden: usize, k: usize) -> Self {
        GroupingHeads {
            proj: Linear::new(store, rng, "grouping.proj", ParamGroup::Generator, hidden, hidden),
            cluster_head: Mlp3::new(
                store,
                rng,
                "grouping.cluster_head",
                ParamGroup::Generator,
                [hidden, hidden, hidden, k],
                Some(LEAKY_SLOPE),
            ),
            n_clusters: k,
        }
    }

    pub fn project<'t>(&self, p: &Bound<'t>, h: Var<'t>) -> Var<'t> {
        self.proj.forward(p, h)
    }

    /// Soft assignment `[B, N, K]`: softmax over the cluster head's logits.
    pub fn cluster_assign<'t>(&self, p: &Bound<'t>, h: Var<'t>) -> Var<'t> {
        self.cluster_head.forward(p, h).softmax_last()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn full_rank_indicator_gives_zero_loss() {
        let f = ClusterIndicator::orthogonal_init(4, 4, 3).unwrap();
        let h = random(&[4, 3], 1);
        assert!(clustering_loss_value(&h, &f).unwrap().abs() < 1e-12);
    }

    #[test]
    fn orthonormal_rows_single_cluster() {
        // rows of H orthonormal => H Hᵀ = I_N
        let h = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        let f = ClusterIndicator::orthogonal_init(3, 1, 9).unwrap();
        assert!((clustering_loss_value(&h, &f).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_reference_recovers_left_vector() {
        let u = [0.6, 0.0, -0.8];
        let v = [2.0, -1.0];
        let h = Tensor::from_vec(&[3, 2], u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()).unwrap();
        let f = update_indicator(&h, 1).unwrap();
        let col = f.matrix().data();
        let dot: f64 = col.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn completes_when_k_exceeds_rank() {
        let h = random(&[6, 2], 5);
        let f = update_indicator(&h, 4).unwrap();
        assert_eq!(f.matrix().shape(), &[6, 4]);
        assert!(orthonormality_error(f.matrix()) < 1e-10);
        assert!(update_indicator(&h, 7).is_err());
        let zero = update_indicator(&Tensor::zeros(&[3, 2]), 2).unwrap();
        assert!(orthonormality_error(zero.matrix()) < 1e-10);
    }

    #[test]
    fn rejects_non_orthonormal_indicator() {
        assert!(matches!(
            ClusterIndicator::new(Tensor::filled(&[3, 2], 1.0)),
            Err(Error::NotOrthonormal(_))
        ));
    }

    #[test]
    fn heads_shapes_and_softmax() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let heads = GroupingHeads::new(&mut store, &mut rng, 3, 2);
        heads.cluster_head.set_constant_output(&mut store, &[0.0, 0.0]);
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let h = tape.constant(random(&[2, 4, 3], 1));
        let c = heads.cluster_assign(&p, h).value();
        assert_eq!(c.shape(), &[2, 4, 2]);
        assert!(c.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        heads.proj.set_identity(&mut store);
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false);
        let hv = random(&[2, 4, 3], 2);
        let out = heads.project(&p, tape.constant(hv.clone())).value();
        assert_eq!(*out, hv);
    }
}
