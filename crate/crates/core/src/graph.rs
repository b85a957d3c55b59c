//! Learned variable graph: a trainable node embedding whose rectified Gram
//! matrix, row-softmaxed and sparsified to the top-n neighbours per row,
//! serves as the adjacency for every graph convolution.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Embedding entries are drawn from N(0, 1/d).
pub fn init_node_embedding(n: usize, d: usize, seed: u64) -> Result<Tensor> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "node embedding needs N >= 1 and d >= 1, got N={n}, d={d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite scale");
    let data = (0..n * d).map(|_| dist.sample(&mut rng)).collect();
    Tensor::from_vec(&[n, d], data)
}

/// Default neighbour count for `n` variables.
pub fn default_top_n(n: usize) -> usize {
    if n <= 32 {
        n
    } else {
        10usize.max(n.div_ceil(20)).min(n)
    }
}

/// Dense adjacency `softmax_row(max(E Eᵀ, 0))`.
pub fn build_adjacency(embedding: &Tensor) -> Tensor {
    embedding
        .matmul(&embedding.transpose_last2())
        .expect("square gram")
        .map(|x| x.max(0.0))
        .softmax_last()
}

/// 0/1 mask keeping the `n` largest entries of each row; ties go to the
/// lower column index.
pub fn top_n_mask(adj: &Tensor, n: usize) -> Result<Tensor> {
    let cols = *adj.shape().last().unwrap_or(&0);
    if n == 0 || n > cols {
        return Err(Error::InvalidArgument(format!("top-n must lie in 1..={cols}, got {n}")));
    }
    let mut mask = Tensor::zeros(adj.shape());
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for (row, mrow) in adj.data().chunks(cols).zip(mask.data_mut().chunks_mut(cols)) {
        order.clear();
        order.extend(0..cols);
        // stable sort keeps lower indices first among equal values
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for &j in &order[..n] {
            mrow[j] = 1.0;
        }
    }
    Ok(mask)
}

/// Keeps the `n` largest entries per row at their values and zeroes the rest.
pub fn sparsify_topn(adj: &Tensor, n: usize) -> Result<Tensor> {
    let mask = top_n_mask(adj, n)?;
    adj.zip_with(&mask, |a, m| a * m)
}

/// The learnable embedding plus the sparsification setting.
#[derive(Debug, Clone)]
pub struct AdaptiveGraph {
    pub embedding: ParamId,
    pub n_nodes: usize,
    pub embed_dim: usize,
    pub top_n: usize,
}

impl AdaptiveGraph {
    pub fn new(store: &mut ParamStore, n: usize, d: usize, top_n: usize, seed: u64) -> Result<Self> {
        if top_n == 0 || top_n > n {
            return Err(Error::InvalidArgument(format!(
                "top-n must lie in 1..={n}, got {top_n}"
            )));
        }
        let embedding = store.add(
            "graph.node_embedding",
            ParamGroup::Generator,
            init_node_embedding(n, d, seed)?,
        );
        Ok(AdaptiveGraph {
            embedding,
            n_nodes: n,
            embed_dim: d,
            top_n,
        })
    }

    /// Differentiable sparsified adjacency `[1, N, N]` with a unit self-loop
    /// added after sparsification. The top-n selection itself is treated as
    /// a constant mask.
    pub fn adjacency_with_self_loops<'t>(&self, p: &Bound<'t>) -> Var<'t> {
        let e = p.var(self.embedding);
        let dense = e.matmul(e.transpose_last2()).relu().softmax_last();
        let tape = e.tape();
        let mask = top_n_mask(&dense.value(), self.top_n).expect("top_n validated");
        let n = self.n_nodes;
        dense
            .mul(tape.constant(mask))
            .add(tape.constant(Tensor::eye(n)))
            .reshape(&[1, n, n])
    }

    /// Current sparsified adjacency without the self-loop.
    pub fn sparse_adjacency(&self, store: &ParamStore) -> Tensor {
        let dense = build_adjacency(store.get(self.embedding));
        sparsify_topn(&dense, self.top_n).expect("top_n validated")
    }
}

/// Writes a dense matrix as CSV without a header.
pub fn write_matrix_csv(path: &Path, m: &Tensor) -> Result<()> {
    let cols = *m.shape().last().unwrap_or(&1);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for row in m.data().chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
