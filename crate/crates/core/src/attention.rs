//! Single-worker sparse graph attention: forward, exact reverse-mode
//! backward, and an independent per-node oracle.
//!
//! The forward pass composes 4 dense matmuls (Q/K/V projections plus the
//! residual projection), one SDDMM, one edge softmax, and one SpMM. The
//! backward pass needs exactly 3 SpMM and 1 SDDMM on top of the dense
//! gradients; [`crate::census`] counts both decompositions.

use std::sync::Arc;

use crate::dense::{matmul, DenseMatrix, HeadedMatrix};
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::scalar::Scalar;
use crate::sparse::{edge_softmax, sddmm, spmm, EdgeValues};

/// The four projection matrices of one attention block, each `d x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgaWeights<T> {
    pub w_q: DenseMatrix<T>,
    pub w_k: DenseMatrix<T>,
    pub w_v: DenseMatrix<T>,
    pub w_o: DenseMatrix<T>,
}

impl<T: Scalar> SgaWeights<T> {
    pub fn new(
        w_q: DenseMatrix<T>,
        w_k: DenseMatrix<T>,
        w_v: DenseMatrix<T>,
        w_o: DenseMatrix<T>,
    ) -> Result<Self> {
        let d = w_q.rows();
        for (name, w) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v), ("w_o", &w_o)] {
            if w.rows() != d || w.cols() != d {
                return Err(Error::Shape(format!("{name} must be {d}x{d}")));
            }
        }
        Ok(Self { w_q, w_k, w_v, w_o })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn random_uniform(d: usize, lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        Self {
            w_q: DenseMatrix::random_uniform(d, d, lo, hi, rng),
            w_k: DenseMatrix::random_uniform(d, d, lo, hi, rng),
            w_v: DenseMatrix::random_uniform(d, d, lo, hi, rng),
            w_o: DenseMatrix::random_uniform(d, d, lo, hi, rng),
        }
    }
}

/// Gradients produced by [`sga_backward`], mirroring the forward inputs.
#[derive(Clone, Debug)]
pub struct SgaGrads<T> {
    pub x: DenseMatrix<T>,
    pub w_q: DenseMatrix<T>,
    pub w_k: DenseMatrix<T>,
    pub w_v: DenseMatrix<T>,
    pub w_o: DenseMatrix<T>,
}

impl<T: Scalar> SgaGrads<T> {
    pub fn zeros_like(x_rows: usize, d: usize) -> Self {
        Self {
            x: DenseMatrix::zeros(x_rows, d),
            w_q: DenseMatrix::zeros(d, d),
            w_k: DenseMatrix::zeros(d, d),
            w_v: DenseMatrix::zeros(d, d),
            w_o: DenseMatrix::zeros(d, d),
        }
    }

    /// Flat view in a fixed order (x, w_q, w_k, w_v, w_o) for comparisons.
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for m in [&self.x, &self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            out.extend_from_slice(m.data());
        }
        out
    }
}

/// Activations retained for the backward pass: the block input, the three
/// projections in head layout, and the normalized attention values. The raw
/// scores are not kept; the softmax backward only needs its output.
#[derive(Clone, Debug)]
pub struct SgaCache<T> {
    pub(crate) x: DenseMatrix<T>,
    pub(crate) q: HeadedMatrix<T>,
    pub(crate) k: HeadedMatrix<T>,
    pub(crate) v: HeadedMatrix<T>,
    pub(crate) u: EdgeValues<T>,
    pub(crate) weights: SgaWeights<T>,
}

fn check_sga_inputs<T: Scalar>(
    x: &DenseMatrix<T>,
    g: &CsrGraph,
    weights: &SgaWeights<T>,
    heads: usize,
) -> Result<()> {
    if x.rows() != g.num_rows() || g.num_rows() != g.num_cols() {
        return Err(Error::Shape(format!(
            "features {}x{} vs graph {}x{}",
            x.rows(),
            x.cols(),
            g.num_rows(),
            g.num_cols()
        )));
    }
    if x.cols() != weights.dim() {
        return Err(Error::Shape(format!(
            "feature dim {} vs weight dim {}",
            x.cols(),
            weights.dim()
        )));
    }
    if heads == 0 || weights.dim() % heads != 0 {
        return Err(Error::Config(format!(
            "head count {heads} must divide hidden dim {}",
            weights.dim()
        )));
    }
    Ok(())
}

/// Attention scale: the square root of the full hidden dimension, applied
/// identically in every head.
pub fn attention_scale<T: Scalar>(d: usize) -> T {
    T::from_f64_c((d as f64).sqrt())
}

/// Full sparse-graph-attention forward pass over one block:
/// projections, masked attention scores, neighborhood softmax, weighted
/// aggregation, and the residual projection.
pub fn sga_forward<T: Scalar>(
    x: &DenseMatrix<T>,
    g: &Arc<CsrGraph>,
    weights: &SgaWeights<T>,
    heads: usize,
) -> Result<(DenseMatrix<T>, SgaCache<T>)> {
    check_sga_inputs(x, g, weights, heads)?;
    let d = weights.dim();
    let q = HeadedMatrix::from_dense(matmul(x, &weights.w_q)?, heads)?;
    let k = HeadedMatrix::from_dense(matmul(x, &weights.w_k)?, heads)?;
    let v = HeadedMatrix::from_dense(matmul(x, &weights.w_v)?, heads)?;
    let z = sddmm(g, &q, &k)?;
    let u = edge_softmax(&z, attention_scale::<T>(d))?;
    let y = spmm(&u, &v)?;
    let mut out = matmul(x, &weights.w_o)?;
    out.add_assign(&y.to_dense())?;
    let cache = SgaCache {
        x: x.clone(),
        q,
        k,
        v,
        u,
        weights: weights.clone(),
    };
    Ok((out, cache))
}

/// Softmax backward per row and head: with `s_it = <du, u>` over row `i`'s
/// edges, `dz = u * (du - s_it) / scale`.
pub(crate) fn edge_softmax_backward<T: Scalar>(
    u: &EdgeValues<T>,
    du: &EdgeValues<T>,
    scale: T,
) -> EdgeValues<T> {
    let g = u.graph();
    let heads = u.heads();
    let mut dz = EdgeValues::zeros(Arc::clone(g), heads);
    for i in 0..g.num_rows() {
        let edges = g.row_edges(i);
        for t in 0..heads {
            let mut dot = T::zero();
            for e in edges.clone() {
                dot += du.get(e, t) * u.get(e, t);
            }
            for e in edges.clone() {
                dz.set(e, t, u.get(e, t) * (du.get(e, t) - dot) / scale);
            }
        }
    }
    dz
}

/// Core of the backward pass shared by the single-worker and distributed
/// paths: given the cotangent of the aggregation output `y` (head layout),
/// produce the cotangents of u-pattern rows' `q`, of `k` and `v` (indexed by
/// pattern columns), via 1 SDDMM + 3 SpMM.
pub(crate) struct SparseBackward<T> {
    pub dq: HeadedMatrix<T>,
    pub dk_cols: HeadedMatrix<T>,
    pub dv_cols: HeadedMatrix<T>,
}

pub(crate) fn sparse_attention_backward<T: Scalar>(
    dy: &HeadedMatrix<T>,
    q: &HeadedMatrix<T>,
    k: &HeadedMatrix<T>,
    v: &HeadedMatrix<T>,
    u: &EdgeValues<T>,
    scale: T,
) -> Result<SparseBackward<T>> {
    let g = u.graph();
    let (gt, perm) = g.transpose();
    let gt = Arc::new(gt);
    let du = sddmm(g, dy, v)?;
    let ut = u.permute_onto(Arc::clone(&gt), &perm)?;
    let dv_cols = spmm(&ut, dy)?;
    let dz = edge_softmax_backward(u, &du, scale);
    let dq = spmm(&dz, k)?;
    let dzt = dz.permute_onto(gt, &perm)?;
    let dk_cols = spmm(&dzt, q)?;
    Ok(SparseBackward { dq, dk_cols, dv_cols })
}

/// Exact reverse-mode gradients of [`sga_forward`].
pub fn sga_backward<T: Scalar>(
    grad_out: &DenseMatrix<T>,
    cache: &SgaCache<T>,
) -> Result<SgaGrads<T>> {
    let d = cache.weights.dim();
    if grad_out.rows() != cache.x.rows() || grad_out.cols() != d {
        return Err(Error::State(format!(
            "cotangent {}x{} does not match cached output {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            cache.x.rows(),
            d
        )));
    }
    let heads = cache.q.heads();
    let xt = cache.x.transpose();
    let w_o_grad = matmul(&xt, grad_out)?;
    let mut x_grad = matmul(grad_out, &cache.weights.w_o.transpose())?;

    let dy = HeadedMatrix::from_dense(grad_out.clone(), heads)?;
    let sb = sparse_attention_backward(
        &dy,
        &cache.q,
        &cache.k,
        &cache.v,
        &cache.u,
        attention_scale::<T>(d),
    )?;
    let dq = sb.dq.to_dense();
    let dk = sb.dk_cols.to_dense();
    let dv = sb.dv_cols.to_dense();

    let w_q_grad = matmul(&xt, &dq)?;
    let w_k_grad = matmul(&xt, &dk)?;
    let w_v_grad = matmul(&xt, &dv)?;
    x_grad.add_assign(&matmul(&dq, &cache.weights.w_q.transpose())?)?;
    x_grad.add_assign(&matmul(&dk, &cache.weights.w_k.transpose())?)?;
    x_grad.add_assign(&matmul(&dv, &cache.weights.w_v.transpose())?)?;

    Ok(SgaGrads {
        x: x_grad,
        w_q: w_q_grad,
        w_k: w_k_grad,
        w_v: w_v_grad,
        w_o: w_o_grad,
    })
}

/// Brute-force per-node reference: explicit scalar loops over each node's
/// neighbor set, no shared kernels. Used exclusively as a correctness oracle
/// for the kernel-composed path.
pub fn sga_oracle<T: Scalar>(
    x: &DenseMatrix<T>,
    g: &CsrGraph,
    weights: &SgaWeights<T>,
    heads: usize,
) -> Result<DenseMatrix<T>> {
    check_sga_inputs(x, g, weights, heads)?;
    let n = g.num_rows();
    let d = weights.dim();
    let hd = d / heads;
    let scale = (d as f64).sqrt();

    let project = |node: usize, w: &DenseMatrix<T>, head: usize| -> Vec<f64> {
        let mut out = vec![0.0f64; hd];
        for (c, o) in out.iter_mut().enumerate() {
            let col = head * hd + c;
            let mut acc = 0.0;
            for r in 0..d {
                acc += x.get(node, r).to_f64_c() * w.get(r, col).to_f64_c();
            }
            *o = acc;
        }
        out
    };

    let mut out = DenseMatrix::zeros(n, d);
    for i in 0..n {
        // Residual term: row i of X times W_o.
        for c in 0..d {
            let mut acc = 0.0;
            for r in 0..d {
                acc += x.get(i, r).to_f64_c() * weights.w_o.get(r, c).to_f64_c();
            }
            out.set(i, c, T::from_f64_c(acc));
        }
        let neighbors = g.row(i);
        if neighbors.is_empty() {
            continue;
        }
        for t in 0..heads {
            let q_i = project(i, &weights.w_q, t);
            let mut scores = Vec::with_capacity(neighbors.len());
            for &j in neighbors {
                let k_j = project(j, &weights.w_k, t);
                let dot: f64 = q_i.iter().zip(&k_j).map(|(a, b)| a * b).sum();
                scores.push(dot / scale);
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights_exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let denom: f64 = weights_exp.iter().sum();
            for (&j, w) in neighbors.iter().zip(&weights_exp) {
                let alpha = w / denom;
                let v_j = project(j, &weights.w_v, t);
                for c in 0..hd {
                    let col = t * hd + c;
                    let cur = out.get(i, col).to_f64_c();
                    out.set(i, col, T::from_f64_c(cur + alpha * v_j[c]));
                }
            }
        }
    }
    Ok(out)
}
