//! Per-edge value storage and the sparse attention kernels: SDDMM, edge
//! softmax, and SpMM.

use std::sync::Arc;

use crate::census;
use crate::dense::HeadedMatrix;
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::scalar::Scalar;

/// Scalar values attached to every nonzero of a CSR pattern, one per
/// attention head, laid out `[edge][head]` in CSR nonzero order. The pattern
/// is shared, never copied, and the values can never grow fill-in.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeValues<T> {
    graph: Arc<CsrGraph>,
    heads: usize,
    data: Vec<T>,
}

impl<T: Scalar> EdgeValues<T> {
    pub fn zeros(graph: Arc<CsrGraph>, heads: usize) -> Self {
        let len = graph.num_edges() * heads;
        Self { graph, heads, data: vec![T::zero(); len] }
    }

    /// Constant value on every (edge, head) slot.
    pub fn constant(graph: Arc<CsrGraph>, heads: usize, v: T) -> Self {
        let len = graph.num_edges() * heads;
        Self { graph, heads, data: vec![v; len] }
    }

    pub fn from_data(graph: Arc<CsrGraph>, heads: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != graph.num_edges() * heads {
            return Err(Error::Shape(format!(
                "edge data length {} != {} edges x {heads} heads",
                data.len(),
                graph.num_edges()
            )));
        }
        Ok(Self { graph, heads, data })
    }

    pub fn graph(&self) -> &Arc<CsrGraph> {
        &self.graph
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, edge: usize, head: usize) -> T {
        self.data[edge * self.heads + head]
    }

    pub fn set(&mut self, edge: usize, head: usize, v: T) {
        self.data[edge * self.heads + head] = v;
    }

    /// Number of stored scalars (`E x heads`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values rearranged onto a permuted pattern: slot `perm[e]` of the
    /// result takes this value's edge `e`. Used to move values onto the
    /// transposed pattern returned by [`CsrGraph::transpose`].
    pub fn permute_onto(&self, graph: Arc<CsrGraph>, perm: &[usize]) -> Result<Self> {
        if graph.num_edges() != self.graph.num_edges() || perm.len() != self.graph.num_edges() {
            return Err(Error::Shape("permutation does not match edge count".into()));
        }
        let mut out = Self::zeros(graph, self.heads);
        for e in 0..perm.len() {
            for t in 0..self.heads {
                out.data[perm[e] * self.heads + t] = self.data[e * self.heads + t];
            }
        }
        Ok(out)
    }
}

/// Sampled dense-dense product: for each stored edge `(i -> j)` and head `t`,
/// the dot product of `q[i][t]` with `k[j][t]`. The output pattern is exactly
/// the input pattern.
///
/// `q` is indexed by graph rows and `k` by graph columns, so the same kernel
/// serves full graphs and per-worker row blocks.
pub fn sddmm<T: Scalar>(
    g: &Arc<CsrGraph>,
    q: &HeadedMatrix<T>,
    k: &HeadedMatrix<T>,
) -> Result<EdgeValues<T>> {
    if q.rows() != g.num_rows() || k.rows() != g.num_cols() {
        return Err(Error::Shape(format!(
            "sddmm: q rows {} / k rows {} vs pattern {}x{}",
            q.rows(),
            k.rows(),
            g.num_rows(),
            g.num_cols()
        )));
    }
    if q.heads() != k.heads() || q.head_dim() != k.head_dim() {
        return Err(Error::Shape("sddmm: q/k head layout mismatch".into()));
    }
    census::record_sddmm();
    let heads = q.heads();
    let mut out = EdgeValues::zeros(Arc::clone(g), heads);
    for i in 0..g.num_rows() {
        for e in g.row_edges(i) {
            let j = g.col_idx()[e];
            for t in 0..heads {
                let dot = q
                    .at(i, t)
                    .iter()
                    .zip(k.at(j, t))
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                out.data[e * heads + t] = dot;
            }
        }
    }
    Ok(out)
}

/// Softmax over each row's neighbor set, per head, of `z / scale`.
///
/// The per-row-head maximum is subtracted before exponentiation so large
/// scores cannot overflow. Rows without edges contribute no values.
pub fn edge_softmax<T: Scalar>(z: &EdgeValues<T>, scale: T) -> Result<EdgeValues<T>> {
    if scale <= T::zero() {
        return Err(Error::InvalidArgument(format!("softmax scale {scale} must be > 0")));
    }
    let g = z.graph();
    let heads = z.heads();
    let mut out = EdgeValues::zeros(Arc::clone(g), heads);
    for i in 0..g.num_rows() {
        let edges = g.row_edges(i);
        if edges.is_empty() {
            continue;
        }
        for t in 0..heads {
            let mut max = T::neg_infinity();
            for e in edges.clone() {
                max = max.max(z.get(e, t));
            }
            let mut sum = T::zero();
            for e in edges.clone() {
                let v = ((z.get(e, t) - max) / scale).exp();
                out.set(e, t, v);
                sum += v;
            }
            for e in edges.clone() {
                out.set(e, t, out.get(e, t) / sum);
            }
        }
    }
    Ok(out)
}

/// Sparse x dense product: `out[i][t] = sum over edges (i -> j) of
/// u[e][t] * v[j][t]`. `v` is indexed by pattern columns; the output has one
/// row per pattern row. Accumulation runs in CSR order, so results are
/// bit-reproducible.
pub fn spmm<T: Scalar>(u: &EdgeValues<T>, v: &HeadedMatrix<T>) -> Result<HeadedMatrix<T>> {
    let g = u.graph();
    if v.rows() != g.num_cols() {
        return Err(Error::Shape(format!(
            "spmm: v rows {} vs pattern cols {}",
            v.rows(),
            g.num_cols()
        )));
    }
    if v.heads() != u.heads() {
        return Err(Error::Shape("spmm: head count mismatch".into()));
    }
    census::record_spmm();
    let heads = u.heads();
    let mut out = HeadedMatrix::zeros(g.num_rows(), heads, v.head_dim());
    for i in 0..g.num_rows() {
        for e in g.row_edges(i) {
            let j = g.col_idx()[e];
            for t in 0..heads {
                let w = u.get(e, t);
                let vs = v.at(j, t);
                let os = out.at_mut(i, t);
                for (o, &vv) in os.iter_mut().zip(vs) {
                    *o += w * vv;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::generate::erdos_renyi;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn headed(rows: usize, heads: usize, hd: usize, rng: &mut ChaCha8Rng) -> HeadedMatrix<f64> {
        HeadedMatrix::from_dense(
            DenseMatrix::random_uniform(rows, heads * hd, -1.0, 1.0, rng),
            heads,
        )
        .unwrap()
    }

    fn densify(u: &EdgeValues<f64>, head: usize) -> DenseMatrix<f64> {
        let g = u.graph();
        let mut m = DenseMatrix::zeros(g.num_rows(), g.num_cols());
        for i in 0..g.num_rows() {
            for e in g.row_edges(i) {
                m.set(i, g.col_idx()[e], u.get(e, head));
            }
        }
        m
    }

    #[test]
    fn sddmm_orthogonal_vectors() {
        let g = Arc::new(CsrGraph::from_edges(2, &[(0, 1)]).unwrap());
        let q = HeadedMatrix::from_dense(
            DenseMatrix::from_rows(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
            1,
        )
        .unwrap();
        let k = HeadedMatrix::from_dense(
            DenseMatrix::from_rows(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap(),
            1,
        )
        .unwrap();
        let z = sddmm(&g, &q, &k).unwrap();
        assert_eq!(z.get(0, 0), 0.0);
    }

    #[test]
    fn sddmm_hand_dot_product() {
        let g = Arc::new(CsrGraph::from_edges(2, &[(0, 1)]).unwrap());
        let q = HeadedMatrix::from_dense(
            DenseMatrix::from_rows(2, 2, vec![1.0, 2.0, 0.0, 0.0]).unwrap(),
            1,
        )
        .unwrap();
        let k = HeadedMatrix::from_dense(
            DenseMatrix::from_rows(2, 2, vec![0.0, 0.0, 3.0, 4.0]).unwrap(),
            1,
        )
        .unwrap();
        let z = sddmm(&g, &q, &k).unwrap();
        assert_eq!(z.get(0, 0), 11.0);
    }

    #[test]
    fn sddmm_matches_dense_masked_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let edges = erdos_renyi(10, 3.0, 42);
        let g = Arc::new(CsrGraph::from_edges(10, &edges).unwrap());
        for heads in [1usize, 2] {
            let q = headed(10, heads, 4, &mut rng);
            let k = headed(10, heads, 4, &mut rng);
            let z = sddmm(&g, &q, &k).unwrap();
            for t in 0..heads {
                // (Q K^T) masked by A, computed densely per head.
                for i in 0..10 {
                    for e in g.row_edges(i) {
                        let j = g.col_idx()[e];
                        let want: f64 =
                            q.at(i, t).iter().zip(k.at(j, t)).map(|(a, b)| a * b).sum();
                        assert!((z.get(e, t) - want).abs() < 1e-12);
                    }
                }
                // No fill-in: densified Z is zero off the pattern.
                let dz = densify(&z, t);
                for i in 0..10 {
                    for j in 0..10 {
                        if !g.row(i).contains(&j) {
                            assert_eq!(dz.get(i, j), 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_symmetric_pair() {
        let g = Arc::new(CsrGraph::from_edges(3, &[(0, 1), (0, 2)]).unwrap());
        let z = EdgeValues::constant(Arc::clone(&g), 1, 0.0);
        let u = edge_softmax(&z, 1.0).unwrap();
        assert_eq!(u.get(0, 0), 0.5);
        assert_eq!(u.get(1, 0), 0.5);
    }

    #[test]
    fn softmax_single_edge_normalizes_to_one() {
        let g = Arc::new(CsrGraph::from_edges(2, &[(0, 1)]).unwrap());
        let z = EdgeValues::from_data(Arc::clone(&g), 1, vec![-123.4]).unwrap();
        let u = edge_softmax(&z, 2.0).unwrap();
        assert_eq!(u.get(0, 0), 1.0);
    }

    #[test]
    fn softmax_large_scores_do_not_overflow() {
        let g = Arc::new(CsrGraph::from_edges(3, &[(0, 1), (0, 2)]).unwrap());
        let z = EdgeValues::from_data(Arc::clone(&g), 1, vec![1000.0, 1001.0]).unwrap();
        let u = edge_softmax(&z, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((u.get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((u.get(1, 0) - e / (1.0 + e)).abs() < 1e-15);
        assert!(u.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_nonpositive_scale() {
        let g = Arc::new(CsrGraph::from_edges(2, &[(0, 1)]).unwrap());
        let z = EdgeValues::constant(Arc::clone(&g), 1, 0.0);
        assert!(edge_softmax(&z, 0.0).is_err());
    }

    #[test]
    fn spmm_self_loops_with_unit_weights_is_identity() {
        let edges: Vec<_> = (0..4).map(|i| (i, i)).collect();
        let g = Arc::new(CsrGraph::from_edges(4, &edges).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = headed(4, 2, 3, &mut rng);
        let u = EdgeValues::constant(Arc::clone(&g), 2, 1.0);
        let y = spmm(&u, &v).unwrap();
        assert_eq!(y, v);
    }

    #[test]
    fn spmm_zero_weights_give_zero() {
        let edges = erdos_renyi(6, 2.0, 1);
        let g = Arc::new(CsrGraph::from_edges(6, &edges).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = headed(6, 1, 4, &mut rng);
        let u = EdgeValues::zeros(Arc::clone(&g), 1);
        let y = spmm(&u, &v).unwrap();
        assert!(y.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn spmm_matches_densified_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let edges = erdos_renyi(10, 4.0, 9);
        let g = Arc::new(CsrGraph::from_edges(10, &edges).unwrap());
        let mut u = EdgeValues::zeros(Arc::clone(&g), 1);
        for e in 0..g.num_edges() {
            u.set(e, 0, rng.gen_range(-1.0..1.0));
        }
        let v = headed(10, 1, 3, &mut rng);
        let y = spmm(&u, &v).unwrap();
        let du = densify(&u, 0);
        let dv = DenseMatrix::from_fn(10, 3, |i, j| v.at(i, 0)[j]);
        let want = crate::dense::matmul(&du, &dv).unwrap();
        for i in 0..10 {
            for j in 0..3 {
                assert!((y.at(i, 0)[j] - want.get(i, j)).abs() < 1e-12);
            }
        }
    }
}
