//! Contiguous node partitioning and per-worker shards for the two
//! distribution strategies.
//!
//! Partitioning is by node-ID block, not edge-cut: both strategies gather or
//! exchange the same volume regardless of cut size, so balance in node count
//! is all that matters here.

use std::sync::Arc;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::scalar::Scalar;

/// Contiguous balanced node ranges: `boundaries` has `num_parts + 1` offsets,
/// part sizes differ by at most one, and the first `n mod p` parts take the
/// extra row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    num_nodes: usize,
    boundaries: Vec<usize>,
}

impl PartitionPlan {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_parts(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn range(&self, part: usize) -> std::ops::Range<usize> {
        self.boundaries[part]..self.boundaries[part + 1]
    }

    pub fn part_size(&self, part: usize) -> usize {
        self.boundaries[part + 1] - self.boundaries[part]
    }

    /// The part owning a node.
    pub fn owner(&self, node: usize) -> usize {
        match self.boundaries.binary_search(&node) {
            Ok(b) => b.min(self.num_parts() - 1),
            Err(ins) => ins - 1,
        }
    }
}

/// Balanced contiguous partition of `[0, n)` into `p` parts.
pub fn plan_partition(n: usize, p: usize) -> Result<PartitionPlan> {
    if p == 0 || p > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} nodes into {p} parts"
        )));
    }
    let base = n / p;
    let extra = n % p;
    let mut boundaries = Vec::with_capacity(p + 1);
    let mut at = 0;
    boundaries.push(0);
    for part in 0..p {
        at += base + usize::from(part < extra);
        boundaries.push(at);
    }
    Ok(PartitionPlan { num_nodes: n, boundaries })
}

/// Per-worker shard for the all-gather strategy: the owned row block of the
/// graph (column space still spans all nodes) and the owned feature rows.
#[derive(Clone, Debug)]
pub struct ShardGpAg<T> {
    pub rank: usize,
    pub rows: std::ops::Range<usize>,
    pub plan: PartitionPlan,
    pub graph: Arc<CsrGraph>,
    pub features: DenseMatrix<T>,
}

impl<T: Scalar> ShardGpAg<T> {
    /// Stored pattern elements: one offset per owned row plus the owned edges.
    pub fn graph_storage_elems(&self) -> usize {
        self.graph.storage_elems()
    }

    /// Same shard structure with the feature rows replaced; used by the
    /// layered model where layer l+1 consumes layer l's local output.
    pub fn with_features(&self, features: DenseMatrix<T>) -> Self {
        Self { features, graph: Arc::clone(&self.graph), ..self.clone() }
    }
}

/// Per-worker shard for the all-to-all strategy: a full replica of the graph
/// plus the owned feature rows; the head range is taken after the exchange.
#[derive(Clone, Debug)]
pub struct ShardGpA2a<T> {
    pub rank: usize,
    pub rows: std::ops::Range<usize>,
    pub plan: PartitionPlan,
    pub graph: Arc<CsrGraph>,
    pub features: DenseMatrix<T>,
}

impl<T: Scalar> ShardGpA2a<T> {
    pub fn graph_storage_elems(&self) -> usize {
        self.graph.storage_elems()
    }

    pub fn with_features(&self, features: DenseMatrix<T>) -> Self {
        Self { features, graph: Arc::clone(&self.graph), ..self.clone() }
    }
}

/// Build rank `rank`'s all-gather shard.
pub fn shard_gp_ag<T: Scalar>(
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    plan: &PartitionPlan,
    rank: usize,
) -> Result<ShardGpAg<T>> {
    check_shard_args(g, x, plan, rank)?;
    let range = plan.range(rank);
    Ok(ShardGpAg {
        rank,
        rows: range.clone(),
        plan: plan.clone(),
        graph: Arc::new(g.row_block(range.start, range.end)),
        features: x.row_slice(range.start, range.end),
    })
}

/// Build rank `rank`'s all-to-all shard. The graph replica is shared, not
/// copied per rank.
pub fn shard_gp_a2a<T: Scalar>(
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    plan: &PartitionPlan,
    rank: usize,
) -> Result<ShardGpA2a<T>> {
    check_shard_args(g, x, plan, rank)?;
    let range = plan.range(rank);
    Ok(ShardGpA2a {
        rank,
        rows: range.clone(),
        plan: plan.clone(),
        graph: Arc::clone(g),
        features: x.row_slice(range.start, range.end),
    })
}

fn check_shard_args<T: Scalar>(
    g: &CsrGraph,
    x: &DenseMatrix<T>,
    plan: &PartitionPlan,
    rank: usize,
) -> Result<()> {
    if plan.num_nodes() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "plan over {} nodes vs graph with {}",
            plan.num_nodes(),
            g.num_nodes()
        )));
    }
    if x.rows() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "features have {} rows vs graph with {} nodes",
            x.rows(),
            g.num_nodes()
        )));
    }
    if rank >= plan.num_parts() {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} out of range for {} parts",
            plan.num_parts()
        )));
    }
    Ok(())
}
