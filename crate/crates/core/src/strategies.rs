//! The two distributed attention executions over the simulated worker group.
//!
//! GP-AG partitions nodes and gathers the full K and V each step (2
//! all-gathers forward, 2 reduce-scatters backward). GP-A2A re-shards the
//! projections from node-partitioned to head-partitioned, computes whole-graph
//! attention for `h/p` heads per worker, and re-shards back (4 all-to-alls
//! forward, 4 backward). Both reproduce the single-worker result; the weight
//! gradients are synchronized with an all-reduce that is booked separately
//! from the attention-block census.
//!
//! Memory accounting: `dense_activation_elems` counts the full-width
//! communication-coupled buffers of one block — the gathered K/V copies plus
//! their gradient staging for GP-AG, and the exchanged Q'/K'/V'/Y' blocks for
//! GP-A2A. `edge_activation_elems` counts the stored attention values, and
//! `graph_storage_elems` the CSR offsets plus indices held per rank.

use std::sync::Arc;

use crate::attention::{
    attention_scale, sga_backward, sga_forward, sparse_attention_backward, SgaGrads, SgaWeights,
};
use crate::collectives::{run_workers, CommLedger, ConcatAxis, WorkerGroup};
use crate::dense::{matmul, DenseMatrix, HeadedMatrix};
use crate::error::{Error, Result};
use crate::graph::CsrGraph;
use crate::partition::{plan_partition, shard_gp_a2a, shard_gp_ag, PartitionPlan, ShardGpA2a, ShardGpAg};
use crate::scalar::Scalar;
use crate::sparse::{edge_softmax, sddmm, spmm, EdgeValues};

/// Execution strategy. `SingleWorker` is the oracle configuration (p = 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum StrategyKind {
    SingleWorker,
    GpAg,
    GpA2a,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::SingleWorker => "single",
            StrategyKind::GpAg => "gp-ag",
            StrategyKind::GpA2a => "gp-a2a",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(StrategyKind::SingleWorker),
            "gp-ag" => Ok(StrategyKind::GpAg),
            "gp-a2a" => Ok(StrategyKind::GpA2a),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-rank memory telemetry for one attention block (see module docs for
/// what each column counts).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryMeter {
    pub dense_activation_elems: usize,
    pub edge_activation_elems: usize,
    pub graph_storage_elems: usize,
}

/// One line of the memory report.
#[derive(Clone, Copy, Debug)]
pub struct MemoryRow {
    pub rank: usize,
    pub strategy: StrategyKind,
    pub meter: MemoryMeter,
}

/// Report format: `rank,strategy,dense_activation_elems,edge_activation_elems,graph_storage_elems`.
pub fn memory_report(rows: &[MemoryRow]) -> String {
    let mut out = String::from(
        "rank,strategy,dense_activation_elems,edge_activation_elems,graph_storage_elems\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rank,
            r.strategy,
            r.meter.dense_activation_elems,
            r.meter.edge_activation_elems,
            r.meter.graph_storage_elems
        ));
    }
    out
}

/// Retained per-rank state of a GP-AG forward pass.
#[derive(Clone, Debug)]
pub struct GpAgCache<T> {
    x: DenseMatrix<T>,
    q: HeadedMatrix<T>,
    k_all: HeadedMatrix<T>,
    v_all: HeadedMatrix<T>,
    u: EdgeValues<T>,
    weights: SgaWeights<T>,
    plan: PartitionPlan,
    meter: MemoryMeter,
}

/// Retained per-rank state of a GP-A2A forward pass (head-sliced copies).
#[derive(Clone, Debug)]
pub struct GpA2aCache<T> {
    x: DenseMatrix<T>,
    q: HeadedMatrix<T>,
    k: HeadedMatrix<T>,
    v: HeadedMatrix<T>,
    u: EdgeValues<T>,
    weights: SgaWeights<T>,
    plan: PartitionPlan,
    meter: MemoryMeter,
}

/// Strategy-tagged cache, for callers that dispatch dynamically.
#[derive(Clone, Debug)]
pub enum DistSgaCache<T> {
    GpAg(GpAgCache<T>),
    GpA2a(GpA2aCache<T>),
}

impl<T> DistSgaCache<T> {
    pub fn meter(&self) -> MemoryMeter {
        match self {
            DistSgaCache::GpAg(c) => c.meter,
            DistSgaCache::GpA2a(c) => c.meter,
        }
    }
}

/// Column blocks of `m`, one per head group of `p` groups. Head group `j`
/// occupies a contiguous column range in the dense layout.
fn split_head_groups<T: Scalar>(m: &DenseMatrix<T>, p: usize) -> Vec<DenseMatrix<T>> {
    let width = m.cols() / p;
    (0..p).map(|j| m.col_slice(j * width, (j + 1) * width)).collect()
}

/// Row blocks of `m` following the partition plan.
fn split_row_blocks<T: Scalar>(m: &DenseMatrix<T>, plan: &PartitionPlan) -> Vec<DenseMatrix<T>> {
    (0..plan.num_parts())
        .map(|j| {
            let r = plan.range(j);
            m.row_slice(r.start, r.end)
        })
        .collect()
}

/// GP-AG forward for one rank: local projections, gather K, masked scores
/// against the gathered keys, neighborhood softmax, gather V, aggregate, add
/// the residual projection on the owned rows.
pub fn gp_ag_forward<T: Scalar>(
    group: &WorkerGroup<T>,
    rank: usize,
    shard: &ShardGpAg<T>,
    weights: &SgaWeights<T>,
    heads: usize,
) -> Result<(DenseMatrix<T>, GpAgCache<T>)> {
    let d = weights.dim();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("head count {heads} must divide dim {d}")));
    }
    let x = &shard.features;
    let q = matmul(x, &weights.w_q)?;
    let k = matmul(x, &weights.w_k)?;
    let v = matmul(x, &weights.w_v)?;

    let k_all = group.all_gather(rank, k)?;
    let q = HeadedMatrix::from_dense(q, heads)?;
    let k_all = HeadedMatrix::from_dense(k_all, heads)?;
    let z = sddmm(&shard.graph, &q, &k_all)?;
    let u = edge_softmax(&z, attention_scale::<T>(d))?;
    let v_all = HeadedMatrix::from_dense(group.all_gather(rank, v)?, heads)?;
    let y = spmm(&u, &v_all)?;

    let mut out = matmul(x, &weights.w_o)?;
    out.add_assign(&y.to_dense())?;

    let meter = MemoryMeter {
        dense_activation_elems: k_all.data().len() + v_all.data().len(),
        edge_activation_elems: u.len(),
        graph_storage_elems: shard.graph_storage_elems(),
    };
    let cache = GpAgCache {
        x: x.clone(),
        q,
        k_all,
        v_all,
        u,
        weights: weights.clone(),
        plan: shard.plan.clone(),
        meter,
    };
    Ok((out, cache))
}

/// GP-AG backward for one rank. The gathered K/V gradients are summed back
/// to their owners with the two reduce-scatters that mirror the forward
/// gathers; weight gradients are synchronized with an all-reduce.
pub fn gp_ag_backward<T: Scalar>(
    group: &WorkerGroup<T>,
    rank: usize,
    grad_local: &DenseMatrix<T>,
    cache: GpAgCache<T>,
) -> Result<(SgaGrads<T>, MemoryMeter)> {
    let d = cache.weights.dim();
    if grad_local.rows() != cache.x.rows() || grad_local.cols() != d {
        return Err(Error::State(format!(
            "cotangent {}x{} does not match local output {}x{}",
            grad_local.rows(),
            grad_local.cols(),
            cache.x.rows(),
            d
        )));
    }
    let mut meter = cache.meter;
    let xt = cache.x.transpose();
    let mut w_o_grad = matmul(&xt, grad_local)?;
    let mut x_grad = matmul(grad_local, &cache.weights.w_o.transpose())?;

    let dy = HeadedMatrix::from_dense(grad_local.clone(), cache.q.heads())?;
    let sb = sparse_attention_backward(
        &dy,
        &cache.q,
        &cache.k_all,
        &cache.v_all,
        &cache.u,
        attention_scale::<T>(d),
    )?;
    let dq = sb.dq.to_dense();
    let dk_all = sb.dk_cols.to_dense();
    let dv_all = sb.dv_cols.to_dense();
    // Both full-width gradient buffers are staged before the scatters; this
    // is the 2Nd of backward staging the memory model charges to GP-AG.
    meter.dense_activation_elems += dk_all.len() + dv_all.len();
    let dv_local = group.reduce_scatter(rank, dv_all, &cache.plan)?;
    let dk_local = group.reduce_scatter(rank, dk_all, &cache.plan)?;

    let mut w_q_grad = matmul(&xt, &dq)?;
    let mut w_k_grad = matmul(&xt, &dk_local)?;
    let mut w_v_grad = matmul(&xt, &dv_local)?;
    x_grad.add_assign(&matmul(&dq, &cache.weights.w_q.transpose())?)?;
    x_grad.add_assign(&matmul(&dk_local, &cache.weights.w_k.transpose())?)?;
    x_grad.add_assign(&matmul(&dv_local, &cache.weights.w_v.transpose())?)?;

    w_q_grad = group.all_reduce(rank, w_q_grad)?;
    w_k_grad = group.all_reduce(rank, w_k_grad)?;
    w_v_grad = group.all_reduce(rank, w_v_grad)?;
    w_o_grad = group.all_reduce(rank, w_o_grad)?;

    Ok((
        SgaGrads { x: x_grad, w_q: w_q_grad, w_k: w_k_grad, w_v: w_v_grad, w_o: w_o_grad },
        meter,
    ))
}

/// GP-A2A forward for one rank: local projections, three all-to-alls that
/// convert node partitioning into head partitioning, whole-graph attention
/// on `h/p` heads, and a final all-to-all back to node partitioning.
pub fn gp_a2a_forward<T: Scalar>(
    group: &WorkerGroup<T>,
    rank: usize,
    shard: &ShardGpA2a<T>,
    weights: &SgaWeights<T>,
    heads: usize,
) -> Result<(DenseMatrix<T>, GpA2aCache<T>)> {
    let d = weights.dim();
    let p = group.size();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("head count {heads} must divide dim {d}")));
    }
    if heads % p != 0 {
        return Err(Error::Config(format!(
            "h not divisible by p: {heads} heads over {p} workers"
        )));
    }
    let local_heads = heads / p;
    let x = &shard.features;
    let q = matmul(x, &weights.w_q)?;
    let k = matmul(x, &weights.w_k)?;
    let v = matmul(x, &weights.w_v)?;

    // [(N/p), h, d'] -> [N, h/p, d']: split by head group, concat by rows.
    let q_x = group.all_to_all(rank, split_head_groups(&q, p), ConcatAxis::Rows)?;
    let k_x = group.all_to_all(rank, split_head_groups(&k, p), ConcatAxis::Rows)?;
    let v_x = group.all_to_all(rank, split_head_groups(&v, p), ConcatAxis::Rows)?;
    let q_x = HeadedMatrix::from_dense(q_x, local_heads)?;
    let k_x = HeadedMatrix::from_dense(k_x, local_heads)?;
    let v_x = HeadedMatrix::from_dense(v_x, local_heads)?;

    let z = sddmm(&shard.graph, &q_x, &k_x)?;
    let u = edge_softmax(&z, attention_scale::<T>(d))?;
    let y_x = spmm(&u, &v_x)?.to_dense();

    let meter = MemoryMeter {
        dense_activation_elems: q_x.data().len()
            + k_x.data().len()
            + v_x.data().len()
            + y_x.len(),
        edge_activation_elems: u.len(),
        graph_storage_elems: shard.graph_storage_elems(),
    };

    // [N, h/p, d'] -> [(N/p), h, d']: split by owner rows, concat by heads.
    let y_local = group.all_to_all(rank, split_row_blocks(&y_x, &shard.plan), ConcatAxis::Cols)?;

    let mut out = matmul(x, &weights.w_o)?;
    out.add_assign(&y_local)?;

    let cache = GpA2aCache {
        x: x.clone(),
        q: q_x,
        k: k_x,
        v: v_x,
        u,
        weights: weights.clone(),
        plan: shard.plan.clone(),
        meter,
    };
    Ok((out, cache))
}

/// GP-A2A backward for one rank: each forward all-to-all is mirrored by one
/// with the transposed send/receive pattern, for four here and eight per
/// block in total.
pub fn gp_a2a_backward<T: Scalar>(
    group: &WorkerGroup<T>,
    rank: usize,
    grad_local: &DenseMatrix<T>,
    cache: GpA2aCache<T>,
) -> Result<(SgaGrads<T>, MemoryMeter)> {
    let d = cache.weights.dim();
    let p = group.size();
    if grad_local.rows() != cache.x.rows() || grad_local.cols() != d {
        return Err(Error::State(format!(
            "cotangent {}x{} does not match local output {}x{}",
            grad_local.rows(),
            grad_local.cols(),
            cache.x.rows(),
            d
        )));
    }
    let meter = cache.meter;
    let xt = cache.x.transpose();
    let mut w_o_grad = matmul(&xt, grad_local)?;
    let mut x_grad = matmul(grad_local, &cache.weights.w_o.transpose())?;

    // Adjoint of the output re-shard: back to [N, h/p, d'].
    let dy = group.all_to_all(rank, split_head_groups(grad_local, p), ConcatAxis::Rows)?;
    let dy = HeadedMatrix::from_dense(dy, cache.q.heads())?;
    let sb = sparse_attention_backward(
        &dy,
        &cache.q,
        &cache.k,
        &cache.v,
        &cache.u,
        attention_scale::<T>(d),
    )?;

    // Adjoints of the three projection re-shards: back to [(N/p), h, d'].
    let dq_local =
        group.all_to_all(rank, split_row_blocks(&sb.dq.to_dense(), &cache.plan), ConcatAxis::Cols)?;
    let dk_local = group.all_to_all(
        rank,
        split_row_blocks(&sb.dk_cols.to_dense(), &cache.plan),
        ConcatAxis::Cols,
    )?;
    let dv_local = group.all_to_all(
        rank,
        split_row_blocks(&sb.dv_cols.to_dense(), &cache.plan),
        ConcatAxis::Cols,
    )?;

    let mut w_q_grad = matmul(&xt, &dq_local)?;
    let mut w_k_grad = matmul(&xt, &dk_local)?;
    let mut w_v_grad = matmul(&xt, &dv_local)?;
    x_grad.add_assign(&matmul(&dq_local, &cache.weights.w_q.transpose())?)?;
    x_grad.add_assign(&matmul(&dk_local, &cache.weights.w_k.transpose())?)?;
    x_grad.add_assign(&matmul(&dv_local, &cache.weights.w_v.transpose())?)?;

    w_q_grad = group.all_reduce(rank, w_q_grad)?;
    w_k_grad = group.all_reduce(rank, w_k_grad)?;
    w_v_grad = group.all_reduce(rank, w_v_grad)?;
    w_o_grad = group.all_reduce(rank, w_o_grad)?;

    Ok((
        SgaGrads { x: x_grad, w_q: w_q_grad, w_k: w_k_grad, w_v: w_v_grad, w_o: w_o_grad },
        meter,
    ))
}

/// Strategy-dispatched forward over an already-built shard pair.
pub fn dist_forward<T: Scalar>(
    kind: StrategyKind,
    group: &WorkerGroup<T>,
    rank: usize,
    ag_shard: Option<&ShardGpAg<T>>,
    a2a_shard: Option<&ShardGpA2a<T>>,
    weights: &SgaWeights<T>,
    heads: usize,
) -> Result<(DenseMatrix<T>, DistSgaCache<T>)> {
    match kind {
        StrategyKind::GpAg => {
            let shard = ag_shard.ok_or_else(|| Error::State("missing GP-AG shard".into()))?;
            let (y, c) = gp_ag_forward(group, rank, shard, weights, heads)?;
            Ok((y, DistSgaCache::GpAg(c)))
        }
        StrategyKind::GpA2a => {
            let shard = a2a_shard.ok_or_else(|| Error::State("missing GP-A2A shard".into()))?;
            let (y, c) = gp_a2a_forward(group, rank, shard, weights, heads)?;
            Ok((y, DistSgaCache::GpA2a(c)))
        }
        StrategyKind::SingleWorker => Err(Error::Config(
            "single-worker execution does not run on a worker group".into(),
        )),
    }
}

/// Strategy-dispatched backward matching [`dist_forward`].
pub fn dist_backward<T: Scalar>(
    group: &WorkerGroup<T>,
    rank: usize,
    grad_local: &DenseMatrix<T>,
    cache: DistSgaCache<T>,
) -> Result<(SgaGrads<T>, MemoryMeter)> {
    match cache {
        DistSgaCache::GpAg(c) => gp_ag_backward(group, rank, grad_local, c),
        DistSgaCache::GpA2a(c) => gp_a2a_backward(group, rank, grad_local, c),
    }
}

/// Result of one full-block distributed run.
#[derive(Debug)]
pub struct DistRun<T> {
    /// Row-concatenated forward output, `N x d`.
    pub output: DenseMatrix<T>,
    /// Present when a cotangent was supplied: feature gradient over all rows
    /// plus the all-reduced weight gradients.
    pub grads: Option<SgaGrads<T>>,
    pub ledger: CommLedger,
    pub memory: Vec<MemoryRow>,
}

/// Orchestrator: partition, spawn `p` workers, run forward (and backward
/// when `grad_out` is given), and collect output, ledger, and memory report.
///
/// With `p = 1` the block runs directly on the calling thread with no worker
/// group, so the ledger is empty and the census vacuous, whatever the
/// requested strategy.
pub fn run_distributed<T: Scalar>(
    kind: StrategyKind,
    g: &Arc<CsrGraph>,
    x: &DenseMatrix<T>,
    weights: &SgaWeights<T>,
    heads: usize,
    p: usize,
    grad_out: Option<&DenseMatrix<T>>,
) -> Result<DistRun<T>> {
    if kind == StrategyKind::SingleWorker && p != 1 {
        return Err(Error::Config(format!("single-worker strategy requires p=1, got p={p}")));
    }
    if p == 1 {
        let (output, cache) = sga_forward(x, g, weights, heads)?;
        let meter = MemoryMeter {
            dense_activation_elems: 3 * x.len(),
            edge_activation_elems: g.num_edges() * heads,
            graph_storage_elems: g.storage_elems(),
        };
        let grads = match grad_out {
            Some(gout) => Some(sga_backward(gout, &cache)?),
            None => None,
        };
        return Ok(DistRun {
            output,
            grads,
            ledger: CommLedger::default(),
            memory: vec![MemoryRow { rank: 0, strategy: kind, meter }],
        });
    }

    let plan = plan_partition(g.num_nodes(), p)?;
    type RankOut<T> = (DenseMatrix<T>, Option<SgaGrads<T>>, MemoryMeter);
    let (ranks, ledger): (Vec<RankOut<T>>, CommLedger) = run_workers(p, |rank, group| {
        let (y_local, cache) = match kind {
            StrategyKind::GpAg => {
                let shard = shard_gp_ag(g, x, &plan, rank)?;
                let (y, c) = gp_ag_forward(group.as_ref(), rank, &shard, weights, heads)?;
                (y, DistSgaCache::GpAg(c))
            }
            StrategyKind::GpA2a => {
                let shard = shard_gp_a2a(g, x, &plan, rank)?;
                let (y, c) = gp_a2a_forward(group.as_ref(), rank, &shard, weights, heads)?;
                (y, DistSgaCache::GpA2a(c))
            }
            StrategyKind::SingleWorker => unreachable!("p=1 handled above"),
        };
        match grad_out {
            Some(gout) => {
                let r = plan.range(rank);
                let grad_local = gout.row_slice(r.start, r.end);
                let (grads, meter) = dist_backward(group.as_ref(), rank, &grad_local, cache)?;
                Ok((y_local, Some(grads), meter))
            }
            None => {
                let meter = cache.meter();
                Ok((y_local, None, meter))
            }
        }
    })?;

    let output =
        DenseMatrix::concat_rows(&ranks.iter().map(|(y, _, _)| y.clone()).collect::<Vec<_>>())?;
    let memory = ranks
        .iter()
        .enumerate()
        .map(|(rank, (_, _, meter))| MemoryRow { rank, strategy: kind, meter: *meter })
        .collect();
    let grads = if grad_out.is_some() {
        let x_grad = DenseMatrix::concat_rows(
            &ranks
                .iter()
                .map(|(_, g, _)| g.as_ref().expect("backward ran").x.clone())
                .collect::<Vec<_>>(),
        )?;
        let first = ranks[0].1.as_ref().expect("backward ran");
        Some(SgaGrads {
            x: x_grad,
            w_q: first.w_q.clone(),
            w_k: first.w_k.clone(),
            w_v: first.w_v.clone(),
            w_o: first.w_o.clone(),
        })
    } else {
        None
    };

    Ok(DistRun { output, grads, ledger, memory })
}
